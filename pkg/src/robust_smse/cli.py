"""Command-line front end: ``energy``, ``sweep`` and ``validate``.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import __version__
from .channel import SystemConfig
from .energy import AllocationPolicy, optimal_training_energy, policy_split
from .errors import ConfigurationError, DomainError
from .montecarlo import DEFAULT_DATA_CAP, default_workers, run_sweep
from .validation import mutated_closed_form, run_validation

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

DEFAULT_CONFIG = {"M": 4, "K": 2, "N_k": [2, 2], "L_k": [2, 2], "n": 1000, "alpha": 1.0,
                  "sigma_H2": 1.0, "n_T": None}
DEFAULT_ENERGY_SNR = [float(s) for s in range(-10, 21)]
DEFAULT_SWEEP_SNR = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]


def load_config(path: Optional[str], block_length: Optional[int] = None) -> dict:
    """Scenario dictionary from a JSON file, defaults filled in."""
    cfg = dict(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: expected a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    if block_length is not None:
        cfg["n"] = block_length
    system_config(cfg)
    return cfg


def system_config(cfg: dict, n: Optional[int] = None) -> SystemConfig:
    """``SystemConfig`` with ``E_max = alpha n``; the noise power is set per SNR point."""
    n = int(cfg["n"] if n is None else n)
    try:
        return SystemConfig(M=int(cfg["M"]), K=int(cfg["K"]), N_k=cfg["N_k"], L_k=cfg["L_k"], n=n,
                            E_max=float(cfg["alpha"]) * n, sigma_H2=float(cfg["sigma_H2"]),
                            n_T=None if cfg["n_T"] is None else int(cfg["n_T"]))
    except (TypeError, KeyError) as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad number list {text!r}") from exc


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad integer list {text!r}") from exc


def _emit(records: list, columns: list, fmt: str, out: Optional[str]) -> str:
    if fmt == "json":
        text = json.dumps(records, indent=1) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])
        text = buf.getvalue()
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)
    return text


def _write_manifest(out: str, manifest: dict) -> str:
    path = out + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


ENERGY_COLUMNS = ["n", "snr", "P_T_star", "E_T_star", "below_threshold", "P_T_equal"]


def energy_table(cfg: dict, n_list: list, snr_db: list) -> list:
    """Optimal training power per (block length, SNR in dB); no Monte Carlo."""
    rows = []
    for n in n_list:
        sc = system_config(cfg, n)
        for s in snr_db:
            sigma_n2 = sc.P_avg / 10.0 ** (s / 10.0)
            opt = optimal_training_energy(sc.E_max, sc.M, sc.n_D, sigma_n2, sc.sigma_H2)
            eq = policy_split(AllocationPolicy.equal(), sc.E_max, sc.M, sc.n_D, sigma_n2, sc.sigma_H2, sc.n_T)
            rows.append({"n": n, "snr": float(s), "P_T_star": opt.P_T, "E_T_star": opt.E_T,
                         "below_threshold": int(opt.below_threshold), "P_T_equal": eq.P_T})
    return rows


def cmd_energy(args) -> int:
    cfg = load_config(args.config)
    n_list = _int_list(args.block_length)
    snr_db = _float_list(args.snr) if args.snr else DEFAULT_ENERGY_SNR
    started = _now()
    rows = energy_table(cfg, n_list, snr_db)
    _emit(rows, ENERGY_COLUMNS, args.format, args.out)
    if args.out:
        _write_manifest(args.out, {"subcommand": "energy", "config": cfg, "block_length": n_list,
                                   "snr_db": snr_db, "format": args.format, "outputs": [args.out],
                                   "version": __version__, "started": started, "finished": _now()})
    return EXIT_OK


SWEEP_COLUMNS = ["snr_db", "policy", "metric", "mean", "stderr", "trials"]


def sweep_parameters(args) -> dict:
    """Everything that determines the sweep output, from flags or a manifest."""
    if args.manifest:
        with open(args.manifest) as fh:
            m = json.load(fh)
        if m.get("subcommand") != "sweep":
            raise ConfigurationError(f"{args.manifest} is not a sweep manifest")
        return {k: m[k] for k in ("config", "seed", "trials", "snr_db", "policies", "data_cap", "format")}
    snr = _float_list(args.snr) if args.snr else DEFAULT_SWEEP_SNR
    return {
        "config": load_config(args.config, args.block_length),
        "seed": args.seed,
        "trials": args.trials,
        "snr_db": snr,
        "policies": [p.strip() for p in args.policy.split(",") if p.strip()],
        "data_cap": None if args.data_cap <= 0 else args.data_cap,
        "format": args.format,
    }


def cmd_sweep(args) -> int:
    params = sweep_parameters(args)
    if args.manifest and args.format_given:
        params["format"] = args.format
    sc = system_config(params["config"])
    policies = [AllocationPolicy.parse(p) for p in params["policies"]]
    if params["trials"] < 1:
        raise ConfigurationError("--trials must be at least 1")
    workers = args.workers if args.workers is not None else default_workers()
    started, t0 = _now(), time.perf_counter()
    report = run_sweep(sc, params["snr_db"], policies, params["trials"], params["seed"],
                       workers=workers, data_cap=params["data_cap"])
    _emit(report.to_records(), SWEEP_COLUMNS, params["format"], args.out)
    if args.out:
        manifest = dict(params, subcommand="sweep", outputs=[args.out], version=__version__,
                        workers=workers, seed_ranges=report.seed_ranges(), started=started,
                        finished=_now(), seconds=round(time.perf_counter() - t0, 3))
        _write_manifest(args.out, manifest)
    return EXIT_OK


def cmd_validate(args) -> int:
    closed_form = mutated_closed_form if args.mutate == "sqrt-m" else None
    results = run_validation(args.level, seed=args.seed, closed_form=closed_form)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.2f} s)")
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "validation FAILED")
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-smse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON scenario file (keys M, K, N_k, L_k, n, alpha, sigma_H2, n_T)")
        sp.add_argument("--snr", help="comma-separated SNR values in dB")
        sp.add_argument("--out", help="output file (default stdout); a manifest is written next to it")
        sp.add_argument("--format", choices=("csv", "json"), default=None)

    e = sub.add_parser("energy", help="optimal training power table")
    common(e)
    e.add_argument("--block-length", default="10,100,1000", help="comma-separated block lengths")
    e.set_defaults(func=cmd_energy)

    s = sub.add_parser("sweep", help="Monte-Carlo SMSE/BER sweep")
    common(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--workers", type=int, default=None, help="default: $ROBUST_SMSE_WORKERS or 1")
    s.add_argument("--block-length", type=int, default=None)
    s.add_argument("--policy", default="optimal,equal", help="comma list of optimal, equal, fixed:<E_T>")
    s.add_argument("--data-cap", type=int, default=DEFAULT_DATA_CAP,
                   help="simulated data symbols per block, <= 0 for all")
    s.add_argument("--manifest", help="rerun exactly the sweep recorded in this manifest")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="run the oracle check suite")
    v.add_argument("--level", choices=("quick", "full"), default="quick")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--mutate", choices=("sqrt-m",), help="swap in a deliberately wrong closed form")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if hasattr(args, "format"):
        args.format_given = args.format is not None
        args.format = args.format or "csv"
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, KeyError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
