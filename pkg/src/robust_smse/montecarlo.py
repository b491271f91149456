"""Full-link Monte-Carlo trials: pilots, estimation, energy split, precoding,
QPSK transmission over the true channel, detection."""

from __future__ import annotations

import io
import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import _rng
from .channel import SystemConfig, draw_channel
from .energy import AllocationPolicy, policy_split
from .errors import FramingError
from .precoder import duality_transform, solve_min_smse
from .training import PilotKind, build_training_matrix, mmse_estimate, simulate_training

__all__ = [
    "qpsk_modulate",
    "qpsk_demodulate",
    "TrialResult",
    "CellStats",
    "SweepReport",
    "run_trial",
    "run_sweep",
    "snr_at_ber",
    "DEFAULT_DATA_CAP",
]

DEFAULT_DATA_CAP = 500
_SQRT_HALF = math.sqrt(0.5)


def qpsk_modulate(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK; bit pairs ``(b0, b1)`` set the signs of
    the real and imaginary parts (0 -> +, 1 -> -).  Works along the last axis."""
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape[-1] % 2:
        raise FramingError("QPSK needs an even number of bits")
    b = bits.reshape(bits.shape[:-1] + (-1, 2))
    return _SQRT_HALF * ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1]))


def qpsk_demodulate(symbols) -> np.ndarray:
    """Quadrant decisions; a component exactly on an axis decodes to 0."""
    s = np.asarray(symbols)
    b = np.stack([s.real < 0, s.imag < 0], axis=-1).astype(np.int8)
    return b.reshape(b.shape[:-2] + (-1,))


@dataclass(frozen=True)
class TrialResult:
    empirical_smse: float
    ber: float
    E_T_used: float
    P_D_used: float
    design_smse: float
    sigma_eff2: float
    no_communication: bool
    zero_power_streams: int
    seed: int


def run_trial(config: SystemConfig, snr: float, policy: AllocationPolicy, seed: int,
              data_cap: Optional[int] = DEFAULT_DATA_CAP, perfect_csi: bool = False) -> TrialResult:
    """One coherence block at average transmit SNR ``snr`` (linear).

    The noise power is ``P_avg / snr`` with ``P_avg = E_max / n``.  At most
    ``data_cap`` of the ``n_D`` data symbol periods are simulated; the
    energy split always uses the full ``n_D``.  ``perfect_csi`` hands the
    true channel to the transmitter with zero error variance.
    """
    cfg = config.replace(sigma_n2=config.P_avg / snr)
    split = policy_split(policy, cfg.E_max, cfg.M, cfg.n_D, cfg.sigma_n2, cfg.sigma_H2, cfg.n_T)

    H = draw_channel(cfg, _rng.stream(seed, _rng.CHANNEL)).H
    X_T = build_training_matrix(PilotKind.SCALED_IDENTITY, split.E_T, cfg.M, cfg.n_T)
    Y_T = simulate_training(H, X_T, cfg.sigma_n2, _rng.stream(seed, _rng.TRAINING_NOISE))
    est = mmse_estimate(Y_T, X_T, cfg.sigma_H2, cfg.sigma_n2)
    if perfect_csi:
        H_hat, sigma_e2 = H, 0.0
    else:
        H_hat, sigma_e2 = est.H_hat, est.sigma_e2
    sigma_eff2 = cfg.sigma_n2 + split.P_D * sigma_e2

    no_comm = split.P_D <= 0 or not np.any(H_hat)
    n_sim = cfg.n_D if data_cap is None else min(cfg.n_D, data_cap)
    bits = _rng.stream(seed, _rng.DATA_BITS).integers(0, 2, size=(cfg.L, 2 * n_sim), dtype=np.int8)
    x = qpsk_modulate(bits)
    noise = _rng.crandn(_rng.stream(seed, _rng.DATA_NOISE), (cfg.N, n_sim), cfg.sigma_n2)

    if no_comm:
        x_hat = np.zeros_like(x)
        design, zero_streams = float(cfg.L), cfg.L
    else:
        sol = solve_min_smse(H_hat, split.P_D, sigma_eff2, cfg)
        dl = duality_transform(sol, H_hat, sigma_eff2)
        tx = (dl.U_dl * np.sqrt(dl.p)) @ x
        x_hat = dl.B.conj().T @ (H @ tx + noise)
        design, zero_streams = sol.smse, int(dl.dropped.sum())

    err = x_hat - x
    emp = float(np.mean(np.sum(err.real ** 2 + err.imag ** 2, axis=0)))
    ber = float(np.mean(qpsk_demodulate(x_hat) != bits))
    return TrialResult(empirical_smse=emp, ber=ber, E_T_used=split.E_T, P_D_used=split.P_D,
                       design_smse=design, sigma_eff2=sigma_eff2, no_communication=bool(no_comm),
                       zero_power_streams=zero_streams, seed=seed)


@dataclass
class CellStats:
    """All trials of one (SNR, policy) cell, in trial-index order."""

    snr_db: float
    policy: str
    results: list = field(repr=False)

    @property
    def trials(self) -> int:
        return len(self.results)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.results], dtype=float)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values(metric)))

    def stderr(self, metric: str) -> float:
        v = self.values(metric)
        if len(v) < 2:
            return 0.0
        return float(np.std(v, ddof=1) / math.sqrt(len(v)))


METRICS = {"smse": "empirical_smse", "ber": "ber", "design_smse": "design_smse"}


@dataclass
class SweepReport:
    snr_db: list
    policies: list
    cells: dict
    config: SystemConfig
    seed: int
    trials: int
    data_cap: Optional[int]

    def cell(self, snr_db: float, policy: str) -> CellStats:
        return self.cells[(self.snr_db.index(snr_db), policy)]

    def curve(self, policy: str, metric: str = "ber") -> np.ndarray:
        attr = METRICS.get(metric, metric)
        return np.array([self.cells[(i, policy)].mean(attr) for i in range(len(self.snr_db))])

    def rows(self):
        for i, snr in enumerate(self.snr_db):
            for pol in self.policies:
                c = self.cells[(i, pol)]
                for name, attr in METRICS.items():
                    yield {"snr_db": snr, "policy": pol, "metric": name, "mean": c.mean(attr),
                           "stderr": c.stderr(attr), "trials": c.trials}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snr_db", "policy", "metric", "mean", "stderr", "trials"])
        for r in self.rows():
            w.writerow([repr(float(r["snr_db"])), r["policy"], r["metric"], repr(r["mean"]),
                        repr(r["stderr"]), r["trials"]])
        return buf.getvalue()

    def to_records(self) -> list:
        return [dict(r, snr_db=float(r["snr_db"])) for r in self.rows()]

    def seed_ranges(self) -> dict:
        """Trial-index range used by every cell; seeds derive from
        (global seed, SNR index, trial index)."""
        return {f"{self.snr_db[i]}|{p}": [0, c.trials - 1] for (i, p), c in self.cells.items()}


def _run_task(args):
    config, snr, policy, seed, data_cap = args
    return run_trial(config, snr, policy, seed, data_cap=data_cap)


def default_workers() -> int:
    return int(os.environ.get("ROBUST_SMSE_WORKERS", "1"))


def run_sweep(config: SystemConfig, snr_db: Sequence[float], policies: Sequence[AllocationPolicy],
              trials: int, seed: int, workers: Optional[int] = None,
              data_cap: Optional[int] = DEFAULT_DATA_CAP) -> SweepReport:
    """Run ``trials`` blocks for every (SNR in dB, policy) pair.

    Trial ``t`` at SNR index ``i`` uses the same random streams under every
    policy, so policy comparisons are paired.  Results do not depend on
    ``workers``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    workers = default_workers() if workers is None else workers
    snr_db = [float(s) for s in snr_db]
    tasks, keys = [], []
    for i, s in enumerate(snr_db):
        snr = 10.0 ** (s / 10.0)
        for pol in policies:
            for t in range(trials):
                tasks.append((config, snr, pol, _rng.trial_seed(seed, i, t), data_cap))
                keys.append((i, pol.label))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        results = [_run_task(t) for t in tasks]

    grouped = {}
    for key, res in zip(keys, results):
        grouped.setdefault(key, []).append(res)
    cells = {key: CellStats(snr_db[key[0]], key[1], res) for key, res in grouped.items()}
    return SweepReport(snr_db=snr_db, policies=[p.label for p in policies], cells=cells,
                       config=config, seed=seed, trials=trials, data_cap=data_cap)


def snr_at_ber(report: SweepReport, policy: str, target: float = 1e-2) -> float:
    """SNR (dB) where the mean BER curve first drops to ``target``,
    interpolating linearly in ``log10(BER)``.  ``nan`` if never reached."""
    snr = np.asarray(report.snr_db)
    ber = report.curve(policy, "ber")
    logt = math.log10(target)
    for i in range(len(snr)):
        if ber[i] <= target:
            if i == 0:
                return float(snr[0]) if ber[0] == target else float("nan")
            lo, hi = math.log10(ber[i - 1]), math.log10(max(ber[i], 1e-300))
            return float(snr[i - 1] + (logt - lo) / (hi - lo) * (snr[i] - snr[i - 1]))
    return float("nan")
