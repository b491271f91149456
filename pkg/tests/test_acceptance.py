"""Acceptance criteria, each at its stated tolerance.

Every test records a single PASS/FAIL line, printed again in the terminal
summary.  The Monte-Carlo criteria take about a minute in total.
"""

import math
import time

import numpy as np
import pytest

from robust_smse import cli
from robust_smse.channel import SystemConfig, draw_channel, reference_scenario
from robust_smse.energy import (
    AllocationPolicy,
    grid_search_optimum,
    optimal_training_energy,
    policy_split,
    smse_derivative,
    smse_of_training_power,
    threshold_snr,
)
from robust_smse.montecarlo import run_sweep, snr_at_ber
from robust_smse.precoder import (
    duality_transform,
    smse_objective,
    solve_min_smse,
    stack_beamformers,
    uplink_mse_matrices,
    uplink_stream_mse,
    wiener_receive_filters,
)
from robust_smse.training import build_training_matrix, estimation_error_variance, mmse_estimate
from robust_smse.validation import (
    INTERIOR,
    central_difference,
    random_energy_params,
    random_fixed_design,
    single_user_optimum,
)

EPS = np.finfo(float).eps


def test_criterion_1_closed_form_vs_grid(acceptance_log):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        E_max, M, n_D, s2, sH2 = random_energy_params(rng)
        target = optimal_training_energy(E_max, M, n_D, s2, sH2).P_T
        for _ in range(5):
            H, V, q = random_fixed_design(M, rng)
            found = grid_search_optimum(H, V, q, E_max, M, n_D, s2, sH2, grid_points=1000)
            worst = max(worst, abs(found - target) / target)
    seconds = time.perf_counter() - t0
    ok = worst < 1e-3 and seconds < 120
    assert acceptance_log(1, ok, f"max rel. error {worst:.2e} (limit 1e-3) over 20x5 cases, {seconds:.1f} s")


def test_criterion_2_stationarity_and_curvature(acceptance_log):
    rng = np.random.default_rng(202)
    worst_stat, worst_fd, min_curv = 0.0, 0.0, math.inf
    for _ in range(20):
        E_max, M, n_D, s2, sH2 = random_energy_params(rng)
        H, V, q = random_fixed_design(M, rng)
        args = (H, V, q, E_max, M, n_D, s2, sH2)

        def f(p):
            return smse_of_training_power(p, *args)

        star = optimal_training_energy(E_max, M, n_D, s2, sH2).P_T
        worst_stat = max(worst_stat, abs(smse_derivative(star, *args)) / f(star))
        h = 1e-4 * star
        min_curv = min(min_curv, (f(star + h) - 2 * f(star) + f(star - h)) / h ** 2)
        for p in rng.uniform(*INTERIOR, 20) * E_max / M:
            a, fd = smse_derivative(p, *args), central_difference(f, p, 1e-4 * p)
            worst_fd = max(worst_fd, abs(a - fd) / max(abs(a), abs(fd)))
    ok = worst_stat < 1e-8 and min_curv > 0 and worst_fd < 1e-5
    assert acceptance_log(2, ok, f"stationarity {worst_stat:.1e} (limit 1e-8), min curvature {min_curv:.2e} (> 0), "
                                 f"derivative vs FD {worst_fd:.2e} (limit 1e-5), 20 instances x 20 points")


def test_criterion_3_estimation_variance(acceptance_log):
    rng = np.random.default_rng(303)
    trials, N = 100_000, 2
    worst_mean, worst_off, ok_zero = 0.0, 0.0, True
    for E_T, M, sH2, s2 in [(0.0, 4, 1.0, 1.0), (4.0, 4, 2.0, 1.0), (40.0, 4, 1.0, 1.0),
                            (55.84, 4, 1.0, 1.0), (10.0, 2, 0.5, 0.3)]:
        design = estimation_error_variance(E_T, M, sH2, s2)
        X = build_training_matrix("identity", E_T, M, M)
        H = math.sqrt(sH2 / 2) * (rng.standard_normal((trials, N, M)) + 1j * rng.standard_normal((trials, N, M)))
        Z = math.sqrt(s2 / 2) * (rng.standard_normal((trials, N, M)) + 1j * rng.standard_normal((trials, N, M)))
        est = mmse_estimate(H @ X.X_T + Z, X, sH2, s2)
        e = (est.H_hat - H).reshape(trials, -1)
        worst_mean = max(worst_mean, abs(np.mean(np.abs(e) ** 2) / design - 1))
        prod = e[:, :, None] * e[:, None, :].conj()
        mean = prod.mean(axis=0)
        se = np.sqrt(np.mean(np.abs(prod - mean) ** 2, axis=0) / trials)
        off = ~np.eye(e.shape[1], dtype=bool)
        worst_off = max(worst_off, float(np.max(np.abs(mean[off]) / se[off])))
        if E_T == 0.0:
            ok_zero = design == sH2 and not np.any(est.H_hat)
    ok = worst_mean < 0.02 and worst_off < 3 and ok_zero
    assert acceptance_log(3, ok, f"max rel. deviation {worst_mean:.2e} (limit 2e-2), largest off-diagonal "
                                 f"{worst_off:.2f} SE (limit 3), E_T=0 design value exact: {ok_zero}")


def test_criterion_4_threshold(acceptance_log):
    exact = all(threshold_snr(M, M) == 0.5 for M in range(1, 9))
    M, n_D, rho = 4, 996, 1.0
    thr = rho * math.sqrt(M * n_D)
    rng = np.random.default_rng(404)

    # 1% below: sum-MSE never decreases as energy moves to pilots
    E_max = 0.99 * thr
    below_fixed = True
    for _ in range(5):
        H, V, q = random_fixed_design(M, rng)
        vals = smse_of_training_power(np.linspace(0, E_max / M, 1000), H, V, q, E_max, M, n_D, rho, 1.0)
        below_fixed &= bool(np.all(np.diff(vals) >= -4 * EPS * vals[1:]))
    cfg = reference_scenario().replace(E_max=E_max, n=n_D + M)
    H = draw_channel(cfg, 4).H
    optimized = []
    for E_T in np.linspace(0, E_max, 60)[:-1]:
        sp = policy_split(AllocationPolicy.fixed(E_T), E_max, M, n_D, rho, 1.0)
        optimized.append(solve_min_smse(H, sp.P_D, sp.sigma_eff2, cfg).smse)
    optimized = np.array(optimized)
    below_opt = bool(np.all(np.diff(optimized) >= -1e-7 * optimized[1:]))
    below_cf = optimal_training_energy(E_max, M, n_D, rho, 1.0).E_T == 0.0

    # 1% above: interior minimizer matching the closed form
    E_max = 1.01 * thr
    star = optimal_training_energy(E_max, M, n_D, rho, 1.0).P_T
    worst = 0.0
    interior = star > 0
    for _ in range(5):
        H, V, q = random_fixed_design(M, rng)
        args = (H, V, q, E_max, M, n_D, rho, 1.0)
        found = grid_search_optimum(*args)
        worst = max(worst, abs(found - star) / star)
        f = smse_of_training_power
        interior &= f(star, *args) < min(f(0.0, *args), f(E_max / M, *args))
    ok = exact and below_fixed and below_opt and below_cf and interior and worst < 1e-3
    assert acceptance_log(4, ok, f"threshold_snr(M, M) == 0.5 for M=1..8: {exact}; 1% below: non-decreasing "
                                 f"(fixed designs {below_fixed}, re-optimized precoder {below_opt}), E_T*=0 {below_cf}; "
                                 f"1% above: interior {interior}, grid vs closed form {worst:.1e} (limit 1e-3)")


def test_criterion_5_precoder(acceptance_log):
    rng = np.random.default_rng(505)
    cfg = reference_scenario()
    su = SystemConfig(M=4, K=1, N_k=4, L_k=4, n=10, E_max=10.0)
    two_path = mono = su_gap = dual_gap = pow_gap = 0.0
    monotone = True
    for _ in range(20):
        s2 = float(10 ** rng.uniform(-2, 0.5))
        P_D = float(10 ** rng.uniform(-1, 1))
        H = draw_channel(cfg, rng).H
        sol = solve_min_smse(H, P_D, s2, cfg)
        monotone &= all(b <= a for a, b in zip(sol.history, sol.history[1:]))
        blocks = [rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)) for _ in range(2)]
        V_rand = stack_beamformers([b / np.linalg.norm(b, axis=0) for b in blocks], cfg)
        for V, q in [(sol.V, sol.q), (V_rand, rng.dirichlet(np.ones(4)) * P_D)]:
            U = wiener_receive_filters(H, V, q, s2)
            traced = sum(np.trace(E).real for E in uplink_mse_matrices(H, V, q, U, s2, cfg))
            two_path = max(two_path, abs(traced - smse_objective(H, V, q, s2)))
        dl = duality_transform(sol, H, s2)
        up = uplink_stream_mse(H, sol.V, sol.q, sol.U, s2)
        dual_gap = max(dual_gap, float(np.max(np.abs(up - dl.per_stream_mse))))
        pow_gap = max(pow_gap, abs(dl.p.sum() - sol.q.sum()))
        H1 = draw_channel(su, rng).H
        su_gap = max(su_gap, abs(solve_min_smse(H1, P_D, s2, su).smse - single_user_optimum(H1, P_D, s2)))
    ok = two_path < 1e-10 and monotone and su_gap < 1e-6 and dual_gap < 1e-6 and pow_gap < 1e-9
    assert acceptance_log(5, ok, f"two-path {two_path:.1e} (1e-10), monotone descent {monotone}, eigen-oracle "
                                 f"{su_gap:.1e} (1e-6), duality MSE {dual_gap:.1e} (1e-6), power {pow_gap:.1e} (1e-9)")


def test_criterion_6_training_power_curves(acceptance_log):
    t0 = time.perf_counter()
    snr_db = np.arange(-10.0, 20.5, 0.5)
    rows = cli.energy_table(dict(cli.DEFAULT_CONFIG), [10, 100, 1000], list(snr_db))
    seconds = time.perf_counter() - t0
    M = 4
    exact = trend_snr = cutoff = equal_ref = True
    curves = {}
    for n in (10, 100, 1000):
        got = np.array([r["P_T_star"] for r in rows if r["n"] == n])
        flags = np.array([r["below_threshold"] for r in rows if r["n"] == n], dtype=bool)
        n_D = n - M
        rho = 1.0 / 10 ** (snr_db / 10)
        E_max = float(n)
        above = E_max > rho * math.sqrt(M * n_D)
        ref = np.where(above, (E_max * math.sqrt(M) - rho * M * math.sqrt(n_D))
                       / (math.sqrt(n_D) + math.sqrt(M)), 0.0) / M
        exact &= bool(np.all(np.abs(got - ref) <= 4 * EPS * np.maximum(1.0, ref)))
        cutoff &= bool(np.array_equal(flags, 10 ** (snr_db / 10) <= threshold_snr(M, n_D)))
        cutoff &= bool(np.all(got[flags] == 0.0))
        trend_snr &= bool(np.all(np.diff(got[~flags]) > 0) and np.all(np.diff(got) >= 0))
        equal_ref &= all(r["P_T_equal"] == 1.0 for r in rows if r["n"] == n)
        curves[n] = (got, flags)
    both = ~(curves[10][1] | curves[100][1] | curves[1000][1])
    trend_n = bool(np.all(curves[10][0][both] < curves[100][0][both])
                   and np.all(curves[100][0][both] < curves[1000][0][both]))
    # growth with SNR slows down: P_T* settles
    g = curves[1000][0]
    settles = (g[snr_db == 20.0] - g[snr_db == 15.0])[0] < (g[snr_db == 5.0] - g[snr_db == 0.0])[0]
    ok = exact and trend_snr and trend_n and cutoff and equal_ref and settles and seconds < 1
    assert acceptance_log(6, ok, f"machine-precision match {exact}, increasing in SNR {trend_snr}, increasing in n "
                                 f"{trend_n}, cutoffs at threshold SNR {cutoff}, equal reference 1 {equal_ref}, "
                                 f"settles {settles}, {seconds * 1e3:.0f} ms")


@pytest.fixture(scope="module")
def desk_sweep():
    """200 trials per point on 0..26 dB; the first eight points are the 0..14 dB grid."""
    t0 = time.perf_counter()
    rep = run_sweep(reference_scenario(n=1000), list(np.arange(0.0, 27.0, 2.0)),
                    [AllocationPolicy.optimal(), AllocationPolicy.equal()], trials=200, seed=2024)
    return rep, time.perf_counter() - t0


def _crossing(snr, ber, target=1e-2):
    for i in range(1, len(snr)):
        if ber[i] <= target < ber[i - 1]:
            lo, hi = math.log10(ber[i - 1]), math.log10(max(ber[i], 1e-300))
            return snr[i - 1] + (math.log10(target) - lo) / (hi - lo) * (snr[i] - snr[i - 1])
    return math.nan


def _bootstrap_gain_se(rep, resamples=400):
    """Spread of the SNR gain when trials are resampled; a resampled trial
    keeps its pairing across the two policies."""
    rng = np.random.default_rng(0)
    opt = [rep.cell(s, "optimal").values("ber") for s in rep.snr_db]
    eq = [rep.cell(s, "equal").values("ber") for s in rep.snr_db]
    gains = []
    for _ in range(resamples):
        idx = [rng.integers(0, len(o), len(o)) for o in opt]
        bo = [o[i].mean() for o, i in zip(opt, idx)]
        be = [e[i].mean() for e, i in zip(eq, idx)]
        gains.append(_crossing(rep.snr_db, be) - _crossing(rep.snr_db, bo))
    return float(np.nanstd(gains, ddof=1))


def test_criterion_7_desk_scale_curves(acceptance_log, desk_sweep):
    rep, seconds = desk_sweep
    worst_z, strict = -math.inf, True
    for s in np.arange(0.0, 15.0, 2.0):
        d = rep.cell(s, "optimal").values("empirical_smse") - rep.cell(s, "equal").values("empirical_smse")
        z = d.mean() / (d.std(ddof=1) / math.sqrt(len(d)))
        worst_z = max(worst_z, z)
        strict &= d.mean() <= 0
    part_a = worst_z <= 3
    ber_14 = (rep.cell(14.0, "optimal").mean("ber"), rep.cell(14.0, "equal").mean("ber"))
    s_opt, s_eq = snr_at_ber(rep, "optimal", 1e-2), snr_at_ber(rep, "equal", 1e-2)
    gain = s_eq - s_opt
    part_b = 2 <= gain <= 4
    gain_se = _bootstrap_gain_se(rep)
    ok = part_a and part_b and seconds < 900
    assert acceptance_log(7, ok, f"(a) 0-14 dB optimal-minus-equal SMSE <= 3 SE at every point: {part_a} "
                                 f"(largest z {worst_z:.1f}, below equal at every point {strict}); "
                                 f"(b) BER 1e-2 at {s_opt:.2f} dB vs {s_eq:.2f} dB, gain {gain:.2f} dB in [2, 4]: "
                                 f"{part_b}, bootstrap SE {gain_se:.2f} dB (BER at 14 dB: {ber_14[0]:.3g} / {ber_14[1]:.3g}, so the crossing "
                                 f"is read on the grid extended to 26 dB); {seconds:.0f} s")


def test_criterion_8_model_consistency(acceptance_log):
    rep = run_sweep(reference_scenario(n=1000), [8.0], [AllocationPolicy.optimal()], trials=2000, seed=808)
    c = rep.cell(8.0, "optimal")
    d = c.values("empirical_smse") - c.values("design_smse")
    se = d.std(ddof=1) / math.sqrt(len(d))
    z = d.mean() / se
    ok = abs(z) <= 3 and c.trials >= 2000
    assert acceptance_log(8, ok, f"empirical {c.mean('empirical_smse'):.4f} vs design {c.mean('design_smse'):.4f}, "
                                 f"paired difference {d.mean():.2e} = {z:.2f} SE (limit 3) over {c.trials} trials at 8 dB")


def test_criterion_9_determinism(acceptance_log, tmp_path):
    base = ["sweep", "--trials", "6", "--snr", "0,7,14", "--seed", "99", "--policy", "optimal,equal,fixed:20"]
    outs = []
    for workers in (1, 2, 4):
        out = tmp_path / f"w{workers}.csv"
        assert cli.main(base + ["--workers", str(workers), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    rerun = tmp_path / "rerun.csv"
    assert cli.main(["sweep", "--manifest", str(tmp_path / "w1.csv.manifest.json"), "--out", str(rerun),
                     "--workers", "3"]) == 0
    outs.append(rerun.read_bytes())
    ok = len(set(outs)) == 1
    assert acceptance_log(9, ok, f"workers 1, 2, 4 and manifest rerun with 3 workers byte-identical: {ok} "
                                 f"({len(outs[0])} bytes)")
