"""Self-check suite: closed forms against independent numerical oracles.

Each check returns a :class:`CheckResult`; :func:`run_validation` runs the
suite at a given level.  ``closed_form`` can be swapped for a deliberately
wrong formula to confirm the oracles catch it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .channel import SystemConfig, draw_channel
from .energy import (
    grid_search_optimum,
    optimal_training_energy,
    smse_derivative,
    smse_of_training_power,
    threshold_snr,
)
from .precoder import duality_transform, solve_min_smse, stack_beamformers, uplink_stream_mse
from .training import empirical_error_covariance, estimation_error_variance

__all__ = [
    "CheckResult",
    "random_fixed_design",
    "random_energy_params",
    "single_user_optimum",
    "central_difference",
    "mutated_closed_form",
    "run_validation",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def random_fixed_design(M: int, rng: np.random.Generator):
    """Random channel, block-diagonal unit-norm beamformers and normalized
    stream powers (summing to one) with ``L <= M`` streams."""
    L = int(rng.integers(1, M + 1))
    K = int(rng.integers(1, L + 1))
    # split L streams over K users, each user gets as many antennas as streams
    cuts = np.sort(rng.choice(np.arange(1, L), size=K - 1, replace=False)) if K > 1 else []
    L_k = np.diff(np.concatenate(([0], cuts, [L]))).astype(int)
    cfg = SystemConfig(M=M, K=K, N_k=tuple(L_k), L_k=tuple(L_k), n=M + 1, E_max=1.0)
    H = draw_channel(cfg, rng).H
    blocks = []
    for lk in L_k:
        Vk = rng.standard_normal((lk, lk)) + 1j * rng.standard_normal((lk, lk))
        blocks.append(Vk / np.linalg.norm(Vk, axis=0))
    V = stack_beamformers(blocks, cfg)
    q = rng.dirichlet(np.ones(L))
    return H, V, q


def random_energy_params(rng: np.random.Generator, min_factor: float = 1.5, max_factor: float = 100.0):
    """``(E_max, M, n_D, sigma_n2, sigma_H2)`` strictly above the threshold."""
    M = int(rng.integers(1, 9))
    n_D = int(rng.integers(M, 2001))
    rho = float(rng.uniform(0.1, 10.0))
    sigma_H2 = float(10 ** rng.uniform(-1, 1))
    sigma_n2 = rho * sigma_H2
    E_max = rho * math.sqrt(M * n_D) * float(10 ** rng.uniform(math.log10(min_factor), math.log10(max_factor)))
    return E_max, M, n_D, sigma_n2, sigma_H2


def single_user_optimum(H_k: np.ndarray, P_D: float, sigma2: float) -> float:
    """Minimum sum-MSE for one user with as many streams as antennas.

    Eigenmodes of ``H_k H_k^H`` decouple the problem; per-mode powers follow
    ``p_i = max(0, (sigma mu sqrt(lam_i) - sigma^2) / lam_i)`` with the level
    ``mu`` set by the power budget.
    """
    lam = np.linalg.eigvalsh(H_k @ H_k.conj().T)
    lam = lam[lam > 1e-14 * lam.max()]
    s = math.sqrt(sigma2)

    def powers(mu):
        return np.maximum(0.0, (s * mu * np.sqrt(lam) - sigma2) / lam)

    hi = 1.0
    while powers(hi).sum() < P_D:
        hi *= 2
    mu = brentq(lambda m: powers(m).sum() - P_D, 0.0, hi, xtol=1e-15, rtol=1e-15)
    p = powers(mu)
    unused = H_k.shape[0] - len(lam)
    return float(np.sum(sigma2 / (lam * p + sigma2)) + unused)


def central_difference(f: Callable[[float], float], x: float, h: float) -> float:
    return (f(x + h) - f(x - h)) / (2 * h)


def mutated_closed_form(E_max, M, n_D, sigma_n2, sigma_H2):
    """Wrong on purpose: ``sqrt(M)`` replaced by ``M`` in the numerator."""
    rho = sigma_n2 / sigma_H2
    if E_max <= rho * math.sqrt(M * n_D):
        return optimal_training_energy(0.0, M, n_D, sigma_n2, sigma_H2)
    E_T = (E_max * M - rho * M * math.sqrt(n_D)) / (math.sqrt(n_D) + math.sqrt(M))
    split = optimal_training_energy(E_max, M, n_D, sigma_n2, sigma_H2)
    return type(split)(E_T=min(E_T, E_max), E_D=E_max - E_T, P_T=E_T / M, P_D=split.P_D,
                       sigma_e2=split.sigma_e2, sigma_eff2=split.sigma_eff2, below_threshold=False)


def check_closed_form_vs_grid(rng, n_params, n_designs, closed_form) -> CheckResult:
    worst = 0.0
    for _ in range(n_params):
        E_max, M, n_D, s2, sH2 = random_energy_params(rng)
        target = closed_form(E_max, M, n_D, s2, sH2).P_T
        for _ in range(n_designs):
            H, V, q = random_fixed_design(M, rng)
            found = grid_search_optimum(H, V, q, E_max, M, n_D, s2, sH2, grid_points=1000)
            worst = max(worst, abs(found - target) / abs(target))
    return CheckResult("closed form vs grid search", worst < 1e-3, f"max rel. error {worst:.2e} (limit 1e-3)")


INTERIOR = (0.01, 0.9)


def check_derivatives(rng, n_params, n_points) -> CheckResult:
    worst_fd, worst_stat, min_curv = 0.0, 0.0, math.inf
    for _ in range(n_params):
        E_max, M, n_D, s2, sH2 = random_energy_params(rng)
        H, V, q = random_fixed_design(M, rng)
        args = (H, V, q, E_max, M, n_D, s2, sH2)

        def f(p):
            return smse_of_training_power(p, *args)

        p_star = optimal_training_energy(E_max, M, n_D, s2, sH2).P_T
        worst_stat = max(worst_stat, abs(smse_derivative(p_star, *args)) / f(p_star))
        h = 1e-4 * p_star
        min_curv = min(min_curv, (f(p_star + h) - 2 * f(p_star) + f(p_star - h)) / h ** 2)
        # the fixed step loses accuracy as P_D -> 0, so stay clear of that end
        for p in rng.uniform(INTERIOR[0], INTERIOR[1], n_points) * E_max / M:
            p = float(p)
            a = smse_derivative(p, *args)
            fd = central_difference(f, p, 1e-4 * p)
            worst_fd = max(worst_fd, abs(a - fd) / max(abs(a), abs(fd)))
    ok = worst_fd < 1e-5 and worst_stat < 1e-8 and min_curv > 0
    return CheckResult("derivative vs finite differences", ok,
                       f"fd rel. err {worst_fd:.2e}, stationarity {worst_stat:.2e}, min curvature {min_curv:.3e}")


def check_estimation_variance(rng, trials) -> CheckResult:
    worst = 0.0
    for E_T, M, sH2, s2 in [(0.0, 4, 1.0, 1.0), (4.0, 4, 2.0, 1.0), (40.0, 4, 1.0, 1.0),
                            (55.84, 4, 1.0, 1.0), (10.0, 2, 0.5, 0.3)]:
        cfg = SystemConfig(M=M, K=1, N_k=M, L_k=1, n=M + 1, E_max=max(E_T, 1.0), sigma_H2=sH2, sigma_n2=s2)
        cov = empirical_error_covariance(cfg, E_T, trials, rng)
        emp = float(np.mean(np.diag(cov).real))
        worst = max(worst, abs(emp / estimation_error_variance(E_T, M, sH2, s2) - 1))
    return CheckResult("estimation error variance", worst < 0.02, f"max rel. deviation {worst:.2e} (limit 2e-2)")


def check_precoder(rng, n_instances) -> CheckResult:
    worst_dual, worst_pow, worst_su = 0.0, 0.0, 0.0
    cfg = SystemConfig(M=4, K=2, N_k=2, L_k=2, n=10, E_max=10.0)
    cfg1 = SystemConfig(M=4, K=1, N_k=3, L_k=3, n=10, E_max=10.0)
    for _ in range(n_instances):
        s2 = float(10 ** rng.uniform(-2, 0.5))
        H = draw_channel(cfg, rng).H
        sol = solve_min_smse(H, 1.0, s2, cfg)
        dl = duality_transform(sol, H, s2)
        up = uplink_stream_mse(H, sol.V, sol.q, sol.U, s2)
        worst_dual = max(worst_dual, float(np.max(np.abs(up - dl.per_stream_mse))))
        worst_pow = max(worst_pow, abs(dl.p.sum() - sol.q.sum()) / sol.q.sum())
        H1 = draw_channel(cfg1, rng).H
        sol1 = solve_min_smse(H1, 1.0, s2, cfg1)
        worst_su = max(worst_su, abs(sol1.smse - single_user_optimum(H1, 1.0, s2)))
    ok = worst_dual < 1e-6 and worst_pow < 1e-9 and worst_su < 1e-6
    return CheckResult("precoder duality and single-user oracle", ok,
                       f"duality MSE gap {worst_dual:.2e}, power gap {worst_pow:.2e}, eigen-oracle gap {worst_su:.2e}")


def check_threshold() -> CheckResult:
    v = threshold_snr(4, 4)
    return CheckResult("threshold SNR at n_D = M", v == 0.5, f"value {v!r}")


LEVELS = {
    "quick": dict(grid_params=6, grid_designs=2, deriv_params=5, deriv_points=20, est_trials=3000, precoder=10),
    "full": dict(grid_params=20, grid_designs=5, deriv_params=20, deriv_points=20, est_trials=100_000, precoder=50),
}


def run_validation(level: str = "quick", seed: int = 0, closed_form: Optional[Callable] = None) -> list:
    """Run the check suite; returns one :class:`CheckResult` per check."""
    p = LEVELS[level]
    closed_form = closed_form or optimal_training_energy
    rng = np.random.default_rng(seed)
    jobs = [
        lambda: check_threshold(),
        lambda: check_closed_form_vs_grid(rng, p["grid_params"], p["grid_designs"], closed_form),
        lambda: check_derivatives(rng, p["deriv_params"], p["deriv_points"]),
        lambda: check_estimation_variance(rng, p["est_trials"]),
        lambda: check_precoder(rng, p["precoder"]),
    ]
    out = []
    for job in jobs:
        t0 = time.perf_counter()
        res = job()
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
