"""Optimal split of a block energy budget between pilots and data.

Powers are per symbol: ``P_T = E_T / M`` during training (``M`` pilot slots
carry energy) and ``P_D = (E_max - E_T) / n_D`` during data.  The ratio
``rho = sigma_n2 / sigma_H2`` appears throughout.

Besides the closed form, this module exposes the sum-MSE as a function of
training power for a *fixed* channel and fixed normalized precoder
``(V, q_tilde)``, its analytic derivative, and a grid + golden-section
minimizer.  Those serve as an independent check of the closed form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError
from .training import estimation_error_variance

__all__ = [
    "EnergySplit",
    "PolicyKind",
    "AllocationPolicy",
    "optimal_training_energy",
    "energy_split",
    "policy_split",
    "threshold_snr",
    "threshold_energy",
    "effective_noise_power",
    "smse_of_training_power",
    "smse_derivative",
    "golden_section",
    "grid_search_optimum",
    "quadratic_roots",
]


@dataclass(frozen=True)
class EnergySplit:
    E_T: float
    E_D: float
    P_T: float
    P_D: float
    sigma_e2: float
    sigma_eff2: float
    below_threshold: bool


class PolicyKind(enum.Enum):
    OPTIMAL = "optimal"
    EQUAL = "equal"
    FIXED = "fixed"


@dataclass(frozen=True)
class AllocationPolicy:
    kind: PolicyKind
    E_T: Optional[float] = None

    @classmethod
    def optimal(cls):
        return cls(PolicyKind.OPTIMAL)

    @classmethod
    def equal(cls):
        return cls(PolicyKind.EQUAL)

    @classmethod
    def fixed(cls, E_T: float):
        if E_T < 0:
            raise DomainError("fixed training energy must be non-negative")
        return cls(PolicyKind.FIXED, float(E_T))

    @classmethod
    def parse(cls, text: str) -> "AllocationPolicy":
        """``optimal``, ``equal`` or ``fixed:<E_T>``."""
        text = text.strip().lower()
        if text.startswith("fixed:"):
            return cls.fixed(float(text.split(":", 1)[1]))
        if text in ("optimal", "equal"):
            return cls(PolicyKind(text))
        raise DomainError(f"unknown allocation policy {text!r}")

    @property
    def label(self) -> str:
        if self.kind is PolicyKind.FIXED:
            return f"fixed:{self.E_T:g}"
        return self.kind.value


def _check_positive(**kw):
    for name, value in kw.items():
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value}")


def threshold_energy(M: int, n_D: int, sigma_n2: float, sigma_H2: float) -> float:
    """Budget at or below which the optimal policy sends no pilots."""
    return sigma_n2 / sigma_H2 * math.sqrt(M * n_D)


def energy_split(E_T: float, E_max: float, M: int, n_D: int, sigma_n2: float, sigma_H2: float,
                 below_threshold: bool = False) -> EnergySplit:
    """Derived powers and effective noise for a given training energy."""
    if not 0 <= E_T <= E_max:
        raise DomainError(f"training energy {E_T} outside [0, {E_max}]")
    E_D = E_max - E_T
    P_D = E_D / n_D
    sigma_e2 = estimation_error_variance(E_T, M, sigma_H2, sigma_n2)
    return EnergySplit(E_T=E_T, E_D=E_D, P_T=E_T / M, P_D=P_D, sigma_e2=sigma_e2,
                       sigma_eff2=sigma_n2 + P_D * sigma_e2, below_threshold=below_threshold)


def optimal_training_energy(E_max: float, M: int, n_D: int, sigma_n2: float, sigma_H2: float) -> EnergySplit:
    """Closed-form sum-MSE optimal training energy.

    Above the threshold ``E_max > rho sqrt(M n_D)``::

        E_T = (E_max sqrt(M) - rho M sqrt(n_D)) / (sqrt(n_D) + sqrt(M))

    otherwise no energy is spent on training.
    """
    _check_positive(M=M, n_D=n_D, sigma_n2=sigma_n2, sigma_H2=sigma_H2)
    if E_max < 0:
        raise DomainError("E_max must be non-negative")
    rho = sigma_n2 / sigma_H2
    sM, sD = math.sqrt(M), math.sqrt(n_D)
    if E_max > rho * sM * sD:
        E_T = (E_max * sM - rho * M * sD) / (sD + sM)
        return energy_split(E_T, E_max, M, n_D, sigma_n2, sigma_H2)
    return energy_split(0.0, E_max, M, n_D, sigma_n2, sigma_H2, below_threshold=True)


def policy_split(policy: AllocationPolicy, E_max: float, M: int, n_D: int, sigma_n2: float,
                 sigma_H2: float, n_T: Optional[int] = None) -> EnergySplit:
    if policy.kind is PolicyKind.OPTIMAL:
        return optimal_training_energy(E_max, M, n_D, sigma_n2, sigma_H2)
    if policy.kind is PolicyKind.EQUAL:
        # every symbol of the block gets the same power
        n_T = M if n_T is None else n_T
        P = E_max / (n_T + n_D)
        return energy_split(M * P, E_max, M, n_D, sigma_n2, sigma_H2)
    if policy.E_T > E_max:
        raise DomainError(f"fixed training energy {policy.E_T} exceeds E_max={E_max}")
    return energy_split(policy.E_T, E_max, M, n_D, sigma_n2, sigma_H2)


def threshold_snr(M: int, n_D: int) -> float:
    """Average received SNR at or below which no pilots are sent."""
    if M < 1 or n_D < 1:
        raise DomainError("M and n_D must be at least 1")
    return math.sqrt(M * n_D) / (n_D + M)


def effective_noise_power(P_T, E_max: float, M: int, n_D: int, sigma_n2: float, sigma_H2: float):
    """Noise plus estimation-error interference as a function of training power.

    Accepts scalar or array ``P_T``.
    """
    P_T = np.asarray(P_T, dtype=float)
    if np.any(P_T < 0) or np.any(P_T * M > E_max * (1 + 1e-12)):
        raise DomainError("training power outside [0, E_max/M]")
    rho = sigma_n2 / sigma_H2
    out = sigma_n2 + sigma_n2 / n_D * (E_max - P_T * M) / (rho + P_T)
    return float(out) if out.ndim == 0 else out


def _gram(H_fixed, V, q_tilde):
    """``H^H V diag(q) V^H H`` (M x M) for the virtual uplink."""
    G = np.asarray(H_fixed).conj().T @ np.asarray(V)
    return (G * np.asarray(q_tilde, dtype=float)) @ G.conj().T


def _R_tilde(P_T, A, E_max, M, n_D, sigma_n2, sigma_H2):
    P_T = np.atleast_1d(np.asarray(P_T, dtype=float))
    P_D = (E_max - P_T * M) / n_D
    s2 = np.atleast_1d(effective_noise_power(P_T, E_max, M, n_D, sigma_n2, sigma_H2))
    eye = np.eye(A.shape[0])
    R = P_D[:, None, None] * A[None] + s2[:, None, None] * eye[None]
    return R, P_D, s2


def smse_of_training_power(P_T, H_fixed, V, Q_tilde, E_max: float, M: int, n_D: int,
                           sigma_n2: float, sigma_H2: float, L: Optional[int] = None):
    """Virtual-uplink sum-MSE at training power ``P_T`` for a fixed design.

    ``Q_tilde`` holds normalized stream powers (length-L vector, trace at
    most 1); the actual powers are ``P_D * Q_tilde``.  Vectorized over
    ``P_T``.
    """
    q = np.diag(Q_tilde) if np.ndim(Q_tilde) == 2 else np.asarray(Q_tilde, dtype=float)
    if q.sum() > 1 + 1e-12 or np.any(q < 0):
        raise DomainError("normalized stream powers must be non-negative with sum <= 1")
    L = len(q) if L is None else L
    A = _gram(H_fixed, V, q)
    R, _, s2 = _R_tilde(P_T, A, E_max, M, n_D, sigma_n2, sigma_H2)
    tr_inv = np.trace(np.linalg.inv(R), axis1=1, axis2=2).real
    out = L - A.shape[0] + s2 * tr_inv
    return float(out[0]) if np.ndim(P_T) == 0 else out


def smse_derivative(P_T: float, H_fixed, V, Q_tilde, E_max: float, M: int, n_D: int,
                    sigma_n2: float, sigma_H2: float) -> float:
    """Analytic derivative of :func:`smse_of_training_power` in ``P_T``.

    Uses the factored form
    ``P_D tr[R^-1 A R^-1] * (D_sigma + M sigma_eff2 / (n_D P_D))`` where
    ``D_sigma = -sigma_n2 (E_max + rho M) / (n_D (rho + P_T)^2)`` is the
    derivative of the effective noise.  The second factor alone decides the
    sign, and it vanishes at the closed-form optimum.
    """
    if not 0 < P_T * M < E_max:
        raise DomainError("derivative only defined strictly inside (0, E_max/M)")
    q = np.diag(Q_tilde) if np.ndim(Q_tilde) == 2 else np.asarray(Q_tilde, dtype=float)
    A = _gram(H_fixed, V, q)
    R, P_D, s2 = _R_tilde(P_T, A, E_max, M, n_D, sigma_n2, sigma_H2)
    R, P_D, s2 = R[0], P_D[0], s2[0]
    rho = sigma_n2 / sigma_H2
    d_sigma = -sigma_n2 * (E_max + rho * M) / (n_D * (rho + P_T) ** 2)
    Ri = np.linalg.inv(R)
    trace_term = P_D * np.trace(Ri @ A @ Ri).real
    return float(trace_term * (d_sigma + M * s2 / (n_D * P_D)))


_INVPHI = (math.sqrt(5) - 1) / 2


def golden_section(f, a: float, b: float, rtol: float = 1e-6, max_iter: int = 200) -> float:
    """Minimize a unimodal ``f`` on ``[a, b]``.

    Stops when the bracket width falls below ``rtol`` times the midpoint
    magnitude (absolute floor of ``1e-15 * (b - a)``).
    """
    floor = 1e-15 * (b - a)
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= max(rtol * abs(0.5 * (a + b)), floor):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def grid_search_optimum(H_fixed, V, Q_tilde, E_max: float, M: int, n_D: int, sigma_n2: float,
                        sigma_H2: float, grid_points: int = 1000, rtol: float = 1e-6) -> float:
    """Training power minimizing the fixed-design sum-MSE, found numerically.

    Uniform grid on ``[0, E_max/M]`` (ties go to the smaller power), then
    golden-section refinement between the neighbours of the best grid
    point.  A refined point is only kept if it beats the grid value by more
    than rounding.
    """
    if grid_points < 2:
        raise DomainError("need at least two grid points")

    def f(p):
        return smse_of_training_power(p, H_fixed, V, Q_tilde, E_max, M, n_D, sigma_n2, sigma_H2)

    grid = np.linspace(0.0, E_max / M, grid_points)
    values = f(grid)
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    x = golden_section(f, lo, hi, rtol=rtol)
    margin = 4 * np.finfo(float).eps * abs(values[i])
    return float(x) if f(x) < values[i] - margin else float(grid[i])


def quadratic_roots(E_max: float, M: int, n_D: int, rho: float):
    """Both roots of the stationarity quadratic in ``P_T``.

    ``P_T^2 (n_D - M) + 2 P_T (E_max + rho n_D) = E_max^2/M - rho^2 n_D``.
    Returns ``(plus_root, minus_root)``.  When ``n_D == M`` the equation is
    linear; the single root is returned as ``(root, None)``.
    """
    if n_D == M:
        return (E_max / M - rho) / 2.0, None
    gamma_sq = n_D * (rho ** 2 * M + 2 * rho * E_max + E_max ** 2 / M)
    gamma = E_max * math.sqrt(n_D / M) + rho * math.sqrt(n_D * M)
    if not math.isclose(gamma * gamma, gamma_sq, rel_tol=1e-12):
        raise ArithmeticError("the two expressions for gamma disagree")
    base = -E_max - rho * n_D
    return (base + gamma) / (n_D - M), (base - gamma) / (n_D - M)
