"""Pilot design, training-phase simulation and linear MMSE channel estimation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._rng import as_generator, crandn
from .channel import ChannelRealization, SystemConfig
from .errors import DomainError, NumericalError, PilotRankError

__all__ = [
    "PilotKind",
    "TrainingMatrix",
    "ChannelEstimate",
    "build_training_matrix",
    "simulate_training",
    "mmse_estimate",
    "estimation_error_variance",
    "empirical_error_variance",
    "empirical_error_covariance",
]

_ORTHO_RTOL = 1e-10


class PilotKind(enum.Enum):
    SCALED_IDENTITY = "identity"
    SCALED_DFT = "dft"


@dataclass(frozen=True)
class TrainingMatrix:
    X_T: np.ndarray
    E_T: float
    kind: PilotKind

    @property
    def M(self) -> int:
        return self.X_T.shape[0]

    @property
    def n_T(self) -> int:
        return self.X_T.shape[1]


@dataclass(frozen=True)
class ChannelEstimate:
    H_hat: np.ndarray
    sigma_e2: float
    E_T_used: float


def build_training_matrix(kind, E_T: float, M: int, n_T: int) -> TrainingMatrix:
    """Pilot matrix with orthogonal rows and ``X_T X_T^H = (E_T/M) I_M``.

    Columns beyond the first ``M`` are zero, so extra training slots carry
    no energy.
    """
    kind = PilotKind(kind)
    if E_T < 0:
        raise DomainError(f"negative training energy {E_T}")
    if n_T < M:
        raise PilotRankError(f"n_T={n_T} training symbols cannot resolve M={M} antennas")
    X = np.zeros((M, n_T), dtype=complex)
    if kind is PilotKind.SCALED_IDENTITY:
        X[:, :M] = np.sqrt(E_T / M) * np.eye(M)
    else:
        m = np.arange(M)
        X[:, :M] = np.sqrt(E_T) / M * np.exp(-2j * np.pi * np.outer(m, m) / M)

    gram = X @ X.conj().T
    target = E_T / M
    if np.max(np.abs(gram - target * np.eye(M))) > _ORTHO_RTOL * max(target, np.finfo(float).tiny):
        raise NumericalError("pilot rows lost orthogonality")
    if np.real(np.trace(gram)) > E_T * (1 + _ORTHO_RTOL):
        raise NumericalError("pilot energy exceeds budget")
    return TrainingMatrix(X_T=X, E_T=float(E_T), kind=kind)


def simulate_training(H: ChannelRealization, X_T: TrainingMatrix, sigma_n2: float, seed) -> np.ndarray:
    """Received pilots ``Y_T = H X_T + Z``, one row per receive antenna."""
    Hm = H.H if isinstance(H, ChannelRealization) else np.asarray(H)
    if Hm.shape[1] != X_T.M:
        raise ValueError(f"channel has {Hm.shape[1]} transmit antennas, pilots {X_T.M}")
    rng = as_generator(seed)
    Z = crandn(rng, (Hm.shape[0], X_T.n_T), sigma_n2)
    return Hm @ X_T.X_T + Z


def estimation_error_variance(E_T: float, M: int, sigma_H2: float, sigma_n2: float) -> float:
    """Per-coefficient MMSE error variance after spending ``E_T`` on pilots."""
    if E_T < 0:
        raise DomainError(f"negative training energy {E_T}")
    return 1.0 / (1.0 / sigma_H2 + (E_T / M) / sigma_n2)


def mmse_estimate(Y_T: np.ndarray, X_T: TrainingMatrix, sigma_H2: float, sigma_n2: float) -> ChannelEstimate:
    """Linear MMSE estimate, applied independently to every receive antenna.

    Each row ``y`` of ``Y_T`` maps to ``y A0`` with
    ``A0 = (X^H X + (sigma_n2/sigma_H2) I)^{-1} X^H``.
    """
    X = X_T.X_T
    gram = X.conj().T @ X + (sigma_n2 / sigma_H2) * np.eye(X_T.n_T)
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("pilot normal matrix is not positive definite") from exc
    A0 = scipy.linalg.cho_solve(factor, X.conj().T)
    H_hat = np.asarray(Y_T) @ A0
    return ChannelEstimate(
        H_hat=H_hat,
        sigma_e2=estimation_error_variance(X_T.E_T, X_T.M, sigma_H2, sigma_n2),
        E_T_used=X_T.E_T,
    )


def _error_samples(config: SystemConfig, E_T: float, trials: int, seed, kind) -> np.ndarray:
    """``trials x (N*M)`` matrix of vec(H_hat - H) draws."""
    rng = as_generator(seed)
    X_T = build_training_matrix(kind, E_T, config.M, config.n_T)
    H = crandn(rng, (trials, config.N, config.M), config.sigma_H2)
    Y = H @ X_T.X_T + crandn(rng, (trials, config.N, config.n_T), config.sigma_n2)
    est = mmse_estimate(Y, X_T, config.sigma_H2, config.sigma_n2)
    # column-major vec per trial
    return (est.H_hat - H).transpose(0, 2, 1).reshape(trials, -1)


def empirical_error_variance(config: SystemConfig, E_T: float, trials: int, seed,
                             kind=PilotKind.SCALED_IDENTITY) -> float:
    """Monte-Carlo mean of ``|H_hat - H|^2`` over all coefficients and trials."""
    if trials < 1:
        raise DomainError("need at least one trial")
    err = _error_samples(config, E_T, trials, seed, kind)
    return float(np.mean(np.abs(err) ** 2))


def empirical_error_covariance(config: SystemConfig, E_T: float, trials: int, seed,
                               kind=PilotKind.SCALED_IDENTITY) -> np.ndarray:
    """Sample covariance ``E[e e^H]`` of ``e = vec(H_hat - H)`` (zero mean)."""
    err = _error_samples(config, E_T, trials, seed, kind)
    return err.T @ err.conj() / trials
