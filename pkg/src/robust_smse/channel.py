"""System configuration and i.i.d. Rayleigh block-fading channels.

Orientation convention used throughout the package: the channel is stored
as an ``N x M`` matrix ``H`` whose row ``r`` is the channel from the ``M``
base-station antennas to receive antenna ``r``.  Downlink reception at user
``k`` is ``y_k = H_k x + n_k`` with ``H_k = user_block(H, k)``.  The virtual
uplink channel of user ``k`` is ``H_k^H`` (``M x N_k``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ._rng import as_generator, crandn
from .errors import ConfigurationError

__all__ = [
    "SystemConfig",
    "ChannelRealization",
    "draw_channel",
    "user_block",
    "reference_scenario",
]


def _per_user(value: Union[int, Sequence[int]], K: int, name: str) -> tuple:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * K
    out = tuple(int(v) for v in value)
    if len(out) != K:
        raise ConfigurationError(f"{name} has {len(out)} entries but K={K}")
    return out


@dataclass(frozen=True)
class SystemConfig:
    """Static scenario parameters for one coherence block.

    ``N_k`` and ``L_k`` may be given as a single integer, which is then
    used for every user.  ``n_T`` defaults to ``M``.
    """

    M: int
    K: int
    N_k: tuple
    L_k: tuple
    n: int
    E_max: float
    sigma_H2: float = 1.0
    sigma_n2: float = 1.0
    n_T: Optional[int] = None

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise ConfigurationError("M and K must be positive")
        object.__setattr__(self, "N_k", _per_user(self.N_k, self.K, "N_k"))
        object.__setattr__(self, "L_k", _per_user(self.L_k, self.K, "L_k"))
        if self.n_T is None:
            object.__setattr__(self, "n_T", self.M)
        if min(self.N_k) < 1 or min(self.L_k) < 1:
            raise ConfigurationError("every user needs at least one antenna and one stream")
        if self.L > self.M:
            raise ConfigurationError(f"L={self.L} streams exceed M={self.M} antennas")
        if self.n_T < self.M:
            raise ConfigurationError(f"n_T={self.n_T} < M={self.M}")
        if self.n - self.n_T <= 0:
            raise ConfigurationError("block too short: no data symbols remain")
        if not self.E_max > 0:
            raise ConfigurationError("E_max must be positive")
        if not self.sigma_H2 > 0 or not self.sigma_n2 > 0:
            raise ConfigurationError("variances must be positive")

    @property
    def N(self) -> int:
        return sum(self.N_k)

    @property
    def L(self) -> int:
        return sum(self.L_k)

    @property
    def n_D(self) -> int:
        return self.n - self.n_T

    @property
    def rho(self) -> float:
        return self.sigma_n2 / self.sigma_H2

    @property
    def P_avg(self) -> float:
        return self.E_max / self.n

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def row_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.N_k)))

    def stream_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.L_k)))

    def stream_owner(self) -> np.ndarray:
        """User index of every stream, length L."""
        return np.repeat(np.arange(self.K), self.L_k)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["N_k"] = list(self.N_k)
        d["L_k"] = list(self.L_k)
        return d


def reference_scenario(n: int = 1000, alpha: float = 1.0, sigma_n2: float = 1.0) -> SystemConfig:
    """K=2 users, M=4 antennas, two antennas and two streams per user."""
    return SystemConfig(M=4, K=2, N_k=(2, 2), L_k=(2, 2), n=n, E_max=alpha * n,
                        sigma_H2=1.0, sigma_n2=sigma_n2)


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    config: SystemConfig

    def __post_init__(self):
        self.H.setflags(write=False)

    @property
    def per_user(self) -> list:
        return [user_block(self, k) for k in range(1, self.config.K + 1)]


def draw_channel(config: SystemConfig, seed) -> ChannelRealization:
    """Draw ``H`` with i.i.d. CN(0, sigma_H2) entries."""
    if not isinstance(config, SystemConfig):
        raise ConfigurationError("draw_channel needs a SystemConfig")
    rng = as_generator(seed)
    H = crandn(rng, (config.N, config.M), config.sigma_H2)
    return ChannelRealization(H=H, config=config)


def user_block(H: ChannelRealization, k: int) -> np.ndarray:
    """Rows of ``H`` belonging to user ``k`` (1-based), shape ``N_k x M``."""
    cfg = H.config
    if not 1 <= k <= cfg.K:
        raise IndexError(f"user index {k} outside 1..{cfg.K}")
    off = cfg.row_offsets()
    return H.H[off[k - 1]:off[k]]
