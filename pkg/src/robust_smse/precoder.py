"""Robust minimum sum-MSE linear precoding through the virtual uplink.

Matrix conventions (see :mod:`robust_smse.channel`): ``H_hat`` is ``N x M``.
Uplink transmit beamformers are stored as one block-diagonal ``N x L``
matrix ``V`` whose column ``i`` is supported on the rows of the user that
owns stream ``i``.  Stream powers are a length-``L`` vector ``q``.  Uplink
receive filters ``U`` are ``M x L``.

With equal estimation-error variances, the robust design is the
perfect-CSI design with the noise power replaced by the effective noise
``sigma_eff2 = sigma_n2 + sigma_e2 * P_D``.  The resulting problem, minimize
``tr[R^-1]`` with ``R = H^H V Q V^H H + sigma_eff2 I`` over transmit
covariances with total trace ``P_D``, is convex in the per-user covariances
``S_k = V_k Q_k V_k^H`` and is solved here by projected gradient descent in
that domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import SystemConfig
from .errors import DomainError

__all__ = [
    "VirtualUplinkSolution",
    "DownlinkSolution",
    "stack_beamformers",
    "covariance_matrix",
    "smse_objective",
    "uplink_mse_matrices",
    "uplink_stream_mse",
    "effective_noise_general",
    "robust_smse",
    "wiener_receive_filters",
    "solve_min_smse",
    "duality_transform",
    "downlink_stream_mse",
]

ZERO_POWER_FRACTION = 1e-12
_MAX_BACKTRACK = 60


@dataclass
class VirtualUplinkSolution:
    V: np.ndarray
    q: np.ndarray
    U: np.ndarray
    smse: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    config: Optional[SystemConfig] = field(default=None, repr=False)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)

    @property
    def zero_power(self) -> np.ndarray:
        return self.q == 0

    def V_blocks(self) -> list:
        cfg = self.config
        r, s = cfg.row_offsets(), cfg.stream_offsets()
        return [self.V[r[k]:r[k + 1], s[k]:s[k + 1]] for k in range(cfg.K)]


@dataclass
class DownlinkSolution:
    """Downlink precoder ``U_dl`` (unit-norm columns), stream powers ``p`` and
    receive filters.  ``B`` is the block-diagonal ``N x L`` matrix of receive
    vectors; user ``k`` applies ``V_dl[k] = B_k^H`` (``L_k x N_k``)."""

    U_dl: np.ndarray
    p: np.ndarray
    B: np.ndarray
    V_dl: list
    per_stream_mse: np.ndarray
    dropped: np.ndarray

    @property
    def P(self) -> np.ndarray:
        return np.diag(self.p)


def stack_beamformers(blocks, config: SystemConfig) -> np.ndarray:
    """Block-diagonal ``N x L`` matrix from per-user ``N_k x L_k`` blocks."""
    V = np.zeros((config.N, config.L), dtype=complex)
    r, s = config.row_offsets(), config.stream_offsets()
    for k, Vk in enumerate(blocks):
        V[r[k]:r[k + 1], s[k]:s[k + 1]] = Vk
    return V


def _q_vector(Q) -> np.ndarray:
    Q = np.asarray(Q)
    return np.real(np.diag(Q)) if Q.ndim == 2 else Q.astype(float)


def covariance_matrix(H_hat, V, Q, sigma_eff2: float) -> np.ndarray:
    """``R = H^H V Q V^H H + sigma_eff2 I_M``."""
    G = H_hat.conj().T @ V
    R = (G * _q_vector(Q)) @ G.conj().T
    R[np.diag_indices_from(R)] += sigma_eff2
    return R


def smse_objective(H_hat, V, Q, sigma_eff2: float, L: Optional[int] = None,
                   M: Optional[int] = None) -> float:
    """Sum-MSE with Wiener receivers: ``L - M + sigma_eff2 tr[R^-1]``."""
    L = V.shape[1] if L is None else L
    M = H_hat.shape[1] if M is None else M
    R = covariance_matrix(H_hat, V, Q, sigma_eff2)
    return float(L - M + sigma_eff2 * np.trace(np.linalg.inv(R)).real)


def wiener_receive_filters(H_hat, V, Q, sigma_eff2: float) -> np.ndarray:
    """MMSE receive filters ``U = R^-1 H^H V sqrt(Q)`` (``M x L``)."""
    q = _q_vector(Q)
    R = covariance_matrix(H_hat, V, q, sigma_eff2)
    return np.linalg.solve(R, (H_hat.conj().T @ V) * np.sqrt(q))


def uplink_mse_matrices(H_hat, V, Q, U, sigma_eff2: float, config: SystemConfig) -> list:
    """Per-user MSE matrices ``U_k^H R U_k - U_k^H G_k - G_k^H U_k + I`` for
    arbitrary receive filters ``U``, where ``G_k = H_k^H V_k sqrt(Q_k)``."""
    q = _q_vector(Q)
    R = covariance_matrix(H_hat, V, q, sigma_eff2)
    G = (H_hat.conj().T @ V) * np.sqrt(q)
    s = config.stream_offsets()
    out = []
    for k in range(config.K):
        Uk, Gk = U[:, s[k]:s[k + 1]], G[:, s[k]:s[k + 1]]
        cross = Uk.conj().T @ Gk
        out.append(Uk.conj().T @ R @ Uk - cross - cross.conj().T + np.eye(Uk.shape[1]))
    return out


def uplink_stream_mse(H_hat, V, Q, U, sigma_eff2: float) -> np.ndarray:
    """Diagonal of the uplink MSE matrix, one entry per stream."""
    q = _q_vector(Q)
    R = covariance_matrix(H_hat, V, q, sigma_eff2)
    G = (H_hat.conj().T @ V) * np.sqrt(q)
    quad = np.einsum("mi,mn,ni->i", U.conj(), R, U).real
    return quad - 2 * np.einsum("mi,mi->i", U.conj(), G).real + 1.0


def effective_noise_general(sigma_n2: float, sigma_k2_list, V, Q, config: SystemConfig) -> float:
    """``sigma_n2 + sum_k sigma_k^2 tr[V_k Q_k V_k^H]`` for per-user error variances."""
    sig = np.asarray(sigma_k2_list, dtype=float)
    if np.any(sig < 0):
        raise DomainError("error variances must be non-negative")
    q = _q_vector(Q)
    col_power = q * np.sum(np.abs(V) ** 2, axis=0)
    owner = config.stream_owner()
    per_user = np.bincount(owner, weights=col_power, minlength=config.K)
    return float(sigma_n2 + sig @ per_user)


def robust_smse(H_hat, V, Q, sigma_n2: float, sigma_k2_list, config: SystemConfig) -> float:
    """Sum-MSE under per-user error variances (objective evaluation only)."""
    s2 = effective_noise_general(sigma_n2, sigma_k2_list, V, Q, config)
    return smse_objective(H_hat, V, Q, s2, config.L, config.M)


# --- solver ---------------------------------------------------------------

def _simplex_projection(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = total}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(u) + 1)
    r = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[r] / (r + 1)
    return np.maximum(v - theta, 0.0)


class _CovarianceProblem:
    def __init__(self, H_hat, P_D, sigma2, config):
        self.blocks = [H_hat[a:b] for a, b in zip(config.row_offsets()[:-1], config.row_offsets()[1:])]
        self.ranks = [min(l, n) for l, n in zip(config.L_k, config.N_k)]
        self.P_D = P_D
        self.sigma2 = sigma2
        self.M = config.M

    def R(self, S):
        R = self.sigma2 * np.eye(self.M, dtype=complex)
        for Hk, Sk in zip(self.blocks, S):
            R += Hk.conj().T @ Sk @ Hk
        return R

    def value(self, S):
        Ri = np.linalg.inv(self.R(S))
        return float(np.trace(Ri).real), Ri

    def gradient(self, Ri):
        Ri2 = Ri @ Ri
        grads = []
        for Hk in self.blocks:
            g = -(Hk @ Ri2 @ Hk.conj().T)
            grads.append(0.5 * (g + g.conj().T))
        return grads

    def project(self, S):
        eig = []
        for Sk, r in zip(S, self.ranks):
            w, E = np.linalg.eigh(0.5 * (Sk + Sk.conj().T))
            # descending, keep the leading r
            eig.append((w[::-1][:r], E[:, ::-1][:, :r]))
        lam = _simplex_projection(np.concatenate([w for w, _ in eig]), self.P_D)
        out, pos = [], 0
        for w, E in eig:
            lk = lam[pos:pos + len(w)]
            pos += len(w)
            out.append((E * lk) @ E.conj().T)
        return out

    def fw_gap(self, S, grads):
        lin = sum(np.vdot(g, s).real for g, s in zip(grads, S))
        lam_min = min(np.linalg.eigvalsh(g)[0] for g in grads)
        return lin - self.P_D * lam_min


def _inner(A, B):
    return sum(np.vdot(a, b).real for a, b in zip(A, B))


def _initial_covariances(H_hat, P_D, config, init):
    r = config.row_offsets()
    S = []
    if init is None:
        q = P_D / config.L
        for k in range(config.K):
            Hk = H_hat[r[k]:r[k + 1]]
            Uk = np.linalg.svd(Hk, full_matrices=True)[0]
            cols = [Uk[:, j % Uk.shape[1]] for j in range(config.L_k[k])]
            Vk = np.stack(cols, axis=1)
            S.append(q * Vk @ Vk.conj().T)
        return S
    rng = init
    weights = rng.dirichlet(np.ones(config.L)) * P_D
    s = config.stream_offsets()
    for k in range(config.K):
        Vk = rng.standard_normal((config.N_k[k], config.L_k[k])) \
            + 1j * rng.standard_normal((config.N_k[k], config.L_k[k]))
        Vk /= np.linalg.norm(Vk, axis=0)
        S.append((Vk * weights[s[k]:s[k + 1]]) @ Vk.conj().T)
    return S


def _factor(S, P_D, config):
    """Unit-norm beamformers and powers from per-user covariances."""
    blocks, powers = [], []
    for Sk, Lk in zip(S, config.L_k):
        w, E = np.linalg.eigh(0.5 * (Sk + Sk.conj().T))
        w, E = np.maximum(w[::-1], 0.0), E[:, ::-1]
        cols = [E[:, j] if j < E.shape[1] else E[:, -1] for j in range(Lk)]
        qk = np.array([w[j] if j < len(w) else 0.0 for j in range(Lk)])
        blocks.append(np.stack(cols, axis=1))
        powers.append(qk)
    q = np.concatenate(powers)
    q[q < ZERO_POWER_FRACTION * P_D] = 0.0
    if q.sum() > 0:
        q *= P_D / q.sum()
    return stack_beamformers(blocks, config), q


def solve_min_smse(H_hat, P_D: float, sigma_eff2: float, config: SystemConfig,
                   tolerance: float = 1e-8, max_iters: int = 500,
                   init: Optional[np.random.Generator] = None) -> VirtualUplinkSolution:
    """Minimum sum-MSE virtual-uplink design at data power ``P_D``.

    Projected gradient with Armijo backtracking on the transmit covariances,
    so the sum-MSE never increases between iterations.  Converged when the
    Frank-Wolfe duality gap (an upper bound on the distance to the optimum)
    is below ``tolerance`` times the current sum-MSE.  When some user has
    fewer streams than antennas the covariance rank is capped, the problem
    is no longer convex and the stopping rule falls back to a relative
    change below ``tolerance``.

    ``init`` may be a random generator for a random feasible start;
    otherwise powers start uniform on the leading singular directions of
    each user's channel.
    """
    if not P_D > 0:
        raise DomainError(f"data power must be positive, got {P_D}")
    if not sigma_eff2 > 0:
        raise DomainError("effective noise must be positive")
    H_hat = np.asarray(H_hat)
    prob = _CovarianceProblem(H_hat, P_D, sigma_eff2, config)
    rank_capped = any(l < n for l, n in zip(config.L_k, config.N_k))
    offset = config.L - config.M

    S = prob.project(_initial_covariances(H_hat, P_D, config, init))
    f, Ri = prob.value(S)
    grads = prob.gradient(Ri)
    history = [offset + sigma_eff2 * f]
    step = P_D / max(max(np.abs(g).max() for g in grads), 1e-300)
    floor = 16 * np.finfo(float).eps
    converged = False
    it = 0
    while it < max_iters:
        if sigma_eff2 * prob.fw_gap(S, grads) <= tolerance * history[-1]:
            converged = True
            break
        for _ in range(_MAX_BACKTRACK):
            S_new = prob.project([s - step * g for s, g in zip(S, grads)])
            D = [a - b for a, b in zip(S_new, S)]
            dd = _inner(D, D)
            f_new, Ri_new = prob.value(S_new)
            if f_new <= f + _inner(grads, D) + dd / (2 * step):
                break
            step *= 0.5
        if not f_new < f * (1 - floor):
            # no decrease representable in floating point: at the optimum
            # up to rounding
            converged = True
            break
        it += 1
        grads_new = prob.gradient(Ri_new)
        # Barzilai-Borwein trial step for the next iteration
        dg = _inner(D, [a - b for a, b in zip(grads_new, grads)])
        step = dd / dg if dg > 0 else 2 * step
        rel_change = (f - f_new) / f
        S, f, grads = S_new, f_new, grads_new
        history.append(offset + sigma_eff2 * f)
        if rank_capped and rel_change < tolerance:
            converged = True
            break

    V, q = _factor(S, P_D, config)
    U = wiener_receive_filters(H_hat, V, q, sigma_eff2)
    return VirtualUplinkSolution(V=V, q=q, U=U, smse=smse_objective(H_hat, V, q, sigma_eff2),
                                 iterations=it, converged=converged, history=history, config=config)


# --- duality --------------------------------------------------------------

def downlink_stream_mse(H, U_dl, p, B, sigma2: float) -> np.ndarray:
    """Per-stream downlink MSE for precoder ``U_dl sqrt(p)`` and receive
    vectors ``B`` (column ``i`` applied by the owner of stream ``i``)."""
    C = B.conj().T @ H @ U_dl
    p = np.asarray(p, dtype=float)
    interference = np.abs(C) ** 2 @ p
    noise = sigma2 * np.sum(np.abs(B) ** 2, axis=0)
    return interference + noise - 2 * np.sqrt(p) * np.diag(C).real + 1.0


def duality_transform(sol: VirtualUplinkSolution, H_hat, sigma_eff2: float) -> DownlinkSolution:
    """Downlink filters and powers with the same per-stream MSEs as ``sol``.

    Downlink beam ``i`` is the normalized uplink receive filter ``w_i``;
    the downlink receiver of stream ``i`` is ``sqrt(q_i)/c_i v_i`` with
    ``c_i^2 = x_i`` solving ``(diag(tau) - diag(q) C) x = sigma^2 q``, where
    ``C[i, j] = |v_i^H H w_j|^2`` and ``tau`` is the uplink MSE-less-one
    denominator.  Streams with zero power are dropped from the system and
    get zero downlink power.
    """
    cfg = sol.config
    H_hat = np.asarray(H_hat)
    W, V, q = sol.U, sol.V, sol.q
    wnorm = np.linalg.norm(W, axis=0)
    active = (q > 0) & (wnorm > 0)
    L = len(q)

    U_dl = np.zeros((cfg.M, L), dtype=complex)
    U_dl[0, :] = 1.0
    p = np.zeros(L)
    B = np.zeros((cfg.N, L), dtype=complex)
    if active.any():
        idx = np.nonzero(active)[0]
        Wa, Va, qa = W[:, idx], V[:, idx], q[idx]
        C = np.abs(Va.conj().T @ H_hat @ Wa) ** 2
        tau = C.T @ qa + sigma_eff2 * wnorm[idx] ** 2
        x = np.linalg.solve(np.diag(tau) - qa[:, None] * C, sigma_eff2 * qa)
        U_dl[:, idx] = Wa / wnorm[idx]
        p[idx] = x * wnorm[idx] ** 2
        B[:, idx] = Va * (np.sqrt(qa) / np.sqrt(x))

    r, s = cfg.row_offsets(), cfg.stream_offsets()
    V_dl = [B[r[k]:r[k + 1], s[k]:s[k + 1]].conj().T for k in range(cfg.K)]
    mse = downlink_stream_mse(H_hat, U_dl, p, B, sigma_eff2)
    return DownlinkSolution(U_dl=U_dl, p=p, B=B, V_dl=V_dl, per_stream_mse=mse, dropped=~active)
