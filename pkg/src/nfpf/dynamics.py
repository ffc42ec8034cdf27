"""Latent linear dynamics x' = A(x) x + B(x) u + q and their diagnostics.

A and B come out of a small network evaluated at the current latent state and
are rescaled to unit Frobenius norm.  The control input is not an input of the
network.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ConvergenceError,
    CovarianceError,
    DegenerateMatrixError,
    DimensionError,
    NumericalError,
)
from .nn import MLP

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
RANK_RTOL = 1e-8


def frobenius_normalize(M):
    """Return ``M / ||M||_F``.

    Accepts a Tensor (differentiable; a leading batch axis normalizes each
    matrix separately) or anything array-like, in which case an ndarray is
    returned.
    """
    if not isinstance(M, Tensor):
        M = np.asarray(M, dtype=np.float64)
        norm = np.sqrt(np.sum(M * M))
        if not norm > NORM_FLOOR:
            raise DegenerateMatrixError(f"Frobenius norm {norm:.3g} too small to normalize")
        return M / norm
    axes = (-2, -1) if M.ndim >= 2 else None
    norm = ad.sqrt(ad.tsum(ad.square(M), axis=axes, keepdims=M.ndim >= 2))
    if not np.all(norm.data > NORM_FLOOR):
        raise DegenerateMatrixError(
            f"Frobenius norm {float(np.min(norm.data)):.3g} too small to normalize"
        )
    return M / norm


def psd_factor(S, what: str = "covariance") -> np.ndarray:
    """Factor L with L L^T = S: Cholesky when S is definite, eigen-based when singular."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {S.shape}")
    if not np.allclose(S, S.T, atol=1e-10, rtol=0.0):
        raise CovarianceError(f"{what} is not symmetric")
    if not np.any(S):
        return np.zeros_like(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(S)
    if vals.min() < -1e-10 * max(1.0, vals.max()):
        raise CovarianceError(f"{what} is not positive semi-definite (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _conform(A, B, x, u):
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64).reshape(A.shape[0], -1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if A.shape != (x.size, x.size) or B.shape[1] != u.size:
        raise DimensionError(
            f"dynamics shapes do not conform: A {A.shape}, B {B.shape}, x {x.shape}, u {u.shape}"
        )
    return A, B, x, u


def predict_mean(A, B, x, u) -> np.ndarray:
    """Noiseless transition ``A x + B u``."""
    A, B, x, u = _conform(A, B, x, u)
    return A @ x + B @ u


def sample_transition(A, B, x, u, Q, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(A x + B u, Q)."""
    mean = predict_mean(A, B, x, u)
    L = psd_factor(Q, "process noise Q")
    if L.shape[0] != mean.size:
        raise DimensionError(f"Q shape {L.shape} does not match state dimension {mean.size}")
    return mean + L @ rng.standard_normal(mean.size)


def spectral_radius(A, tol: float = 1e-13, max_iter: int = 10_000) -> float:
    """Largest |eigenvalue| of A.

    Exact for d <= 2.  For larger d this returns the spectral norm ||A||_2
    from power iteration on A^T A, which bounds the spectral radius from above.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"spectral_radius needs a square matrix, got {A.shape}")
    d = A.shape[0]
    if d == 0:
        return 0.0
    if d == 1:
        rho = abs(A[0, 0])
    elif d == 2:
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        disc = 0.25 * tr * tr - det
        if disc >= 0:
            r = np.sqrt(disc)
            rho = max(abs(0.5 * tr + r), abs(0.5 * tr - r))
        else:
            rho = np.sqrt(max(det, 0.0))
    else:
        rho = _power_spectral_norm(A, tol, max_iter)
    if rho > 1.0 - 1e-6:
        log.warning("spectral radius %.12f is at or above the stability margin", rho)
    return float(rho)


def _power_spectral_norm(A: np.ndarray, tol: float, max_iter: int) -> float:
    G = A.T @ A
    scale = np.max(np.abs(G))
    if scale == 0.0:
        return 0.0
    G = G / scale
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0]) + 1e-3 * np.arange(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-300):
            return float(np.sqrt(lam_new * scale))
        lam = lam_new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def controllability_rank(A, B) -> int:
    """Numerical rank of [B, AB, ..., A^{d-1} B] (relative tolerance 1e-8)."""
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    B = np.asarray(B, dtype=np.float64).reshape(d, -1)
    if A.shape != (d, d):
        raise DimensionError(f"A must be square, got {A.shape}")
    blocks, blk = [], B
    for _ in range(d):
        blocks.append(blk)
        blk = A @ blk
    C = np.hstack(blocks)
    if C.size == 0:
        return 0
    s = np.linalg.svd(C, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


class DynamicsNet:
    """Network mapping a latent state to unnormalized (A, B), row-major."""

    def __init__(self, latent_dim: int, control_dim: int, hidden: int, rng: np.random.Generator):
        self.latent_dim = latent_dim
        self.control_dim = control_dim
        out = latent_dim * latent_dim + latent_dim * control_dim
        self.mlp = MLP([latent_dim, hidden, out], rng)
        # raw (A, B) must be nonzero at x = 0, where every hidden unit is 0
        bias = self.mlp.output.b.data
        bias[: latent_dim * latent_dim] = np.eye(latent_dim).ravel()
        bias[latent_dim * latent_dim :] = 1.0

    def __call__(self, x) -> Tensor:
        return self.mlp(x)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return self.mlp.named_parameters(prefix)


def dynamics_forward(net: DynamicsNet, x) -> tuple[Tensor, Tensor]:
    """Unit-Frobenius (A, B) at latent state ``x`` (shape (d,) or (N, d))."""
    x = x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))
    d, m = net.latent_dim, net.control_dim
    if x.shape[-1] != d:
        raise DimensionError(f"latent state has dimension {x.shape[-1]}, dynamics net expects {d}")
    raw = net(x)
    if not np.all(np.isfinite(raw.data)):
        raise NumericalError("dynamics network produced non-finite output")
    lead = raw.shape[:-1]
    A = frobenius_normalize(ad.reshape(raw[..., : d * d], lead + (d, d)))
    if m == 0:
        B = Tensor._wrap(np.zeros(lead + (d, 0)))
    else:
        B = frobenius_normalize(ad.reshape(raw[..., d * d :], lead + (d, m)))
    return A, B


@dataclass
class DynamicsModel:
    """Dynamics network plus the fixed noise model (Q, mu0, Sigma0)."""

    net: DynamicsNet
    Q: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray
    per_particle: bool = True

    @classmethod
    def create(
        cls,
        latent_dim: int,
        control_dim: int,
        hidden: int = 32,
        process_noise: float = 1e-4,
        rng: np.random.Generator | None = None,
        per_particle: bool = True,
    ) -> "DynamicsModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(
            net=DynamicsNet(latent_dim, control_dim, hidden, rng),
            Q=process_noise * np.eye(latent_dim),
            mu0=np.zeros(latent_dim),
            Sigma0=np.eye(latent_dim),
            per_particle=per_particle,
        )

    @property
    def latent_dim(self) -> int:
        return self.net.latent_dim

    @property
    def control_dim(self) -> int:
        return self.net.control_dim

    def named_parameters(self, prefix: str = "dyn.") -> Iterator[tuple[str, Tensor]]:
        return self.net.named_parameters(prefix)

    def matrices(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched (A, B) as arrays of shape (N, d, d) and (N, d, m)."""
        states = np.atleast_2d(states)
        with ad.no_grad():
            A, B = dynamics_forward(self.net, states)
        return A.data, B.data


@dataclass
class LinearDynamics:
    """Constant (A, B) system exposing the same interface as DynamicsModel."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    mu0: np.ndarray = None
    Sigma0: np.ndarray = None
    per_particle: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        d = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=np.float64).reshape(d, -1)
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.mu0 = np.zeros(d) if self.mu0 is None else np.asarray(self.mu0, dtype=np.float64)
        self.Sigma0 = np.eye(d) if self.Sigma0 is None else np.asarray(self.Sigma0, dtype=np.float64)

    @property
    def latent_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def matrices(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = np.atleast_2d(states).shape[0]
        return (
            np.broadcast_to(self.A, (n,) + self.A.shape),
            np.broadcast_to(self.B, (n,) + self.B.shape),
        )
