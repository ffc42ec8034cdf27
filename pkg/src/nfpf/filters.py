"""Kalman filter and bootstrap particle filter.

Particle weights live in the log domain until they are normalized, so image
likelihoods of order -1e3 do not underflow.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .dynamics import psd_factor
from .errors import DataError, DegeneracyError, DimensionError, NumericalError, UsageError
from .trajectory import Trajectory, fmt

log = logging.getLogger(__name__)


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))


@dataclass
class ParticleSet:
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.states.shape[0] != self.weights.size or self.weights.size < 1:
            raise DimensionError(
                f"particle set needs N >= 1 states and matching weights, got {self.states.shape} and {self.weights.shape}"
            )

    def __len__(self) -> int:
        return self.weights.size


class Dynamics(Protocol):
    Q: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray
    per_particle: bool
    control_dim: int

    def matrices(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


LogLik = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _sym(C: np.ndarray) -> np.ndarray:
    return 0.5 * (C + C.T)


def kalman_predict(belief: GaussianBelief, A, B, u, Q) -> GaussianBelief:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    d = belief.mean.size
    B = np.asarray(B, dtype=np.float64).reshape(d, -1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if A.shape != (d, d) or Q.shape != (d, d) or B.shape[1] != u.size:
        raise DimensionError(f"kalman_predict: A {A.shape}, B {B.shape}, u {u.shape}, Q {Q.shape} vs d={d}")
    mean = A @ belief.mean + B @ u
    cov = A @ belief.cov @ A.T + Q
    return GaussianBelief(mean, _sym(cov))


def kalman_update(belief: GaussianBelief, H, R, y, return_innovation: bool = False):
    """Conditioning on y = H x + r, r ~ N(0, R), with the Joseph-form covariance."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d, p = belief.mean.size, y.size
    if H.shape != (p, d) or R.shape != (p, p):
        raise DimensionError(f"kalman_update: H {H.shape}, R {R.shape} vs y ({p},) and d={d}")
    P = belief.cov
    S = _sym(H @ P @ H.T + R)
    try:
        K = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError:
        raise NumericalError("kalman_update: singular innovation covariance") from None
    innov = y - H @ belief.mean
    mean = belief.mean + K @ innov
    IKH = np.eye(d) - K @ H
    cov = _sym(IKH @ P @ IKH.T + K @ R @ K.T)
    out = GaussianBelief(mean, cov)
    if return_innovation:
        return out, innov, S
    return out


@dataclass
class KalmanTrace:
    means: np.ndarray
    covs: np.ndarray
    innovations: np.ndarray
    innovation_covs: np.ndarray


def kalman_filter(traj: Trajectory, A, B, Q, H, R, mu0, Sigma0) -> KalmanTrace:
    """Filter a whole trajectory from the prior on x_{-1} (u_{-1} = 0)."""
    belief = GaussianBelief(mu0, Sigma0)
    T, d, p = len(traj), np.size(mu0), np.atleast_2d(H).shape[0]
    means, covs = np.zeros((T, d)), np.zeros((T, d, d))
    innovs, scovs = np.zeros((T, p)), np.zeros((T, p, p))
    for t in range(T):
        belief = kalman_predict(belief, A, B, traj.control_before(t), Q)
        belief, innovs[t], scovs[t] = kalman_update(belief, H, R, traj.observations[t], return_innovation=True)
        means[t], covs[t] = belief.mean, belief.cov
    return KalmanTrace(means, covs, innovs, scovs)


def pf_init(n: int, mu0, Sigma0, rng: np.random.Generator) -> ParticleSet:
    if n < 1:
        raise UsageError("particle count must be at least 1")
    mu0 = np.asarray(mu0, dtype=np.float64).reshape(-1)
    L = psd_factor(Sigma0, "Sigma0")
    states = mu0 + rng.standard_normal((n, mu0.size)) @ L.T
    return ParticleSet(states, np.full(n, 1.0 / n))


def pf_predict(ps: ParticleSet, dynamics: Dynamics, u, rng: np.random.Generator) -> ParticleSet:
    """Propagate every particle through N(A(x) x + B(x) u, Q); weights are kept.

    Row i of the noise draw belongs to particle i, so results do not depend on
    how particles are partitioned for evaluation.
    """
    X = ps.states
    n, d = X.shape
    if dynamics.per_particle:
        A, B = dynamics.matrices(X)
    else:
        A1, B1 = dynamics.matrices(posterior_mean(ps)[None, :])
        A, B = np.broadcast_to(A1, (n,) + A1.shape[1:]), np.broadcast_to(B1, (n,) + B1.shape[1:])
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if A.shape[1:] != (d, d) or B.shape[1:] != (d, u.size):
        raise DimensionError(f"pf_predict: dynamics shapes {A.shape}, {B.shape} vs state {d}, control {u.size}")
    mean = np.einsum("nij,nj->ni", A, X)
    if u.size:
        mean += np.einsum("nij,j->ni", B, u)
    L = psd_factor(dynamics.Q, "process noise Q")
    if np.any(L):
        mean += rng.standard_normal((n, d)) @ L.T
    return ParticleSet(mean, ps.weights.copy())


def pf_weight_update(ps: ParticleSet, loglik: LogLik, y, step: int | None = None) -> ParticleSet:
    """Bootstrap reweighting w_i <- w_i p(y | x_i), normalized via log-sum-exp."""
    ll = np.asarray(loglik(y, ps.states), dtype=np.float64).reshape(-1)
    if ll.size != len(ps):
        raise DimensionError(f"log-likelihood returned {ll.size} values for {len(ps)} particles")
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + ll
    logw[np.isnan(logw)] = -np.inf
    top = logw.max()
    if not np.isfinite(top):
        where = "" if step is None else f" at step {step}"
        if top == np.inf:
            raise DegeneracyError(f"infinite particle log-likelihood{where}")
        raise DegeneracyError(f"all particle likelihoods vanished{where}")
    w = np.exp(logw - top)
    w /= w.sum()
    return ParticleSet(ps.states, w)


def ess(ps: ParticleSet) -> float:
    return float(1.0 / np.sum(ps.weights ** 2))


def systematic_resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    n = len(ps)
    positions = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(ps.weights)
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, positions, side="right"), n - 1)
    return ParticleSet(ps.states[idx], np.full(n, 1.0 / n))


def posterior_mean(ps: ParticleSet) -> np.ndarray:
    return ps.weights @ ps.states


@dataclass
class FilterTrace:
    means: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    weights: list = field(default_factory=list)
    true_states: np.ndarray | None = None

    def __len__(self) -> int:
        return self.means.shape[0]


def _stream(seed: int, step: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, purpose])


def run_filter(
    traj: Trajectory,
    loglik: LogLik,
    dynamics: Dynamics,
    n_particles: int,
    resample_threshold: float = 0.5,
    seed: int = 0,
) -> FilterTrace:
    """Recursive bootstrap PF from x_{-1} ~ N(mu0, Sigma0).

    Step t: predict with u_{t-1}, reweight by p(y_t | x), record the weighted
    mean and ESS, then resample systematically when ESS < threshold * N.
    """
    T = len(traj)
    d = np.size(dynamics.mu0)
    if T and traj.control_dim != dynamics.control_dim:
        raise DimensionError("trajectory control dimension does not match the dynamics model")
    ps = pf_init(n_particles, dynamics.mu0, dynamics.Sigma0, _stream(seed, 0, 0))
    means, esses = np.zeros((T, d)), np.zeros(T)
    flags = np.zeros(T, dtype=bool)
    weights = []
    for t in range(T):
        ps = pf_predict(ps, dynamics, traj.control_before(t), _stream(seed, t + 1, 1))
        ps = pf_weight_update(ps, loglik, traj.observations[t], step=t)
        means[t] = posterior_mean(ps)
        esses[t] = ess(ps)
        weights.append(ps.weights.copy())
        if esses[t] < resample_threshold * n_particles:
            ps = systematic_resample(ps, _stream(seed, t + 1, 2))
            flags[t] = True
    return FilterTrace(means, esses, flags, weights, traj.true_states)


def linear_gaussian_loglik(H, R) -> LogLik:
    """log N(y; H x_i, R) for every particle x_i."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    L = np.linalg.cholesky(R)
    p = H.shape[0]
    const = -0.5 * p * np.log(2.0 * np.pi) - np.sum(np.log(np.diag(L)))

    def loglik(y, states):
        resid = np.asarray(y, dtype=np.float64).reshape(1, p) - states @ H.T
        white = np.linalg.solve(L, resid.T)
        return const - 0.5 * np.sum(white * white, axis=0)

    return loglik


def write_trace(path, trace: FilterTrace) -> None:
    d = trace.means.shape[1]
    de = 0 if trace.true_states is None else trace.true_states.shape[1]
    cols = ["t"] + [f"mean_{i}" for i in range(d)] + ["ess", "resampled"] + [f"true_{i}" for i in range(de)]
    lines = [",".join(cols)]
    for t in range(len(trace)):
        row = [str(t)] + [fmt(v) for v in trace.means[t]] + [fmt(trace.ess[t]), str(int(trace.resampled[t]))]
        if de:
            row += [fmt(v) for v in trace.true_states[t]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> FilterTrace:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from None
    if not lines:
        raise DataError(f"{path}: empty trace file")
    cols = lines[0].split(",")
    mean_cols = [i for i, c in enumerate(cols) if c.startswith("mean_")]
    true_cols = [i for i, c in enumerate(cols) if c.startswith("true_")]
    if cols[0] != "t" or "ess" not in cols or "resampled" not in cols:
        raise DataError(f"{path}: trace header must contain t, mean_*, ess, resampled")
    expected = [f"mean_{i}" for i in range(len(mean_cols))]
    if [cols[i] for i in mean_cols] != expected:
        raise DataError(f"{path}: mean columns are not mean_0..mean_{len(mean_cols) - 1}")
    rows = []
    for k, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise DataError(f"{path}: row {k} has {len(parts)} columns, header has {len(cols)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise DataError(f"{path}: row {k} is not numeric") from None
    data = np.array(rows).reshape(len(rows), len(cols))
    true = data[:, true_cols] if true_cols else None
    return FilterTrace(
        means=data[:, mean_cols],
        ess=data[:, cols.index("ess")],
        resampled=data[:, cols.index("resampled")].astype(bool),
        true_states=true,
    )
