"""Maximum-likelihood training of flow, mean network and dynamics network.

The objective for a window of steps t = k..k+K is

    -sum_t [ log N(g^{-1}(y_t); mean_net(x_t), sigma^2 I) + log|det J_{g^{-1}}(y_t)| ]

where x_t follows the noiseless latent recurrence x_t = A(x_{t-1}) x_{t-1} +
B(x_{t-1}) u_{t-1} started from x_{-1} = mu0.  Windows are processed one at a
time; there is no batching across trajectories.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dynamics import DynamicsModel, dynamics_forward
from .errors import ConfigError, DataError, NumericalError, UsageError
from .flow import FlowModel, flow_inverse, gaussian_logpdf
from .trajectory import Trajectory, fmt

log = logging.getLogger(__name__)

DEQUANT_WIDTH = 1.0 / 256.0


@dataclass
class TrainingConfig:
    window: int = 8
    lr: float = 1e-3
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    dequantize: bool = True

    def __post_init__(self):
        if self.window < 0:
            raise ConfigError("window K must be non-negative")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("optimizer moments beta1, beta2 must lie in (0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")


def _step(dyn: DynamicsModel, x: Tensor, u: np.ndarray) -> Tensor:
    A, B = dynamics_forward(dyn.net, x)
    nxt = A @ x
    if u.size:
        nxt = nxt + B @ Tensor._wrap(u)
    return nxt


def latent_rollout(dyn: DynamicsModel, traj: Trajectory, k: int, K: int) -> Tensor:
    """States x_k..x_{k+K} as a (K+1, d) tensor; the prefix before k carries no gradient."""
    x = Tensor._wrap(np.array(dyn.mu0, dtype=np.float64))
    with ad.no_grad():
        for t in range(k):
            x = _step(dyn, x, traj.control_before(t))
    x = Tensor._wrap(x.data)
    states = []
    for t in range(k, k + K + 1):
        x = _step(dyn, x, traj.control_before(t))
        states.append(x)
    return ad.stack(states)


def window_terms(
    flow: FlowModel,
    dyn: DynamicsModel,
    traj: Trajectory,
    k: int,
    K: int,
    noise: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Negated (Gaussian base term, log-det term) summed over the window."""
    T = len(traj)
    if k < 0 or K < 0 or k + K >= T:
        raise UsageError(f"window k={k}, K={K} out of range for trajectory of length {T}")
    xs = latent_rollout(dyn, traj, k, K)
    y = traj.observations[k : k + K + 1]
    if noise is not None:
        y = y + noise
    z, logdet = flow_inverse(flow, y, xs if flow.conditional else None)
    base = gaussian_logpdf(z, flow.mean(xs), flow.sigma)
    return -ad.tsum(base), -ad.tsum(logdet)


def window_nll(flow, dyn, traj, k, K, noise=None) -> Tensor:
    base, logdet = window_terms(flow, dyn, traj, k, K, noise)
    return base + logdet


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def optimizer_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    cfg: TrainingConfig,
    names: Sequence[str] | None = None,
) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"parameter {i}"
            raise NumericalError(f"non-finite gradient for {label}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def window_starts(T: int, K: int) -> list[int]:
    """Non-overlapping windows of K+1 steps."""
    return list(range(0, T - K, K + 1))


@dataclass
class TrainResult:
    history: list[tuple[int, int, float]] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)

    @property
    def final_nll(self) -> float:
        return self.epoch_means[-1] if self.epoch_means else float("nan")


def train(
    flow: FlowModel,
    dyn: DynamicsModel,
    dataset: Sequence[Trajectory],
    cfg: TrainingConfig,
    save_fn=None,
) -> TrainResult:
    """Joint training of all parameters; returns per-window and per-epoch losses.

    ``save_fn(epoch)`` is called after every epoch when given (the CLI uses it
    to write checkpoints).
    """
    if not dataset:
        raise DataError("training needs at least one trajectory")
    D, m = dataset[0].obs_dim, dataset[0].control_dim
    for i, tr in enumerate(dataset):
        if tr.obs_dim != D or tr.control_dim != m:
            raise DataError(f"trajectory {i} has dimensions (D={tr.obs_dim}, m={tr.control_dim}), expected ({D}, {m})")
    if D != flow.dim or m != dyn.control_dim:
        raise DataError(f"data dimensions (D={D}, m={m}) do not match the model ({flow.dim}, {dyn.control_dim})")

    named = list(flow.named_parameters()) + list(dyn.named_parameters())
    names = [n for n, _ in named]
    params = [p for _, p in named]
    state = AdamState.zeros_like(params)

    windows = []
    for i, tr in enumerate(dataset):
        for k in window_starts(len(tr), cfg.window):
            windows.append((i, k))
    if not windows:
        raise DataError(f"no trajectory is long enough for a window of {cfg.window + 1} steps")

    noise = {}
    if cfg.dequantize:
        rng = np.random.default_rng([cfg.seed, 1])
        for i, k in windows:
            noise[(i, k)] = rng.uniform(0.0, DEQUANT_WIDTH, size=(cfg.window + 1, D))

    result = TrainResult()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(len(windows))
        total = 0.0
        for w in order:
            i, k = windows[w]
            for p in params:
                p.grad = None
            try:
                with Tape() as tape:
                    loss = window_nll(flow, dyn, dataset[i], k, cfg.window, noise.get((i, k)))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericalError("non-finite window NLL")
                tape.backward(loss)
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                clip_gradients(grads, cfg.clip_norm)
                optimizer_step(params, grads, state, cfg, names)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, window {w}: {exc}") from exc
            finally:
                for p in params:
                    p.grad = None
            result.history.append((epoch, int(w), value))
            total += value
        result.epoch_means.append(total / len(windows))
        log.info("epoch %d mean NLL %.6f", epoch, result.epoch_means[-1])
        if save_fn is not None:
            save_fn(epoch)
    return result


def write_loss_csv(path, history) -> None:
    lines = ["epoch,window,nll"] + [f"{e},{w},{fmt(v)}" for e, w, v in history]
    Path(path).write_text("\n".join(lines) + "\n")
