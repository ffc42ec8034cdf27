"""Conditional affine-coupling flow and the observation log-likelihood it induces.

The generative direction maps a base variable z ~ N(mean_net(x), sigma^2 I)
to an observation y.  Each coupling layer keeps one half of the coordinates
(alternating even/odd indices) and transforms the other half:

    y_active = z_active * exp(s(z_pass)) + t(z_pass)

with log-scales bounded as s = 2 tanh(raw).  In conditional mode the latent
state is concatenated to the pass-through half before entering s and t.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, NumericalError
from .nn import MLP

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class FlowConfig:
    dim: int
    latent_dim: int
    n_layers: int = 4
    hidden: int = 64
    mean_hidden: int = 64
    sigma: float = 1.0
    conditional: bool = False
    scale_bound: float = 2.0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("flow dimension must be at least 2 for coupling layers")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be non-negative")


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


class CouplingLayer:
    def __init__(self, mask: np.ndarray, cond_dim: int, hidden: int, rng: np.random.Generator,
                 scale_bound: float = 2.0):
        mask = np.asarray(mask, dtype=bool)
        if mask.all() or not mask.any():
            raise ConfigError("coupling mask needs at least one pass-through and one transformed entry")
        self.mask = mask
        self.pass_idx = np.flatnonzero(mask)
        self.act_idx = np.flatnonzero(~mask)
        self.inv_perm = np.argsort(np.concatenate([self.pass_idx, self.act_idx]))
        self.cond_dim = cond_dim
        self.scale_bound = scale_bound
        n_in = self.pass_idx.size + cond_dim
        self.scale_net = MLP([n_in, hidden, self.act_idx.size], rng)
        self.shift_net = MLP([n_in, hidden, self.act_idx.size], rng)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.scale_net.named_parameters(prefix + "scale.")
        yield from self.shift_net.named_parameters(prefix + "shift.")

    def _st(self, passed: Tensor, cond: Tensor | None):
        h = passed if cond is None else ad.concat([passed, cond], axis=-1)
        s = self.scale_bound * ad.tanh(self.scale_net(h))
        return s, self.shift_net(h)

    def inverse(self, y: Tensor, cond: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Observation side -> base side; returns (z, log|det dz/dy|) per row."""
        passed = ad.take(y, self.pass_idx, axis=-1)
        s, t = self._st(passed, cond)
        z_act = (ad.take(y, self.act_idx, axis=-1) - t) * ad.exp(-s)
        z = ad.take(ad.concat([passed, z_act], axis=-1), self.inv_perm, axis=-1)
        return z, -ad.tsum(s, axis=-1)

    def forward(self, z: Tensor, cond: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Base side -> observation side; returns (y, log|det dy/dz|) per row."""
        passed = ad.take(z, self.pass_idx, axis=-1)
        s, t = self._st(passed, cond)
        y_act = ad.take(z, self.act_idx, axis=-1) * ad.exp(s) + t
        y = ad.take(ad.concat([passed, y_act], axis=-1), self.inv_perm, axis=-1)
        return y, ad.tsum(s, axis=-1)


class FlowModel:
    """Coupling flow g, conditional mean network and constant isotropic sigma."""

    def __init__(self, config: FlowConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        D, d = config.dim, config.latent_dim
        even = np.arange(D) % 2 == 0
        cond_dim = d if config.conditional else 0
        self.layers = [
            CouplingLayer(even if i % 2 == 0 else ~even, cond_dim, config.hidden, rng, config.scale_bound)
            for i in range(config.n_layers)
        ]
        self.mean_net = MLP([d, config.mean_hidden, D], rng)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def sigma(self) -> float:
        return self.config.sigma

    @property
    def conditional(self) -> bool:
        return self.config.conditional

    def named_parameters(self, prefix: str = "flow.") -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}layer{i}.")
        yield from self.mean_net.named_parameters(prefix + "mean.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def flow_parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for _, p in layer.named_parameters()]

    def mean(self, x) -> Tensor:
        return self.mean_net(_t(x))

    def loglik(self, y, states) -> np.ndarray:
        """Untaped log p(y | x_i) for one observation against a batch of states."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        with ad.no_grad():
            if self.conditional:
                ys = np.broadcast_to(y, (states.shape[0], y.size))
                return observation_loglik(self, ys, states).data
            z, logdet = flow_inverse(self, y)
            mu = self.mean(states)
            return gaussian_logpdf(z.data, mu.data, self.sigma).data + float(logdet.data)


def _prepare(flow: FlowModel, v, x):
    v = _t(v)
    if v.shape[-1] != flow.dim:
        raise DimensionError(f"observation dimension {v.shape[-1]} does not match flow dimension {flow.dim}")
    single = v.ndim == 1
    if single:
        v = ad.reshape(v, (1, flow.dim))
    cond = None
    if flow.conditional:
        if x is None:
            raise DimensionError("conditional flow needs the latent state")
        cond = _t(x)
        if cond.ndim == 1:
            cond = ad.reshape(cond, (1, cond.shape[0]))
        if cond.shape != (v.shape[0], flow.latent_dim):
            raise DimensionError(f"latent batch {cond.shape} does not match observation batch {v.shape}")
    return v, cond, single


def flow_inverse(flow: FlowModel, y, x=None) -> tuple[Tensor, Tensor]:
    """z = g^{-1}(y) and log|det J_{g^{-1}}(y)|; ``x`` is needed only in conditional mode."""
    v, cond, single = _prepare(flow, y, x)
    logdet = Tensor._wrap(np.zeros(v.shape[0]))
    for layer in flow.layers:
        v, ld = layer.inverse(v, cond)
        logdet = logdet + ld
    if not np.all(np.isfinite(v.data)):
        raise NumericalError("flow inverse produced non-finite values")
    if single:
        return ad.reshape(v, (flow.dim,)), ad.reshape(logdet, ())
    return v, logdet


def flow_forward(flow: FlowModel, z, x=None) -> Tensor:
    """y = g(z), the exact inverse of :func:`flow_inverse`."""
    return flow_forward_logdet(flow, z, x)[0]


def flow_forward_logdet(flow: FlowModel, z, x=None) -> tuple[Tensor, Tensor]:
    v, cond, single = _prepare(flow, z, x)
    logdet = Tensor._wrap(np.zeros(v.shape[0]))
    for layer in reversed(flow.layers):
        v, ld = layer.forward(v, cond)
        logdet = logdet + ld
    if not np.all(np.isfinite(v.data)):
        raise NumericalError("flow forward produced non-finite values")
    if single:
        return ad.reshape(v, (flow.dim,)), ad.reshape(logdet, ())
    return v, logdet


def gaussian_logpdf(z, mean, sigma: float) -> Tensor:
    """Isotropic normal log-density over the last axis."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    z, mean = _t(z), _t(mean)
    if z.shape[-1] != mean.shape[-1]:
        raise DimensionError(f"gaussian_logpdf: shapes {z.shape} and {mean.shape} differ")
    D = z.shape[-1]
    const = -0.5 * D * LOG_2PI - D * np.log(sigma)
    quad = ad.tsum(ad.square(z - mean), axis=-1)
    return quad * (-0.5 / (sigma * sigma)) + const


def observation_loglik(flow: FlowModel, y, x) -> Tensor:
    """log p(y | x) = log N(g^{-1}(y); mean_net(x), sigma^2 I) + log|det J_{g^{-1}}(y)|.

    Works on single vectors or row-aligned batches of (y, x).
    """
    x = _t(x)
    if x.shape[-1] != flow.latent_dim:
        raise DimensionError(f"latent dimension {x.shape[-1]} does not match flow ({flow.latent_dim})")
    z, logdet = flow_inverse(flow, y, x)
    return gaussian_logpdf(z, flow.mean(x), flow.sigma) + logdet


def sample_observation(flow: FlowModel, x, rng: np.random.Generator) -> np.ndarray:
    """Draw y = g(z) with z ~ N(mean_net(x), sigma^2 I)."""
    with ad.no_grad():
        mu = flow.mean(x).data
        z = mu + flow.sigma * rng.standard_normal(mu.shape)
        return flow_forward(flow, z, x).data
