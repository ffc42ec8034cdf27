"""Synthetic data sources: a linear-Gaussian benchmark and a rendered pendulum."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import psd_factor
from .errors import ConfigError, DimensionError
from .trajectory import Trajectory

TWO_PI = 2.0 * np.pi


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass
class LinearGaussianSystem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    mu0: np.ndarray | None = None
    Sigma0: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        d = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1) if self.B.size == d else self.B.reshape(1, -1)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        self.H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        self.mu0 = np.zeros(d) if self.mu0 is None else np.asarray(self.mu0, dtype=np.float64)
        self.Sigma0 = np.eye(d) if self.Sigma0 is None else np.asarray(self.Sigma0, dtype=np.float64)
        p = self.H.shape[0]
        if (self.A.shape != (d, d) or self.B.ndim != 2 or self.B.shape[0] != d or self.Q.shape != (d, d) or self.H.shape[1] != d
                or self.R.shape != (p, p) or self.mu0.shape != (d,) or self.Sigma0.shape != (d, d)):
            raise DimensionError("linear-Gaussian system matrices are inconsistent")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]


def benchmark_system(decay=0.9, angle=0.3, control_gain=0.1, q=0.01, r=0.1) -> LinearGaussianSystem:
    """Damped 2-D rotation driven through its second coordinate, observed directly."""
    return LinearGaussianSystem(
        A=decay * rotation(angle),
        B=control_gain * np.array([[0.0], [1.0]]),
        Q=q * np.eye(2),
        H=np.eye(2),
        R=r * np.eye(2),
    )


def make_policy(kind: str, control_dim: int, amplitude: float = 1.0, period: float = 40.0):
    """Controller as a callable (t, rng) -> control vector."""
    if kind == "zero":
        return lambda t, rng: np.zeros(control_dim)
    if kind == "random":
        return lambda t, rng: rng.uniform(-amplitude, amplitude, size=control_dim)
    if kind == "sine":
        return lambda t, rng: np.full(control_dim, amplitude * np.sin(TWO_PI * t / period))
    raise ConfigError(f"unknown controller {kind!r} (expected zero, random or sine)")


def lingauss_generate(
    system: LinearGaussianSystem,
    T: int,
    policy: str | Callable = "random",
    seed: int = 0,
    x0=None,
) -> Trajectory:
    """Simulate x_t = A x_{t-1} + B u_{t-1} + q, y_t = H x_t + r.

    Without ``x0`` the chain starts from x_{-1} ~ N(mu0, Sigma0) with u_{-1} = 0,
    matching the filters' prior convention.
    """
    rng = np.random.default_rng(seed)
    if isinstance(policy, str):
        policy = make_policy(policy, system.control_dim)
    d, p = system.state_dim, system.H.shape[0]
    Lq = psd_factor(system.Q, "Q")
    Lr = psd_factor(system.R, "R")
    xs = np.zeros((T, d))
    ys = np.zeros((T, p))
    us = np.zeros((T, system.control_dim))
    if x0 is None:
        x_prev = system.mu0 + psd_factor(system.Sigma0, "Sigma0") @ rng.standard_normal(d)
        x = system.A @ x_prev + Lq @ rng.standard_normal(d)
    else:
        x = np.asarray(x0, dtype=np.float64).reshape(d)
    for t in range(T):
        if t > 0:
            x = system.A @ x + system.B @ us[t - 1] + Lq @ rng.standard_normal(d)
        xs[t] = x
        ys[t] = system.H @ x + Lr @ rng.standard_normal(p)
        us[t] = policy(t, rng)
    return Trajectory(ys, us, xs, dt=1.0, seed=seed)


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.1
    dt: float = 0.05
    image_size: int = 16
    torque_scale: float = 5.0

    def __post_init__(self):
        for name in ("mass", "length", "gravity", "dt", "torque_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"pendulum {name} must be positive")
        if self.damping < 0:
            raise ConfigError("pendulum damping must be non-negative")
        if self.image_size < 8:
            raise ConfigError("pendulum image_size must be at least 8")


def wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    w = (theta + np.pi) % TWO_PI - np.pi
    return np.pi if w == -np.pi else w


def pendulum_step(state, u: float, p: PendulumParams) -> tuple[float, float]:
    """Semi-implicit Euler step; theta = 0 hangs straight down."""
    theta, omega = float(state[0]), float(state[1])
    u = float(np.asarray(u).reshape(-1)[0]) if np.ndim(u) else float(u)
    acc = (-p.gravity / p.length * np.sin(theta) - p.damping * omega
           + p.torque_scale * u / (p.mass * p.length ** 2))
    omega = omega + p.dt * acc
    theta = wrap_angle(theta + p.dt * omega)
    return theta, omega


def pendulum_energy(state, p: PendulumParams) -> float:
    theta, omega = state
    return 0.5 * p.mass * p.length ** 2 * omega ** 2 + p.mass * p.gravity * p.length * (1.0 - np.cos(theta))


ROD_WIDTH = 1.5
ROD_LENGTH = 0.4
_SUPERSAMPLE = 4


def pendulum_render(state, p: PendulumParams) -> np.ndarray:
    """Grayscale S x S image of the rod, flattened row-major, values in [0, 1].

    The rod runs from the image centre at angle theta (0 = pointing down).
    Pixel values are box-filtered coverage of a 1.5 px wide capsule,
    estimated on a 4 x 4 subsample grid with a one-subsample linear edge ramp.
    """
    S = p.image_size
    theta = float(state[0])
    c = 0.5 * S
    L = ROD_LENGTH * S
    ex, ey = L * np.sin(theta), L * np.cos(theta)
    k = _SUPERSAMPLE
    offs = (np.arange(k) + 0.5) / k
    grid = (np.arange(S)[:, None] + offs[None, :]).ravel() - c
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    proj = np.clip((gx * ex + gy * ey) / (L * L), 0.0, 1.0)
    dist = np.hypot(gx - proj * ex, gy - proj * ey)
    ramp = 1.0 / k
    cover = np.clip((0.5 * ROD_WIDTH - dist) / ramp + 0.5, 0.0, 1.0)
    img = cover.reshape(S, k, S, k).mean(axis=(1, 3))
    return img.ravel()


def pendulum_generate(
    p: PendulumParams,
    T: int,
    controller: str | Callable = "random",
    seed: int = 0,
    init_state=None,
) -> Trajectory:
    """Roll out and render the pendulum; true states are (theta, omega)."""
    rng = np.random.default_rng(seed)
    if isinstance(controller, str):
        controller = make_policy(controller, 1)
    if init_state is None:
        state = (float(rng.uniform(-1.0, 1.0)), 0.0)
    else:
        state = (float(init_state[0]), float(init_state[1]))
    D = p.image_size ** 2
    ys = np.zeros((T, D))
    us = np.zeros((T, 1))
    xs = np.zeros((T, 2))
    for t in range(T):
        xs[t] = state
        ys[t] = pendulum_render(state, p)
        us[t] = controller(t, rng)
        state = pendulum_step(state, us[t, 0], p)
    return Trajectory(ys, us, xs, dt=p.dt, seed=seed, image_size=p.image_size)
