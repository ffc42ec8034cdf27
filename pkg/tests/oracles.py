"""Independent extended-precision evaluation of the window loss.

Used as a finite-difference oracle: float64 central differences at h = 1e-6
are quantized at ulp(loss) / 2h, which swamps coordinates whose gradient is
below roughly 1e-5.  Evaluating the same loss in ``np.longdouble`` (64-bit
mantissa) pushes that floor down by three orders of magnitude.

Every perturbed parameter vector is evaluated in one batched pass; arrays
carry a leading axis P over parameter sets.
"""
import numpy as np

LD = np.longdouble
LOG_2PI = np.log(LD(2) * LD(np.pi))


def _linear(params, prefix, x):
    W, b = params[prefix + "W"], params[prefix + "b"]
    return np.einsum("poi,pni->pno", W, x) + b[:, None, :]


def _mlp(params, prefix, n_layers, x):
    h = x
    for i in range(n_layers):
        h = _linear(params, f"{prefix}{i}.", h)
        if i < n_layers - 1:
            h = np.tanh(h)
    return h


def _normalize(M):
    norm = np.sqrt(np.sum(M * M, axis=(-2, -1), keepdims=True))
    return M / norm


def _rollout(params, traj, k, K, d, m, start):
    # ``start`` is x_{k-1}; the prefix before the window is held fixed
    P = next(iter(params.values())).shape[0]
    x = np.broadcast_to(np.asarray(start, dtype=LD), (P, 1, d)).copy()
    states = []
    for t in range(k, k + K + 1):
        raw = _mlp(params, "dyn.", 2, x)[:, 0, :]
        A = _normalize(raw[:, : d * d].reshape(P, d, d))
        nxt = np.einsum("pij,pj->pi", A, x[:, 0, :])
        u = np.asarray(traj.control_before(t), dtype=LD)
        if m:
            B = _normalize(raw[:, d * d :].reshape(P, d, m))
            nxt = nxt + np.einsum("pij,j->pi", B, u)
        x = nxt[:, None, :]
        states.append(nxt)
    return np.stack(states, axis=1)


def _flow_inverse(params, flow, y, cond):
    v = y
    logdet = np.zeros(y.shape[:2], dtype=LD)
    for i, layer in enumerate(flow.layers):
        passed = v[..., layer.pass_idx]
        h = passed if cond is None else np.concatenate([passed, cond], axis=-1)
        s = LD(layer.scale_bound) * np.tanh(_mlp(params, f"flow.layer{i}.scale.", 2, h))
        t = _mlp(params, f"flow.layer{i}.shift.", 2, h)
        z_act = (v[..., layer.act_idx] - t) * np.exp(np.minimum(-s, 30))
        v = np.concatenate([passed, z_act], axis=-1)[..., layer.inv_perm]
        logdet = logdet - s.sum(axis=-1)
    return v, logdet


def window_nll_ld(params, flow, dyn, traj, k, K, noise=None, start=None):
    """Loss for every parameter set in ``params`` (name -> (P, *shape)).

    ``start`` is the latent state entering the window; it defaults to mu0,
    which is only correct for k = 0.
    """
    d, m = dyn.latent_dim, dyn.control_dim
    start = dyn.mu0 if start is None else start
    xs = _rollout(params, traj, k, K, d, m, start)
    y = np.asarray(traj.observations[k : k + K + 1], dtype=LD)
    if noise is not None:
        y = y + np.asarray(noise, dtype=LD)
    y = np.broadcast_to(y, (xs.shape[0],) + y.shape)
    z, logdet = _flow_inverse(params, flow, y, xs if flow.conditional else None)
    n_mean = len(flow.mean_net.layers)
    mu = _mlp(params, "flow.mean.", n_mean, xs)
    sigma = LD(flow.sigma)
    base = -0.5 * LOG_2PI - np.log(sigma) - (z - mu) ** 2 / (2 * sigma**2)
    return -(base.sum(axis=(1, 2)) + logdet.sum(axis=1))


def observation_loglik_ld(params, flow, y, x=None):
    """log p(y | x) per parameter set; ``x`` is taken from ``params["x"]`` when present."""
    P = next(iter(params.values())).shape[0]
    x = params["x"] if "x" in params else np.broadcast_to(np.asarray(x, dtype=LD), (P, flow.latent_dim))
    xs = x[:, None, :]
    ys = np.broadcast_to(np.asarray(y, dtype=LD), (P, 1, flow.dim))
    z, logdet = _flow_inverse(params, flow, ys, xs if flow.conditional else None)
    mu = _mlp(params, "flow.mean.", len(flow.mean_net.layers), xs)
    sigma = LD(flow.sigma)
    base = -0.5 * LOG_2PI - np.log(sigma) - (z - mu) ** 2 / (2 * sigma**2)
    return base.sum(axis=(1, 2)) + logdet[:, 0]


def central_differences(named, loss_fn, h=1e-6):
    """Central differences of ``loss_fn(params)`` at every coordinate, in longdouble."""
    names = [n for n, _ in named]
    shapes = [p.data.shape for _, p in named]
    theta = np.concatenate([p.data.ravel().astype(LD) for _, p in named])
    C = theta.size
    step = LD(h) * np.eye(C, dtype=LD)
    batch = np.concatenate([theta + step, theta - step])
    params, offset = {}, 0
    for name, shape in zip(names, shapes):
        size = int(np.prod(shape))
        params[name] = batch[:, offset : offset + size].reshape((2 * C,) + shape)
        offset += size
    f = loss_fn(params)
    return (f[:C] - f[C:]) / (2 * LD(h))


def relative_errors(analytic, numeric):
    a = np.asarray(analytic, dtype=LD)
    n = np.asarray(numeric, dtype=LD)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), LD(1e-12))
