"""Small shared fixtures for the test modules."""
import numpy as np

from nfpf.autodiff import Tape
from nfpf.model import ModelSpec, NFPFModel
from nfpf.trajectory import Trajectory


def toy_problem(seed, D=8, d=2, m=1, T=4, hidden=8, conditional=False):
    """A small model and a random image-like trajectory."""
    model = NFPFModel(ModelSpec(obs_dim=D, latent_dim=d, control_dim=m, flow_hidden=hidden, mean_hidden=hidden,
                                dyn_hidden=hidden, conditional=conditional, init_seed=seed))
    rng = np.random.default_rng([seed, 99])
    traj = Trajectory(rng.uniform(size=(T, D)), rng.normal(size=(T, m)), np.zeros((T, d)))
    return model, traj


def tape_gradient(named, fn):
    """Flattened tape gradient of the scalar ``fn()`` over ``named`` parameters."""
    flags = [p.requires_grad for _, p in named]
    for _, p in named:
        p.requires_grad = True
        p.grad = None
    try:
        with Tape() as tape:
            out = fn()
        tape.backward(out)
        return float(out.data), np.concatenate(
            [(p.grad if p.grad is not None else np.zeros_like(p.data)).ravel() for _, p in named])
    finally:
        for (_, p), flag in zip(named, flags):
            p.requires_grad = flag
            p.grad = None
