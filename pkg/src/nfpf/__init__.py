"""Particle filtering with a normalizing-flow observation likelihood over images."""

from .autodiff import Tape, Tensor, backward, gradient_check, no_grad
from .dynamics import (
    DynamicsModel,
    DynamicsNet,
    LinearDynamics,
    controllability_rank,
    dynamics_forward,
    frobenius_normalize,
    predict_mean,
    sample_transition,
    spectral_radius,
)
from .envs import (
    LinearGaussianSystem,
    PendulumParams,
    benchmark_system,
    lingauss_generate,
    pendulum_generate,
    pendulum_render,
    pendulum_step,
)
from .filters import (
    FilterTrace,
    GaussianBelief,
    ParticleSet,
    ess,
    kalman_filter,
    kalman_predict,
    kalman_update,
    pf_init,
    pf_predict,
    pf_weight_update,
    posterior_mean,
    run_filter,
    systematic_resample,
)
from .flow import (
    FlowConfig,
    FlowModel,
    flow_forward,
    flow_inverse,
    gaussian_logpdf,
    observation_loglik,
    sample_observation,
)
from .model import ModelSpec, NFPFModel
from .trajectory import Trajectory, read_trajectory, write_trajectory
from .training import TrainingConfig, optimizer_step, train, window_nll

__version__ = "0.1.0"
