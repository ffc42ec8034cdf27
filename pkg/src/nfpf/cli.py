"""Command-line front end: ``nfpf {generate|train|filter|eval} --config PATH``.

Exit codes: 0 success, 1 numerical failure, 2 usage/config/I-O error,
3 data error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .dynamics import LinearDynamics
from .envs import PendulumParams, benchmark_system, lingauss_generate, pendulum_generate
from .errors import DataError, NFPFError
from .filters import kalman_filter, linear_gaussian_loglik, read_trace, run_filter, write_trace
from .model import ModelSpec, NFPFModel
from .trajectory import Trajectory, fmt, read_trajectory, write_trajectory
from .training import TrainingConfig, train, write_loss_csv

log = logging.getLogger("nfpf")

MANIFEST = "manifest.txt"


def lingauss_system(cfg: ExperimentConfig):
    return benchmark_system(cfg.lg_decay, cfg.lg_angle, cfg.lg_control_gain, cfg.lg_q, cfg.lg_r)


def pendulum_params(cfg: ExperimentConfig) -> PendulumParams:
    return PendulumParams(
        mass=cfg.mass,
        length=cfg.length,
        gravity=cfg.gravity,
        damping=cfg.damping,
        dt=cfg.dt,
        image_size=cfg.image_size,
        torque_scale=cfg.torque_scale,
    )


def generate_dataset(cfg: ExperimentConfig) -> list[tuple[str, int, Trajectory]]:
    out = []
    for i in range(cfg.n_trajectories):
        seed = cfg.seed + i
        if cfg.env == "lingauss":
            traj = lingauss_generate(lingauss_system(cfg), cfg.T, cfg.controller, seed)
        else:
            traj = pendulum_generate(pendulum_params(cfg), cfg.T, cfg.controller, seed)
        out.append((f"traj_{i:03d}.csv", seed, traj))
    return out


def cmd_generate(cfg: ExperimentConfig) -> int:
    data_dir = cfg.path("data_dir")
    data_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, seed, traj in generate_dataset(cfg):
        write_trajectory(data_dir / name, traj)
        rows.append(f"{name} {seed}")
    (data_dir / MANIFEST).write_text("\n".join(rows) + "\n")
    print(f"wrote {len(rows)} trajectories to {data_dir}")
    return 0


def dataset_files(cfg: ExperimentConfig) -> list[Path]:
    data_dir = cfg.path("data_dir")
    manifest = data_dir / MANIFEST
    if manifest.exists():
        files = [data_dir / ln.split()[0] for ln in manifest.read_text().splitlines() if ln.strip()]
    else:
        files = sorted(data_dir.glob("traj_*.csv"))
    if not files:
        raise DataError(f"no trajectories found in {data_dir}")
    return files


def load_dataset(cfg: ExperimentConfig) -> list[Trajectory]:
    files = dataset_files(cfg)
    trajs = [read_trajectory(f) for f in files]
    ref = trajs[0]
    for f, tr in zip(files, trajs):
        if (tr.obs_dim, tr.control_dim) != (ref.obs_dim, ref.control_dim):
            raise DataError(
                f"{f.name} has (D={tr.obs_dim}, m={tr.control_dim}) but {files[0].name} "
                f"has (D={ref.obs_dim}, m={ref.control_dim})"
            )
    return trajs


def model_spec(cfg: ExperimentConfig, obs_dim: int, control_dim: int) -> ModelSpec:
    return ModelSpec(
        obs_dim=obs_dim,
        latent_dim=cfg.latent_dim,
        control_dim=control_dim,
        flow_layers=cfg.flow_layers,
        flow_hidden=cfg.flow_hidden,
        mean_hidden=cfg.mean_hidden,
        dyn_hidden=cfg.dyn_hidden,
        sigma=cfg.sigma,
        conditional=cfg.conditional,
        process_noise=cfg.process_noise,
        per_particle=cfg.per_particle,
        init_seed=cfg.seed,
    )


def training_config(cfg: ExperimentConfig) -> TrainingConfig:
    return TrainingConfig(
        window=cfg.window,
        lr=cfg.lr,
        epochs=cfg.epochs,
        seed=cfg.seed,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        clip_norm=cfg.clip_norm,
        dequantize=cfg.dequantize,
    )


def cmd_train(cfg: ExperimentConfig) -> int:
    trajs = load_dataset(cfg)
    model = NFPFModel(model_spec(cfg, trajs[0].obs_dim, trajs[0].control_dim))
    ckpt = cfg.path("checkpoint")
    ckpt.parent.mkdir(parents=True, exist_ok=True)

    def save(epoch: int) -> None:
        model.save(ckpt, {"epoch": epoch + 1})

    result = train(model.flow, model.dynamics, trajs, training_config(cfg), save_fn=save)
    if cfg.epochs == 0:
        save(-1)
    write_loss_csv(cfg.path("loss_csv"), result.history)
    print(f"final NLL {fmt(result.final_nll)}")
    return 0


def filter_trajectory_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.trajectory) if cfg.trajectory else dataset_files(cfg)[0]


def cmd_filter(cfg: ExperimentConfig) -> int:
    traj_path = filter_trajectory_path(cfg)
    traj = read_trajectory(traj_path)
    if cfg.likelihood == "true":
        sysm = lingauss_system(cfg)
        dynamics = LinearDynamics(sysm.A, sysm.B, sysm.Q, sysm.mu0, sysm.Sigma0)
        loglik = linear_gaussian_loglik(sysm.H, sysm.R)
        if traj.obs_dim != sysm.H.shape[0] or traj.control_dim != sysm.control_dim:
            raise DataError(f"{traj_path.name} does not match the linear-Gaussian system dimensions")
    else:
        model = NFPFModel.load(cfg.path("checkpoint"))
        if (traj.obs_dim, traj.control_dim) != (model.spec.obs_dim, model.spec.control_dim):
            raise DataError(
                f"{traj_path.name} has (D={traj.obs_dim}, m={traj.control_dim}); checkpoint expects "
                f"(D={model.spec.obs_dim}, m={model.spec.control_dim})"
            )
        dynamics = model.dynamics
        dynamics.per_particle = cfg.per_particle
        loglik = model.flow.loglik
    trace = run_filter(traj, loglik, dynamics, cfg.particles, cfg.resample_threshold, cfg.seed)
    write_trace(cfg.path("trace"), trace)
    print(f"filtered {len(trace)} steps with {cfg.particles} particles -> {cfg.trace}")
    return 0


def rmse_per_dim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return np.zeros(a.shape[1])
    return np.sqrt(np.mean((a - b) ** 2, axis=0))


def cmd_eval(cfg: ExperimentConfig) -> int:
    trace = read_trace(cfg.path("trace"))
    d = trace.means.shape[1]
    if cfg.oracle == "truth":
        if trace.true_states is None or trace.true_states.shape[1] != d:
            have = 0 if trace.true_states is None else trace.true_states.shape[1]
            raise DataError(f"trace has {d} mean columns but {have} true-state columns")
        reference = trace.true_states
    else:
        if cfg.env != "lingauss":
            raise DataError("oracle = kf needs env = lingauss")
        traj = read_trajectory(filter_trajectory_path(cfg))
        if len(traj) != len(trace):
            raise DataError(f"trace has {len(trace)} rows, trajectory has {len(traj)}")
        sysm = lingauss_system(cfg)
        if sysm.state_dim != d:
            raise DataError(f"trace has {d} mean columns, the Kalman filter has {sysm.state_dim}")
        reference = kalman_filter(traj, sysm.A, sysm.B, sysm.Q, sysm.H, sysm.R, sysm.mu0, sysm.Sigma0).means
    per_dim = rmse_per_dim(trace.means, reference)
    overall = float(np.sqrt(np.mean(per_dim ** 2))) if d else 0.0
    rows = [("metric", "value")]
    rows += [(f"rmse_{i}", fmt(v)) for i, v in enumerate(per_dim)]
    rows.append(("rmse", fmt(overall)))
    if cfg.oracle == "kf":
        rows.append(("pf_kf_rmse", fmt(overall)))
    rows.append(("mean_ess", fmt(float(np.mean(trace.ess)) if len(trace) else 0.0)))
    rows.append(("resample_count", str(int(np.sum(trace.resampled)))))
    cfg.path("metrics").write_text("\n".join(",".join(r) for r in rows) + "\n")
    print(f"rmse {fmt(overall)} ({cfg.oracle}) -> {cfg.metrics}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "filter": cmd_filter,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfpf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value experiment file")
    return parser


def _thread_limit():
    raw = os.environ.get("NFPF_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        with _thread_limit():
            return COMMANDS[args.command](cfg)
    except NFPFError as exc:
        print(f"nfpf {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"nfpf {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
