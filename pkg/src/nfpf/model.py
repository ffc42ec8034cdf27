"""Flow + dynamics bundle, built from hyperparameters and stored as one checkpoint."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .dynamics import DynamicsModel
from .errors import DataError
from .flow import FlowConfig, FlowModel


@dataclass(frozen=True)
class ModelSpec:
    obs_dim: int
    latent_dim: int = 4
    control_dim: int = 1
    flow_layers: int = 4
    flow_hidden: int = 64
    mean_hidden: int = 64
    dyn_hidden: int = 32
    sigma: float = 1.0
    conditional: bool = False
    process_noise: float = 1e-4
    per_particle: bool = True
    init_seed: int = 0


class NFPFModel:
    """Observation flow and latent dynamics trained together."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.init_seed, 7])
        self.flow = FlowModel(
            FlowConfig(
                dim=spec.obs_dim,
                latent_dim=spec.latent_dim,
                n_layers=spec.flow_layers,
                hidden=spec.flow_hidden,
                mean_hidden=spec.mean_hidden,
                sigma=spec.sigma,
                conditional=spec.conditional,
            ),
            rng,
        )
        self.dynamics = DynamicsModel.create(
            spec.latent_dim,
            spec.control_dim,
            hidden=spec.dyn_hidden,
            process_noise=spec.process_noise,
            rng=rng,
            per_particle=spec.per_particle,
        )

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.flow.named_parameters()
        yield from self.dynamics.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"model": asdict(self.spec)}
        if extra:
            meta.update(extra)
        save_checkpoint(path, self.named_parameters(), meta)

    @classmethod
    def load(cls, path) -> "NFPFModel":
        _, _, meta = read_checkpoint(path)
        try:
            spec = ModelSpec(**meta["model"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"checkpoint {path} lacks a usable model description: {exc}") from None
        model = cls(spec)
        load_into(path, model.named_parameters())
        return model
