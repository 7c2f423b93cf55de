"""Experiment configuration: one JSON document drives every CLI command.

A run is reproducible from (config, seed) alone. Training iteration
defaults are the reference full-scale budgets divided by ``desk_scale``
(surfaced in output metadata) because the full budgets assume GPU training.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import ContractError

DESK_SCALE = 10


@dataclass
class TrainBlock:
    denoiser_steps: int = 200_000 // DESK_SCALE
    predictor_steps: int = 100_000 // DESK_SCALE
    batch_size: int = 64
    learning_rate: float = 1e-4
    warmup_steps: int = 500
    weight_decay: float = 1e-6
    schedule_kind: str = "cosine"  # cosine commits to modes far better at K=100
    diffusion_steps: int = 100
    window_stride: int = 2  # training-window stride; horizon = non-overlapping


@dataclass
class ModelBlock:
    horizon: int = 16
    denoiser_hidden: tuple[int, ...] = (256, 256)
    step_embed_dim: int = 64
    embed_dim: int = 128
    num_blocks: int = 2
    num_heads: int = 4
    ff_mult: int = 2


@dataclass
class EnvBlock:
    env_kind: str = "reach"
    n_episodes: int = 300
    dead_zone: float = 0.0
    dt: float = 0.1
    episode_cap: int = 200
    success_radius: float = 0.05
    expert_noise: float = 0.25
    min_separation: float = 0.5  # exploration noise in demonstrations


@dataclass
class EvalBlock:
    n_seeds: int = 100
    steps: tuple[int, ...] = (1, 2, 4, 8)
    k_prime: int = 10
    sigma_scale: float = 1.0
    sigma_stall: float = 0.1
    eps_a: float = 0.01
    eval_dead_zone: float = 0.0  # dead zone applied at evaluation time only
    bootstrap_resamples: int = 1000


@dataclass
class SweepBlock:
    """Stall-recovery fixture: a dead-zone env with a tightened goal disk so
    both under- and over-excitation genuinely fail the task."""

    sigma_stall_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 1.2, 4.0)
    sigma_scale_grid: tuple[float, ...] = (0.0, 1.0, 2.0)
    steps: int = 2
    n_seeds: int = 50
    dead_zone: float = 0.02
    success_radius: float = 0.03
    min_separation: float = 0.8
    episode_cap: int = 400


@dataclass
class ExperimentConfig:
    dataset: str = "dataset"
    env: EnvBlock = field(default_factory=EnvBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    desk_scale: int = DESK_SCALE

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        blob = json.loads(text)
        return cls(
            dataset=blob.get("dataset", "dataset"),
            env=EnvBlock(**blob.get("env", {})),
            model=_with_tuples(ModelBlock, blob.get("model", {}), ("denoiser_hidden",)),
            train=TrainBlock(**blob.get("train", {})),
            eval=_with_tuples(EvalBlock, blob.get("eval", {}), ("steps",)),
            sweep=_with_tuples(
                SweepBlock, blob.get("sweep", {}), ("sigma_stall_grid", "sigma_scale_grid")
            ),
            desk_scale=blob.get("desk_scale", DESK_SCALE),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ContractError(f"config file not found: {path}")
        return cls.from_json(path.read_text())


def _with_tuples(cls, blob: dict, keys: tuple[str, ...]):
    blob = dict(blob)
    for key in keys:
        if key in blob and isinstance(blob[key], list):
            blob[key] = tuple(blob[key])
    return cls(**blob)
