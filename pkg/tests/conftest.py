"""Shared fixtures: trained policy bundles used by the acceptance suite.

Training is deterministic given the frozen configs below, so bundles are
cached on disk and reused. By default the cache lives in the pytest session
tmp dir; set WARMSTART_DP_TEST_CACHE to a persistent directory to skip
retraining across sessions during development.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from warmstart_dp.diffusion import Schedule, make_schedule
from warmstart_dp.envs import Dataset, EnvConfig, generate_dataset, load_dataset
from warmstart_dp.harness.config import EnvBlock, EvalBlock, ExperimentConfig, ModelBlock, TrainBlock
from warmstart_dp.harness.train import train_denoiser, train_predictor
from warmstart_dp.models import DenoiserNet, PredictorNet


@dataclass
class PolicyBundle:
    dataset: Dataset
    denoiser: DenoiserNet
    predictor: PredictorNet
    schedule: Schedule
    config: ExperimentConfig


FORK_CONFIG = ExperimentConfig(
    env=EnvBlock(env_kind="fork", n_episodes=400, episode_cap=96, expert_noise=0.25),
    model=ModelBlock(horizon=16, denoiser_hidden=(256, 256), embed_dim=64,
                     num_blocks=2, num_heads=4),
    train=TrainBlock(denoiser_steps=9000, predictor_steps=5000, batch_size=64,
                     learning_rate=3e-4, warmup_steps=200, window_stride=2,
                     schedule_kind="cosine", diffusion_steps=100),
    eval=EvalBlock(n_seeds=100, steps=(2,), k_prime=10),
)

REACH_CONFIG = ExperimentConfig(
    env=EnvBlock(env_kind="reach", n_episodes=300, episode_cap=64, expert_noise=0.10),
    model=ModelBlock(horizon=16, denoiser_hidden=(256, 256), embed_dim=48,
                     num_blocks=2, num_heads=4),
    train=TrainBlock(denoiser_steps=8000, predictor_steps=3500, batch_size=64,
                     learning_rate=3e-4, warmup_steps=200, window_stride=2,
                     schedule_kind="cosine", diffusion_steps=100),
    eval=EvalBlock(n_seeds=100, steps=(2,), k_prime=10),
)


def _build_bundle(root: Path, config: ExperimentConfig, data_seed: int) -> PolicyBundle:
    env_cfg = EnvConfig(
        env_kind=config.env.env_kind,
        episode_cap=config.env.episode_cap,
        dt=config.env.dt,
        success_radius=config.env.success_radius,
    )
    if (root / "done").exists():
        dataset = load_dataset(root / "dataset")
        denoiser = DenoiserNet.load(root / "denoiser")
        predictor = PredictorNet.load(root / "predictor")
    else:
        dataset = generate_dataset(
            env_cfg, config.env.n_episodes, seed=data_seed, out_dir=root / "dataset",
            horizon=config.model.horizon, expert_noise=config.env.expert_noise,
        )
        denoiser, _, _ = train_denoiser(dataset, config, seed=1)
        predictor, _ = train_predictor(dataset, config, seed=2)
        denoiser.save(root / "denoiser")
        predictor.save(root / "predictor")
        (root / "done").write_text("ok")
    schedule = make_schedule(config.train.schedule_kind, config.train.diffusion_steps)
    return PolicyBundle(dataset, denoiser, predictor, schedule, config)


def _cache_root(tmp_path_factory, name: str) -> Path:
    override = os.environ.get("WARMSTART_DP_TEST_CACHE")
    if override:
        return Path(override) / name
    return tmp_path_factory.mktemp("bundles") / name


@pytest.fixture(scope="session")
def fork_bundle(tmp_path_factory) -> PolicyBundle:
    return _build_bundle(_cache_root(tmp_path_factory, "fork"), FORK_CONFIG, data_seed=11)


@pytest.fixture(scope="session")
def reach_bundle(tmp_path_factory) -> PolicyBundle:
    return _build_bundle(_cache_root(tmp_path_factory, "reach"), REACH_CONFIG, data_seed=21)
