"""Training loops for the denoiser and the consistency predictor.

The two networks are trained independently (no joint gradient) and written
as separate checkpoints together with CSV loss curves. Normalization stats
travel inside the checkpoint config so evaluation reconstructs the exact
preprocessing.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..diffusion import Schedule, denoiser_loss, make_schedule
from ..envs import Dataset, NormStats
from ..errors import ContractError
from ..models import (
    DenoiserConfig,
    DenoiserNet,
    PredictorConfig,
    PredictorNet,
    predictor_loss,
)
from ..numerics import AdamW, LrSchedule, lr_at
from .config import ExperimentConfig


def _loss_curve_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w", newline="")
    writer = csv.writer(fh)
    writer.writerow(["step", "loss", "lr"])
    return fh, writer


def train_denoiser(
    dataset: Dataset,
    config: ExperimentConfig,
    seed: int,
    out_dir: Path | None = None,
    steps: int | None = None,
) -> tuple[DenoiserNet, Schedule, list[float]]:
    obs, chunks = dataset.denoiser_pairs(stride=config.train.window_stride)
    if len(chunks) == 0:
        raise ContractError("dataset yields no training chunks")
    steps = config.train.denoiser_steps if steps is None else steps
    net = DenoiserNet(
        DenoiserConfig(
            horizon=dataset.horizon,
            action_dim=dataset.action_dim,
            obs_dim=dataset.obs_dim,
            hidden=tuple(config.model.denoiser_hidden),
            step_embed_dim=config.model.step_embed_dim,
        ),
        seed=seed,
    )
    schedule = make_schedule(config.train.schedule_kind, config.train.diffusion_steps)
    losses = _run_loop(
        net,
        lambda rng: _denoiser_batch_loss(net, obs, chunks, schedule, config, rng),
        steps,
        config,
        seed,
        out_dir / "denoiser_loss.csv" if out_dir else None,
    )
    if out_dir is not None:
        net.save(out_dir / "denoiser")
        _save_stats(out_dir / "denoiser", dataset)
    return net, schedule, losses


def _denoiser_batch_loss(net, obs, chunks, schedule, config, rng):
    idx = rng.integers(0, len(chunks), size=min(config.train.batch_size, len(chunks)))
    return denoiser_loss(chunks[idx], obs[idx], net, schedule, rng)


def train_predictor(
    dataset: Dataset,
    config: ExperimentConfig,
    seed: int,
    out_dir: Path | None = None,
    steps: int | None = None,
    num_blocks: int | None = None,
) -> tuple[PredictorNet, list[float]]:
    obs, prevs, targets = dataset.predictor_triples(stride=config.train.window_stride)
    if len(prevs) == 0:
        raise ContractError("dataset yields no predictor triples")
    steps = config.train.predictor_steps if steps is None else steps
    net = PredictorNet(
        PredictorConfig(
            horizon=dataset.horizon,
            action_dim=dataset.action_dim,
            obs_dim=dataset.obs_dim,
            embed_dim=config.model.embed_dim,
            num_blocks=config.model.num_blocks if num_blocks is None else num_blocks,
            num_heads=config.model.num_heads,
            ff_mult=config.model.ff_mult,
        ),
        seed=seed,
    )

    def batch_loss(rng):
        idx = rng.integers(0, len(prevs), size=min(config.train.batch_size, len(prevs)))
        return predictor_loss(obs[idx], prevs[idx], targets[idx], net)

    losses = _run_loop(
        net, batch_loss, steps, config, seed,
        out_dir / "predictor_loss.csv" if out_dir else None,
    )
    if out_dir is not None:
        net.save(out_dir / "predictor")
        _save_stats(out_dir / "predictor", dataset)
    return net, losses


def _run_loop(net, batch_loss, steps, config: ExperimentConfig, seed, curve_path):
    losses: list[float] = []
    if steps == 0:
        if curve_path is not None:
            fh, _ = _loss_curve_writer(curve_path)
            fh.close()
        return losses
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EA1]))
    opt = AdamW(
        net.parameters(),
        lr=config.train.learning_rate,
        weight_decay=config.train.weight_decay,
    )
    lr_schedule = LrSchedule(
        base_lr=config.train.learning_rate,
        warmup_steps=min(config.train.warmup_steps, steps),
        total_steps=steps,
    )
    fh = writer = None
    if curve_path is not None:
        fh, writer = _loss_curve_writer(curve_path)
    try:
        for step in range(steps):
            loss = batch_loss(rng)
            opt.zero_grad()
            loss.backward()
            lr = lr_at(lr_schedule, step)
            opt.step(lr=lr)
            value = loss.item()
            losses.append(value)
            if writer is not None and (step % 50 == 0 or step == steps - 1):
                writer.writerow([step, f"{value:.8f}", f"{lr:.3e}"])
    finally:
        if fh is not None:
            fh.close()
    return losses


def _save_stats(ckpt_dir: Path, dataset: Dataset) -> None:
    """Append normalization stats to an existing checkpoint manifest."""
    import json

    manifest_path = Path(ckpt_dir) / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["config"]["obs_stats"] = dataset.obs_stats.to_json()
    manifest["config"]["act_stats"] = dataset.act_stats.to_json()
    manifest["config"]["horizon"] = dataset.horizon
    manifest_path.write_text(json.dumps(manifest, indent=2))


def load_stats(ckpt_dir: Path) -> tuple[NormStats, NormStats]:
    import json

    manifest = json.loads((Path(ckpt_dir) / "manifest.json").read_text())
    cfg = manifest["config"]
    if "obs_stats" not in cfg:
        raise ContractError(f"checkpoint {ckpt_dir} carries no normalization stats")
    return NormStats.from_json(cfg["obs_stats"]), NormStats.from_json(cfg["act_stats"])
