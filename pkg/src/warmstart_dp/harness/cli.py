"""Command-line entry point.

Every command takes --config/--seed/--out and is a pure function of those
inputs: rerunning overwrites its outputs byte-identically (wall-clock
latency fields in JSON-lines records are the one documented exception).
Exit code 2 signals a contract violation (bad arguments, missing files).
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from ..analysis import estimate_contraction, measure_consistency, verify_error_decay
from ..diffusion import make_schedule
from ..envs import EnvConfig, generate_dataset, load_dataset
from ..errors import ContractError
from ..inference import EpisodeRecord
from ..models import DenoiserNet, PredictorNet
from .config import ExperimentConfig
from .evaluate import run_eval_grid, write_artifacts
from .sweep import ablation_csv, run_blocks_ablation, run_sweep
from .train import load_stats, train_denoiser, train_predictor


def _contract_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ContractError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.load(path)


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="Experiment config JSON.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default="runs/out",
                      show_default=True)(fn)
    return fn


@click.group()
def main():
    """Warm-started diffusion-policy experiments on toy 2D control tasks."""


@main.command("gen-data")
@common_options
@click.option("--env-kind", type=click.Choice(["reach", "push_lite", "fork"]), default=None)
@click.option("--n-episodes", type=int, default=None)
@click.option("--dead-zone", type=float, default=None)
@click.option("--expert-noise", type=float, default=None)
@_contract_errors
def gen_data(config_path, seed, out_dir, env_kind, n_episodes, dead_zone, expert_noise):
    """Roll scripted experts into a demonstration dataset."""
    cfg = _load_config(config_path)
    env = EnvConfig(
        env_kind=env_kind or cfg.env.env_kind,
        dead_zone=cfg.env.dead_zone if dead_zone is None else dead_zone,
        dt=cfg.env.dt,
        episode_cap=cfg.env.episode_cap,
        success_radius=cfg.env.success_radius,
        min_separation=cfg.env.min_separation,
    )
    n = n_episodes or cfg.env.n_episodes
    ds = generate_dataset(
        env, n, seed=seed, out_dir=out_dir, horizon=cfg.model.horizon,
        expert_noise=cfg.env.expert_noise if expert_noise is None else expert_noise,
    )
    click.echo(f"wrote {n} episodes ({sum(len(a) for _, a in ds.episodes)} steps) to {out_dir}")


@main.command("train")
@common_options
@click.option("--data", "data_dir", type=click.Path(), default=None,
              help="Dataset directory (default: config.dataset).")
@_contract_errors
def train(config_path, seed, out_dir, data_dir):
    """Train the denoiser, then the predictor, independently."""
    cfg = _load_config(config_path)
    dataset = load_dataset(data_dir or cfg.dataset)
    out = Path(out_dir)
    _, _, dlosses = train_denoiser(dataset, cfg, seed=seed, out_dir=out)
    _, plosses = train_predictor(dataset, cfg, seed=seed + 1, out_dir=out)
    meta = {
        "seed": seed,
        "desk_scale": cfg.desk_scale,
        "denoiser_steps": len(dlosses),
        "predictor_steps": len(plosses),
        "final_denoiser_loss": dlosses[-1] if dlosses else None,
        "final_predictor_loss": plosses[-1] if plosses else None,
    }
    (out / "train_meta.json").write_text(json.dumps(meta, indent=2))
    click.echo(f"checkpoints written under {out}")


def _load_nets(ckpt_dir: Path):
    denoiser = DenoiserNet.load(ckpt_dir / "denoiser")
    predictor_path = ckpt_dir / "predictor"
    predictor = PredictorNet.load(predictor_path) if predictor_path.exists() else None
    obs_stats, act_stats = load_stats(ckpt_dir / "denoiser")
    return denoiser, predictor, obs_stats, act_stats


@main.command("eval")
@common_options
@click.option("--ckpt", "ckpt_dir", type=click.Path(), default=None,
              help="Checkpoint directory (default: --out).")
@click.option("--steps", type=int, multiple=True, help="Ladder lengths to evaluate.")
@click.option("--k-prime", type=int, default=None)
@click.option("--sigma-scale", type=float, default=None)
@click.option("--sigma-stall", type=float, default=None)
@click.option("--eps-a", type=float, default=None)
@click.option("--dead-zone", type=float, default=None)
@click.option("--cold-start", is_flag=True, help="Cold baselines only.")
@click.option("--no-predictor", is_flag=True, help="Warm-start from the cached chunk.")
@click.option("--seeds", "n_seeds", type=int, default=None, help="Episodes per cell.")
@_contract_errors
def eval_cmd(config_path, seed, out_dir, ckpt_dir, steps, k_prime, sigma_scale,
             sigma_stall, eps_a, dead_zone, cold_start, no_predictor, n_seeds):
    """Score the method grid and write results.csv + results.jsonl."""
    cfg = _load_config(config_path)
    ev = cfg.eval
    overrides = {}
    if steps:
        overrides["steps"] = tuple(steps)
    if k_prime is not None:
        overrides["k_prime"] = k_prime
    if sigma_scale is not None:
        overrides["sigma_scale"] = sigma_scale
    if sigma_stall is not None:
        overrides["sigma_stall"] = sigma_stall
    if eps_a is not None:
        overrides["eps_a"] = eps_a
    if dead_zone is not None:
        overrides["eval_dead_zone"] = dead_zone
    if n_seeds is not None:
        overrides["n_seeds"] = n_seeds
    cfg = replace(cfg, eval=replace(ev, **overrides))
    ckpt = Path(ckpt_dir or out_dir)
    denoiser, predictor, obs_stats, act_stats = _load_nets(ckpt)
    schedule = make_schedule(cfg.train.schedule_kind, cfg.train.diffusion_steps)
    artifacts = run_eval_grid(
        cfg, denoiser, predictor, schedule, obs_stats, act_stats,
        base_seed=seed, cold_start_only=cold_start, no_predictor=no_predictor,
    )
    write_artifacts(artifacts, Path(out_dir))
    click.echo(artifacts.table.to_csv())


@main.command("sweep")
@common_options
@click.option("--ckpt", "ckpt_dir", type=click.Path(), default=None)
@click.option("--dead-zone", type=float, default=None)
@_contract_errors
def sweep_cmd(config_path, seed, out_dir, ckpt_dir, dead_zone):
    """Success over the sigma_stall x sigma_scale grid on the dead-zone env."""
    cfg = _load_config(config_path)
    ckpt = Path(ckpt_dir or out_dir)
    denoiser, predictor, obs_stats, act_stats = _load_nets(ckpt)
    if predictor is None:
        raise ContractError(f"sweep needs a predictor checkpoint under {ckpt}")
    schedule = make_schedule(cfg.train.schedule_kind, cfg.train.diffusion_steps)
    table = run_sweep(
        cfg, denoiser, predictor, schedule, obs_stats, act_stats,
        base_seed=seed, dead_zone=dead_zone,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(table.to_csv())
    click.echo(table.to_csv())


@main.command("blocks-ablation")
@common_options
@click.option("--ckpt", "ckpt_dir", type=click.Path(), default=None)
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--blocks", type=int, multiple=True, default=(1, 2, 4, 8), show_default=True)
@_contract_errors
def blocks_ablation(config_path, seed, out_dir, ckpt_dir, data_dir, blocks):
    """Train predictors at several depths; score and time each."""
    cfg = _load_config(config_path)
    dataset = load_dataset(data_dir or cfg.dataset)
    ckpt = Path(ckpt_dir or out_dir)
    denoiser = DenoiserNet.load(ckpt / "denoiser")
    schedule = make_schedule(cfg.train.schedule_kind, cfg.train.diffusion_steps)
    rows = run_blocks_ablation(
        cfg, dataset, denoiser, schedule, block_counts=tuple(blocks),
        base_seed=seed, train_seed=seed,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "blocks_ablation.csv").write_text(ablation_csv(rows))
    click.echo(ablation_csv(rows))


@main.command("contraction-check")
@common_options
@click.option("--ckpt", "ckpt_dir", type=click.Path(), default=None)
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--radius", type=float, default=0.1, show_default=True)
@click.option("--ladder", type=int, multiple=True, default=(1, 2, 4), show_default=True,
              help="Ladder lengths (consecutive reverse steps from each length).")
@click.option("--pairs", type=int, default=64, show_default=True)
@_contract_errors
def contraction_check(config_path, seed, out_dir, ckpt_dir, data_dir, radius, ladder, pairs):
    """Empirical contraction of the trained denoiser's mean update."""
    cfg = _load_config(config_path)
    dataset = load_dataset(data_dir or cfg.dataset)
    ckpt = Path(ckpt_dir or out_dir)
    denoiser = DenoiserNet.load(ckpt / "denoiser")
    schedule = make_schedule(cfg.train.schedule_kind, cfg.train.diffusion_steps)
    obs_rows, chunks = dataset.denoiser_pairs()
    rng = np.random.default_rng(seed)
    reports = {}
    for length in ladder:
        # condition on the observation paired with each base chunk
        idx = rng.integers(0, len(chunks))
        obs = obs_rows[idx]
        eps_fn = lambda a, k: denoiser.forward(a, k, obs)
        rep = estimate_contraction(
            eps_fn, schedule, tuple(range(length, -1, -1)), chunks,
            radius=radius, n_pairs=pairs, rng=rng,
        )
        reports[str(length)] = json.loads(rep.to_json())
    decay = verify_error_decay(
        lambda a, k: denoiser.forward(a, k, obs_rows[0]),
        schedule, chunks, radii=(radius,), ladder_lengths=tuple(ladder),
        n_pairs=max(8, pairs // 8), rng=rng,
    )
    blob = {"reports": reports, "error_decay": decay, "radius": radius, "pairs": pairs}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "contraction.json").write_text(json.dumps(blob, indent=2))
    click.echo(json.dumps(blob["error_decay"], indent=2))


@main.command("consistency-report")
@common_options
@click.option("--records", "records_path", type=click.Path(), required=True,
              help="JSON-lines episode records from eval.")
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--knn", type=int, default=8, show_default=True)
@_contract_errors
def consistency_report(config_path, seed, out_dir, records_path, data_dir, knn):
    """Temporal/spatial consistency percentiles over recorded episodes."""
    cfg = _load_config(config_path)
    dataset = load_dataset(data_dir or cfg.dataset)
    records_file = Path(records_path)
    if not records_file.exists():
        raise ContractError(f"records file not found: {records_file}")
    records = [
        EpisodeRecord.from_json_row(line)
        for line in records_file.read_text().splitlines()
        if line.strip()
    ]
    report = measure_consistency(records, dataset, k_nn=knn)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "consistency.json").write_text(report.to_json())
    click.echo(
        f"eps_t_hat={report.eps_t_hat:.4f} eps_s_hat={report.eps_s_hat:.4f} "
        f"over {report.n_chunks} chunks"
    )


if __name__ == "__main__":
    main()
