"""Perturbation-scale sweeps and the predictor-depth ablation."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from ..diffusion import Schedule
from ..envs import Dataset, EnvConfig, NormStats
from ..inference import default_warm_config, run_episode
from ..models import DenoiserNet, PredictorNet
from .config import ExperimentConfig
from .evaluate import bootstrap_ci
from .train import train_predictor


@dataclass
class SweepCell:
    sigma_stall: float
    sigma_scale: float
    score: float
    ci_lo: float
    ci_hi: float
    mean_success_steps: float  # mean steps-to-success over successful episodes
    stall_events: float


@dataclass
class SweepTable:
    steps: int
    cells: list[SweepCell] = field(default_factory=list)

    def argmax(self) -> SweepCell:
        return max(self.cells, key=lambda c: (c.score, -c.sigma_stall))

    def cell(self, sigma_stall: float, sigma_scale: float) -> SweepCell:
        for c in self.cells:
            if c.sigma_stall == sigma_stall and c.sigma_scale == sigma_scale:
                return c
        raise KeyError((sigma_stall, sigma_scale))

    def to_csv(self) -> str:
        best = self.argmax()
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["sigma_stall", "sigma_scale", "score", "ci_lo", "ci_hi",
             "mean_success_steps", "stall_events", "argmax"]
        )
        for c in self.cells:
            writer.writerow(
                [c.sigma_stall, c.sigma_scale, f"{c.score:.4f}", f"{c.ci_lo:.4f}",
                 f"{c.ci_hi:.4f}", f"{c.mean_success_steps:.2f}",
                 f"{c.stall_events:.2f}", int(c is best)]
            )
        return buf.getvalue()


def run_sweep(
    config: ExperimentConfig,
    denoiser: DenoiserNet,
    predictor: PredictorNet,
    schedule: Schedule,
    obs_stats: NormStats,
    act_stats: NormStats,
    base_seed: int = 0,
    dead_zone: float | None = None,
) -> SweepTable:
    """Success over the sigma_stall x sigma_scale grid on the dead-zone env.

    The whole episode runs at the sweep's step budget (cold starts included),
    so every control step costs exactly ``steps`` denoiser evaluations.
    """
    from ..diffusion import build_ladder

    sw = config.sweep
    env_cfg = EnvConfig(
        env_kind=config.env.env_kind,
        dead_zone=sw.dead_zone if dead_zone is None else dead_zone,
        dt=config.env.dt,
        episode_cap=sw.episode_cap,
        success_radius=sw.success_radius,
        min_separation=sw.min_separation,
    )
    table = SweepTable(steps=sw.steps)
    for stall in sw.sigma_stall_grid:
        for scale in sw.sigma_scale_grid:
            ws = default_warm_config(
                schedule.num_steps,
                steps=sw.steps,
                k_prime=config.eval.k_prime,
                sigma_scale=scale,
                sigma_stall=stall,
                eps_a=config.eval.eps_a,
                cold_ladder=build_ladder(schedule.num_steps, sw.steps),
                cold_sampler="ddim",
            )
            records = [
                run_episode(
                    env_cfg, denoiser, schedule, ws, seed=seed, predictor=predictor,
                    obs_stats=obs_stats, act_stats=act_stats,
                    method=f"sweep[{stall},{scale}]",
                )
                for seed in range(base_seed, base_seed + sw.n_seeds)
            ]
            succ = np.array([float(r.success) for r in records])
            lo, hi = bootstrap_ci(succ, config.eval.bootstrap_resamples)
            ok_steps = [r.success_step for r in records if r.success]
            table.cells.append(
                SweepCell(
                    sigma_stall=stall,
                    sigma_scale=scale,
                    score=float(succ.mean()),
                    ci_lo=lo,
                    ci_hi=hi,
                    mean_success_steps=float(np.mean(ok_steps)) if ok_steps else float("nan"),
                    stall_events=float(np.mean([r.stall_events for r in records])),
                )
            )
    return table


@dataclass
class AblationRow:
    num_blocks: int
    score: float
    ci_lo: float
    ci_hi: float
    predictor_latency_ms: float
    predictor_flops: float  # per-forward multiply-add proxy
    param_count: int


def predictor_flop_proxy(net: PredictorNet) -> float:
    """Multiply-accumulate count of one forward pass (attention + MLPs)."""
    cfg = net.config
    h, dm, n = cfg.horizon, cfg.embed_dim, 1  # one observation token
    embed = h * cfg.action_dim * dm + cfg.obs_dim * dm
    per_block = (
        4 * h * dm * dm  # q, o projections over action tokens
        + 2 * n * dm * dm  # k, v over obs tokens
        + 2 * h * n * dm  # scores + weighted sum
        + 2 * h * dm * cfg.ff_mult * dm  # feed-forward
    )
    out = h * dm * cfg.action_dim
    return float(embed + cfg.num_blocks * per_block + out)


def run_blocks_ablation(
    config: ExperimentConfig,
    dataset: Dataset,
    denoiser: DenoiserNet,
    schedule: Schedule,
    block_counts: tuple[int, ...] = (1, 2, 4, 8),
    base_seed: int = 0,
    train_seed: int = 0,
) -> list[AblationRow]:
    """Train a predictor per block count and score warm-started control."""
    env_cfg = EnvConfig(
        env_kind=config.env.env_kind,
        dead_zone=config.eval.eval_dead_zone,
        dt=config.env.dt,
        episode_cap=config.env.episode_cap,
        success_radius=config.env.success_radius,
        min_separation=config.env.min_separation,
    )
    rows = []
    for blocks in block_counts:
        predictor, _ = train_predictor(
            dataset, config, seed=train_seed, num_blocks=blocks
        )
        ws = default_warm_config(
            schedule.num_steps,
            steps=config.sweep.steps,
            k_prime=config.eval.k_prime,
            sigma_scale=config.eval.sigma_scale,
            sigma_stall=config.eval.sigma_stall,
        )
        records = [
            run_episode(
                env_cfg, denoiser, schedule, ws, seed=seed, predictor=predictor,
                obs_stats=dataset.obs_stats, act_stats=dataset.act_stats,
                method=f"blocks={blocks}",
            )
            for seed in range(base_seed, base_seed + config.eval.n_seeds)
        ]
        succ = np.array([float(r.success) for r in records])
        lo, hi = bootstrap_ci(succ, config.eval.bootstrap_resamples)
        obs0 = np.zeros(dataset.obs_dim)
        prev0 = np.zeros((dataset.horizon, dataset.action_dim))
        t0 = time.perf_counter()
        reps = 50
        for _ in range(reps):
            predictor.forward(obs0, prev0)
        latency = (time.perf_counter() - t0) / reps * 1e3
        rows.append(
            AblationRow(
                num_blocks=blocks,
                score=float(succ.mean()),
                ci_lo=lo,
                ci_hi=hi,
                predictor_latency_ms=latency,
                predictor_flops=predictor_flop_proxy(predictor),
                param_count=predictor.param_count(),
            )
        )
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["num_blocks", "score", "ci_lo", "ci_hi", "predictor_latency_ms",
         "predictor_flops", "param_count"]
    )
    for r in rows:
        writer.writerow(
            [r.num_blocks, f"{r.score:.4f}", f"{r.ci_lo:.4f}", f"{r.ci_hi:.4f}",
             f"{r.predictor_latency_ms:.3f}", f"{r.predictor_flops:.0f}", r.param_count]
        )
    return buf.getvalue()
