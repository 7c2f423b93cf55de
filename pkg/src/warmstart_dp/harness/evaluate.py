"""Evaluation grids and result tabulation.

Scores are success rates over seeds with bootstrap confidence intervals.
Latency is reported both as wall-clock milliseconds and as the denoiser
evaluation count; the count is the hardware-independent quantity.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffusion import Schedule
from ..envs import EnvConfig, NormStats
from ..errors import ContractError
from ..inference import (
    EpisodeRecord,
    WarmStartConfig,
    cold_start_config,
    default_warm_config,
    run_episode,
)
from ..models import DenoiserNet, PredictorNet
from .config import ExperimentConfig

CSV_COLUMNS = [
    "method",
    "steps",
    "score",
    "score_ci_lo",
    "score_ci_hi",
    "time_ms",
    "denoiser_evals",
    "mean_episode_steps",
    "stall_events",
    "n_seeds",
]


def bootstrap_ci(
    values: np.ndarray, n_resamples: int = 1000, seed: int = 0, level: float = 0.95
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(n_resamples, len(values)))
    means = values[idx].mean(axis=1)
    lo = (1.0 - level) / 2.0
    return float(np.quantile(means, lo)), float(np.quantile(means, 1.0 - lo))


@dataclass
class ResultRow:
    method: str
    steps: int
    score: float
    score_ci_lo: float
    score_ci_hi: float
    time_ms: float
    denoiser_evals: float
    mean_episode_steps: float
    stall_events: float
    n_seeds: int


@dataclass
class ResultsTable:
    rows: list[ResultRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [
                    r.method,
                    r.steps,
                    f"{r.score:.4f}",
                    f"{r.score_ci_lo:.4f}",
                    f"{r.score_ci_hi:.4f}",
                    f"{r.time_ms:.3f}",
                    f"{r.denoiser_evals:.2f}",
                    f"{r.mean_episode_steps:.2f}",
                    f"{r.stall_events:.2f}",
                    r.n_seeds,
                ]
            )
        return buf.getvalue()

    def find(self, method: str, steps: int) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.steps == steps:
                return r
        raise ContractError(f"no row for method={method!r} steps={steps}")


def summarize_records(
    records: list[EpisodeRecord], method: str, steps: int, n_resamples: int = 1000
) -> ResultRow:
    if not records:
        raise ContractError("cannot summarize zero records")
    succ = np.array([float(r.success) for r in records])
    lat = [c.latency_ms for r in records for c in r.chunks]
    evals = [c.denoiser_evals for r in records for c in r.chunks if not c.cold_start]
    if not evals:  # always-cold baselines have no steady-state chunks
        evals = [c.denoiser_evals for r in records for c in r.chunks]
    lo, hi = bootstrap_ci(succ, n_resamples=n_resamples)
    return ResultRow(
        method=method,
        steps=steps,
        score=float(succ.mean()),
        score_ci_lo=lo,
        score_ci_hi=hi,
        time_ms=float(np.mean(lat)),
        denoiser_evals=float(np.mean(evals)),
        mean_episode_steps=float(np.mean([r.n_steps for r in records])),
        stall_events=float(np.mean([r.stall_events for r in records])),
        n_seeds=len(records),
    )


def rebuild_table_from_jsonl(rows: list[str], n_resamples: int = 1000) -> ResultsTable:
    """Recompute the results table from raw episode records."""
    by_key: dict[tuple[str, int], list[EpisodeRecord]] = {}
    for row in rows:
        rec = EpisodeRecord.from_json_row(row)
        by_key.setdefault((rec.method, rec.steps), []).append(rec)
    table = ResultsTable()
    for (method, steps), records in sorted(by_key.items()):
        table.rows.append(summarize_records(records, method, steps, n_resamples))
    return table


@dataclass
class EvalArtifacts:
    table: ResultsTable
    records: list[EpisodeRecord]


def run_method(
    env_cfg: EnvConfig,
    denoiser: DenoiserNet,
    schedule: Schedule,
    ws_cfg: WarmStartConfig,
    seeds: range,
    method: str,
    predictor: PredictorNet | None,
    obs_stats: NormStats,
    act_stats: NormStats,
) -> list[EpisodeRecord]:
    return [
        run_episode(
            env_cfg,
            denoiser,
            schedule,
            ws_cfg,
            seed=seed,
            predictor=predictor,
            obs_stats=obs_stats,
            act_stats=act_stats,
            method=method,
        )
        for seed in seeds
    ]


def run_eval_grid(
    config: ExperimentConfig,
    denoiser: DenoiserNet,
    predictor: PredictorNet | None,
    schedule: Schedule,
    obs_stats: NormStats,
    act_stats: NormStats,
    base_seed: int = 0,
    cold_start_only: bool = False,
    no_predictor: bool = False,
) -> EvalArtifacts:
    """The standard grid: full-K stochastic baseline, cold few-step ladders,
    and warm-started few-step ladders."""
    env_cfg = EnvConfig(
        env_kind=config.env.env_kind,
        dead_zone=config.eval.eval_dead_zone,
        dt=config.env.dt,
        episode_cap=config.env.episode_cap,
        success_radius=config.env.success_radius,
        min_separation=config.env.min_separation,
    )
    seeds = range(base_seed, base_seed + config.eval.n_seeds)
    ev = config.eval
    table = ResultsTable()
    all_records: list[EpisodeRecord] = []

    def add(method: str, steps: int, ws: WarmStartConfig, pred: PredictorNet | None):
        records = run_method(
            env_cfg, denoiser, schedule, ws, seeds, method, pred, obs_stats, act_stats
        )
        all_records.extend(records)
        table.rows.append(
            summarize_records(records, method, steps, ev.bootstrap_resamples)
        )

    k = schedule.num_steps
    add("ddpm_full", k, cold_start_config(k, steps=k, sampler="ddpm"), None)
    for steps in ev.steps:
        add(f"ddim_cold", steps, cold_start_config(k, steps=steps), None)
    if not cold_start_only:
        source = "reuse" if no_predictor else "predictor"
        for steps in ev.steps:
            if steps > ev.k_prime:
                continue
            ws = default_warm_config(
                k,
                steps=steps,
                k_prime=ev.k_prime,
                sigma_scale=ev.sigma_scale,
                sigma_stall=ev.sigma_stall,
                eps_a=ev.eps_a,
                warm_source=source,
            )
            add("warm" if not no_predictor else "warm_reuse", steps, ws, predictor)
    return EvalArtifacts(table=table, records=all_records)


def write_artifacts(artifacts: EvalArtifacts, out_dir: Path, stem: str = "results") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.csv").write_text(artifacts.table.to_csv())
    with (out_dir / f"{stem}.jsonl").open("w") as fh:
        for rec in artifacts.records:
            fh.write(rec.to_json_row() + "\n")
