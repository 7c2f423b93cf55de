"""Closed-loop warm-started control.

Each control step either cold-starts from Gaussian noise (first chunk) or
asks the consistency predictor for the next chunk, noises it according to
the stall indicator, and denoises over a short ladder. The whole chunk is
executed before the next inference.

EpisodeRecord captures everything needed downstream: per-chunk traces with
the warm-start chunk itself (for consistency measurement), denoiser
evaluation counts (the hardware-independent cost metric), and wall-clock
latency of the predict+denoise region only.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import Schedule, build_ladder, run_reverse
from .envs import EnvConfig, env_step, obs_vector, reset
from .errors import ContractError, DimensionError
from .models import DenoiserNet, PredictorNet


@dataclass(frozen=True)
class WarmStartConfig:
    num_steps: int  # total diffusion steps K
    k_prime: int  # warm-start step K'
    ladder: tuple[int, ...]  # decreasing step indices, first <= K', last 0
    sigma_scale: float = 1.0
    sigma_stall: float = 0.1
    eps_a: float = 0.01
    sampler: str = "ddim"
    eta: float = 0.0
    cold_ladder: tuple[int, ...] | None = None  # default: full chain from K
    warm_source: str = "predictor"  # or "reuse" (previous chunk as-is)
    cold_sampler: str | None = None  # default: ddpm for the full fallback chain
    always_cold: bool = False  # baseline mode: every chunk starts from pure noise

    def __post_init__(self):
        if not 0 < self.k_prime < self.num_steps:
            raise ContractError(f"need 0 < k_prime < K, got K'={self.k_prime}, K={self.num_steps}")
        lad = tuple(self.ladder)
        if list(lad) != sorted(set(lad), reverse=True) or lad[-1] != 0 or lad[0] > self.k_prime:
            raise ContractError(
                f"ladder must strictly decrease from <= K'={self.k_prime} to 0, got {lad}"
            )
        if self.eps_a <= 0:
            raise ContractError("eps_a must be > 0")
        if self.warm_source not in ("predictor", "reuse"):
            raise ContractError(f"unknown warm_source {self.warm_source!r}")

    @property
    def steps(self) -> int:
        """Denoiser evaluations per steady-state control step."""
        return len(self.ladder) - 1

    def full_cold_ladder(self) -> tuple[int, ...]:
        if self.cold_ladder is not None:
            return tuple(self.cold_ladder)
        return tuple(range(self.num_steps, -1, -1))


def default_warm_config(
    num_steps: int = 100,
    steps: int = 2,
    k_prime: int = 10,
    sigma_scale: float = 1.0,
    sigma_stall: float = 0.1,
    **kwargs,
) -> WarmStartConfig:
    return WarmStartConfig(
        num_steps=num_steps,
        k_prime=k_prime,
        ladder=build_ladder(k_prime, steps),
        sigma_scale=sigma_scale,
        sigma_stall=sigma_stall,
        **kwargs,
    )


def stall_indicator(
    cache: np.ndarray | None, prev2: np.ndarray | None, eps_a: float
) -> int:
    """1 iff the Frobenius norm of (cache - prev2) is strictly below eps_a.

    With either chunk missing no stall claim is possible and 0 is returned.
    """
    if cache is None or prev2 is None:
        return 0
    cache = np.asarray(cache)
    prev2 = np.asarray(prev2)
    if cache.shape != prev2.shape:
        raise DimensionError(f"chunk shapes disagree: {cache.shape} vs {prev2.shape}")
    return int(float(np.linalg.norm(cache - prev2)) < eps_a)


def select_sigmas(indicator: int, cfg: WarmStartConfig) -> tuple[float, float]:
    """Stall branch scales the prediction and injects noise; the non-stall
    branch passes the prediction through untouched."""
    if indicator:
        return cfg.sigma_scale, cfg.sigma_stall
    return 1.0, 0.0


def warm_start(
    pred: np.ndarray, sigma: float, sigma_t: float, rng: np.random.Generator
) -> np.ndarray:
    """sigma * prediction + sigma_t * unit Gaussian noise."""
    pred = np.asarray(pred, dtype=np.float64)
    if not np.all(np.isfinite(pred)):
        raise ContractError("warm start requires a finite prediction")
    return sigma * pred + sigma_t * rng.standard_normal(pred.shape)


@dataclass
class InferenceTrace:
    cold_start: bool
    indicator: int
    sigma: float
    sigma_t: float
    denoiser_evals: int
    predictor_evals: int
    latency_ms: float
    warm_chunk: np.ndarray  # the initialization handed to the sampler
    obs: np.ndarray  # normalized observation used for conditioning


@dataclass
class ControllerState:
    cache: np.ndarray | None = None
    prev2: np.ndarray | None = None
    t: int = 0
    last_indicator: int = 0


class Controller:
    """One closed-loop policy instance; strictly sequential within an episode."""

    def __init__(
        self,
        denoiser: DenoiserNet,
        schedule: Schedule,
        cfg: WarmStartConfig,
        rng: np.random.Generator,
        predictor: PredictorNet | None = None,
    ):
        if cfg.num_steps != schedule.num_steps:
            raise ContractError(
                f"config K={cfg.num_steps} does not match schedule K={schedule.num_steps}"
            )
        if cfg.warm_source == "predictor" and predictor is None:
            raise ContractError("predictor warm starts need a predictor network")
        self.denoiser = denoiser
        self.predictor = predictor
        self.schedule = schedule
        self.cfg = cfg
        self.rng = rng
        self.state = ControllerState()
        h = denoiser.config.horizon
        d = denoiser.config.action_dim
        self._chunk_shape = (h, d)

    def control_step(self, obs: np.ndarray) -> tuple[np.ndarray, InferenceTrace]:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.denoiser.config.obs_dim,):
            raise DimensionError(
                f"obs shape {obs.shape} != ({self.denoiser.config.obs_dim},)"
            )
        cfg = self.cfg
        ctrl = self.state
        eps_fn = lambda a, k: self.denoiser.forward(a, k, obs)
        t0 = time.perf_counter()
        predictor_evals = 0
        if cfg.always_cold or ctrl.t < self.horizon or ctrl.cache is None:
            init = self.rng.standard_normal(self._chunk_shape)
            ladder = cfg.full_cold_ladder()
            sampler = cfg.cold_sampler or ("ddpm" if len(ladder) == cfg.num_steps + 1 else cfg.sampler)
            chunk, evals = run_reverse(
                init, ladder, eps_fn, self.schedule, sampler=sampler, rng=self.rng, eta=cfg.eta
            )
            trace = InferenceTrace(
                cold_start=True,
                indicator=0,
                sigma=1.0,
                sigma_t=0.0,
                denoiser_evals=evals,
                predictor_evals=0,
                latency_ms=(time.perf_counter() - t0) * 1e3,
                warm_chunk=init,
                obs=obs.copy(),
            )
        else:
            if cfg.warm_source == "predictor":
                pred = self.predictor.forward(obs, ctrl.cache)
                predictor_evals = 1
            else:
                pred = ctrl.cache.copy()
            indicator = stall_indicator(ctrl.cache, ctrl.prev2, cfg.eps_a)
            sigma, sigma_t = select_sigmas(indicator, cfg)
            init = warm_start(pred, sigma, sigma_t, self.rng)
            chunk, evals = run_reverse(
                init, cfg.ladder, eps_fn, self.schedule,
                sampler=cfg.sampler, rng=self.rng, eta=cfg.eta,
            )
            ctrl.last_indicator = indicator
            trace = InferenceTrace(
                cold_start=False,
                indicator=indicator,
                sigma=sigma,
                sigma_t=sigma_t,
                denoiser_evals=evals,
                predictor_evals=predictor_evals,
                latency_ms=(time.perf_counter() - t0) * 1e3,
                warm_chunk=init,
                obs=obs.copy(),
            )
        ctrl.prev2 = ctrl.cache
        ctrl.cache = chunk
        ctrl.t += self.horizon
        return chunk, trace

    @property
    def horizon(self) -> int:
        return self.denoiser.config.horizon


@dataclass
class ChunkTrace:
    cold_start: bool
    indicator: int
    sigma: float
    sigma_t: float
    denoiser_evals: int
    predictor_evals: int
    latency_ms: float
    temporal_gap: float | None  # ||first action - last executed action of prev chunk||
    warm_chunk: list  # the initialization handed to the sampler
    executed_chunk: list  # normalized actions actually executed (may be cut short)
    obs: list
    executed_actions: int


@dataclass
class EpisodeRecord:
    seed: int
    env_kind: str
    method: str
    steps: int
    success: bool
    success_step: int | None
    n_steps: int
    stall_events: int
    chunks: list[ChunkTrace]
    config: dict = field(default_factory=dict)

    @property
    def temporal_gaps(self) -> list[float]:
        return [c.temporal_gap for c in self.chunks if c.temporal_gap is not None]

    def latency_stats(self) -> dict:
        lat = np.array([c.latency_ms for c in self.chunks])
        return {
            "mean_ms": float(lat.mean()),
            "p50_ms": float(np.percentile(lat, 50)),
            "p95_ms": float(np.percentile(lat, 95)),
        }

    def denoiser_evals_steady(self) -> list[int]:
        return [c.denoiser_evals for c in self.chunks if not c.cold_start]

    def to_json_row(self, include_timing: bool = True) -> str:
        """One JSON-lines row. With ``include_timing=False`` the wall-clock
        fields are dropped, leaving only seed-deterministic content."""
        blob = asdict(self)
        for chunk in blob["chunks"]:
            if not include_timing:
                del chunk["latency_ms"]
        if include_timing:
            blob["latency"] = self.latency_stats()
        return json.dumps(blob, sort_keys=True)

    @classmethod
    def from_json_row(cls, row: str) -> "EpisodeRecord":
        blob = json.loads(row)
        blob.pop("latency", None)
        chunks = [ChunkTrace(**{**c, "latency_ms": c.get("latency_ms", 0.0)}) for c in blob.pop("chunks")]
        return cls(chunks=chunks, **blob)


def run_episode(
    env_cfg: EnvConfig,
    denoiser: DenoiserNet,
    schedule: Schedule,
    ws_cfg: WarmStartConfig,
    seed: int,
    predictor: PredictorNet | None = None,
    obs_stats=None,
    act_stats=None,
    method: str = "",
) -> EpisodeRecord:
    """Run one closed-loop episode to success or the step cap.

    Observations are normalized before conditioning and chunks denormalized
    before execution when stats are provided. All failures are recorded
    outcomes, never exceptions.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
    ctrl = Controller(denoiser, schedule, ws_cfg, rng, predictor=predictor)
    state = reset(env_cfg, seed)
    chunks: list[ChunkTrace] = []
    success = False
    success_step: int | None = None
    last_executed: np.ndarray | None = None
    t = 0
    while t < env_cfg.episode_cap and not success:
        raw_obs = obs_vector(state, env_cfg)
        obs = obs_stats.normalize(raw_obs) if obs_stats is not None else raw_obs
        chunk, trace = ctrl.control_step(obs)
        exec_actions = act_stats.denormalize(chunk) if act_stats is not None else chunk
        gap = None
        if last_executed is not None:
            gap = float(np.linalg.norm(chunk[0] - last_executed))
        executed = 0
        for i in range(ctrl.horizon):
            if t >= env_cfg.episode_cap:
                break
            state, ok = env_step(state, exec_actions[i], env_cfg)
            last_executed = chunk[i]
            executed += 1
            t += 1
            if ok:
                success = True
                success_step = t
                break
        chunks.append(
            ChunkTrace(
                cold_start=trace.cold_start,
                indicator=trace.indicator,
                sigma=trace.sigma,
                sigma_t=trace.sigma_t,
                denoiser_evals=trace.denoiser_evals,
                predictor_evals=trace.predictor_evals,
                latency_ms=trace.latency_ms,
                temporal_gap=gap,
                warm_chunk=trace.warm_chunk.tolist(),
                executed_chunk=chunk[:executed].tolist(),
                obs=trace.obs.tolist(),
                executed_actions=executed,
            )
        )
    eval_steps = len(ws_cfg.full_cold_ladder()) - 1 if ws_cfg.always_cold else ws_cfg.steps
    return EpisodeRecord(
        seed=seed,
        env_kind=env_cfg.env_kind,
        method=method,
        steps=eval_steps,
        success=success,
        success_step=success_step,
        n_steps=t,
        stall_events=sum(c.indicator for c in chunks),
        chunks=chunks,
        config={
            "k_prime": ws_cfg.k_prime,
            "sigma_scale": ws_cfg.sigma_scale,
            "sigma_stall": ws_cfg.sigma_stall,
            "eps_a": ws_cfg.eps_a,
            "sampler": ws_cfg.sampler,
            "warm_source": ws_cfg.warm_source,
            "dead_zone": env_cfg.dead_zone,
        },
    )


def cold_start_config(
    num_steps: int = 100, steps: int = 2, sampler: str = "ddim", **kwargs
) -> WarmStartConfig:
    """An always-cold baseline: every chunk starts from pure noise and
    denoises over an evenly spaced ladder from K (no predictor involved)."""
    k_prime = num_steps - 1
    return WarmStartConfig(
        num_steps=num_steps,
        k_prime=k_prime,
        ladder=build_ladder(k_prime, 1),
        cold_ladder=build_ladder(num_steps, steps),
        warm_source="reuse",
        sampler=sampler,
        cold_sampler=sampler,
        always_cold=True,
        **kwargs,
    )
