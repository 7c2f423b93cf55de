"""Deterministic toy 2D control environments, scripted experts, and
demonstration datasets.

Three kinds share one kinematic core (position += action * dt, clamped to
the arena):

* ``reach``     - drive the agent onto a goal point.
* ``push_lite`` - push a disk-shaped object onto the goal.
* ``fork``      - reach a goal behind a central obstacle; experts pass it on
  the left or the right, so demonstrations are bimodal.

A dead zone models static friction: commanded displacements below the
threshold produce no motion. Demonstrations are normally collected with the
dead zone off and policies evaluated with it on, which reproduces the
approach-and-freeze deadlock near the goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError

ACTION_DIM = 2
ARENA = 1.0
OBSTACLE_CENTER = np.array([0.0, 0.0])
OBSTACLE_RADIUS = 0.3
CONTACT_RADIUS = 0.1
EXPERT_GAIN = 1.5

ENV_KINDS = ("reach", "push_lite", "fork")


@dataclass(frozen=True)
class EnvConfig:
    env_kind: str
    dead_zone: float = 0.0
    dt: float = 0.1
    episode_cap: int = 200
    success_radius: float = 0.05
    goal_switch_step: int | None = None  # goal mirrors through the origin here
    min_separation: float = 0.5  # reach: lower bound on start-to-goal distance

    def __post_init__(self):
        if self.env_kind not in ENV_KINDS:
            raise ContractError(f"env_kind must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if self.dead_zone < 0:
            raise ContractError("dead_zone must be >= 0")


@dataclass
class EnvState:
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    object_pos: np.ndarray
    goal_pos: np.ndarray
    step_count: int
    rng_seed: int


def obs_dim(cfg: EnvConfig) -> int:
    return 8 if cfg.env_kind == "push_lite" else 6


def obs_vector(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    parts = [state.agent_pos, state.agent_vel]
    if cfg.env_kind == "push_lite":
        parts.append(state.object_pos)
    parts.append(state.goal_pos)
    return np.concatenate(parts)


def reset(cfg: EnvConfig, seed: int) -> EnvState:
    rng = np.random.default_rng(seed)
    if cfg.env_kind == "fork":
        agent = np.array([rng.uniform(-0.25, 0.25), -0.8])
        goal = np.array([rng.uniform(-0.25, 0.25), 0.8])
        obj = np.zeros(2)
    elif cfg.env_kind == "push_lite":
        obj = rng.uniform(-0.35, 0.35, size=2)
        while True:
            goal = rng.uniform(-0.75, 0.75, size=2)
            if np.linalg.norm(goal - obj) > 0.45:
                break
        away = obj + _unit(obj - goal) * (CONTACT_RADIUS + 0.25)
        agent = np.clip(away + rng.uniform(-0.05, 0.05, size=2), -0.9, 0.9)
        obj = obj.astype(np.float64)
    else:
        agent = rng.uniform(-0.8, 0.8, size=2)
        while True:
            goal = rng.uniform(-0.8, 0.8, size=2)
            if np.linalg.norm(goal - agent) > cfg.min_separation:
                break
        obj = np.zeros(2)
    return EnvState(
        agent_pos=agent.astype(np.float64),
        agent_vel=np.zeros(2),
        object_pos=obj.astype(np.float64),
        goal_pos=goal.astype(np.float64),
        step_count=0,
        rng_seed=seed,
    )


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.array([1.0, 0.0])


def _in_obstacle(p: np.ndarray) -> bool:
    return float(np.linalg.norm(p - OBSTACLE_CENTER)) < OBSTACLE_RADIUS


def _success(state: EnvState, cfg: EnvConfig) -> bool:
    target = state.object_pos if cfg.env_kind == "push_lite" else state.agent_pos
    return float(np.linalg.norm(target - state.goal_pos)) < cfg.success_radius


def env_step(state: EnvState, action: np.ndarray, cfg: EnvConfig) -> tuple[EnvState, bool]:
    """Advance one step. Total: bad actions are clipped, never rejected."""
    action = np.clip(np.asarray(action, dtype=np.float64)[:ACTION_DIM], -1.0, 1.0)
    disp = action * cfg.dt
    if cfg.dead_zone > 0.0 and float(np.linalg.norm(disp)) < cfg.dead_zone:
        disp = np.zeros(2)
    proposed = np.clip(state.agent_pos + disp, -ARENA, ARENA)
    if cfg.env_kind == "fork" and _in_obstacle(proposed):
        proposed = state.agent_pos.copy()  # blocked, no sliding

    object_pos = state.object_pos
    if cfg.env_kind == "push_lite":
        gap = proposed - state.object_pos
        dist = float(np.linalg.norm(gap))
        if dist < CONTACT_RADIUS:
            object_pos = np.clip(
                proposed - _unit(gap) * CONTACT_RADIUS, -ARENA, ARENA
            )

    goal = state.goal_pos
    step_count = state.step_count + 1
    if cfg.goal_switch_step is not None and step_count == cfg.goal_switch_step:
        goal = np.clip(-state.goal_pos, -0.8, 0.8)

    new_state = EnvState(
        agent_pos=proposed,
        agent_vel=(proposed - state.agent_pos) / cfg.dt,
        object_pos=object_pos,
        goal_pos=goal,
        step_count=step_count,
        rng_seed=state.rng_seed,
    )
    return new_state, _success(new_state, cfg)


def expert_action(
    state: EnvState, cfg: EnvConfig, mode: str = "direct", gain: float = EXPERT_GAIN
) -> np.ndarray:
    """Proportional controller toward the task target.

    ``mode`` selects the side used to clear the fork obstacle ("left" or
    "right"); other kinds ignore it.
    """
    if cfg.env_kind == "fork":
        side = -1.0 if mode == "left" else 1.0
        x, y = state.agent_pos
        if y < 0.4 and abs(x) < 0.62:
            lane = np.array([side * 0.62, max(y, -0.5) + 0.6])
            target = lane
        else:
            target = state.goal_pos
    elif cfg.env_kind == "push_lite":
        behind = state.object_pos + _unit(state.object_pos - state.goal_pos) * (
            CONTACT_RADIUS + 0.05
        )
        at_push_side = (
            float(np.linalg.norm(state.agent_pos - behind)) < 0.08
            or float(
                np.dot(
                    _unit(state.object_pos - state.agent_pos),
                    _unit(state.goal_pos - state.object_pos),
                )
            )
            > 0.95
        )
        target = state.object_pos if at_push_side else behind
    else:
        target = state.goal_pos
    return np.clip(gain * (target - state.agent_pos), -1.0, 1.0)


# ---------------------------------------------------------------------------
# Demonstration datasets
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
_FORMAT = "warmstart-dp/dataset/1"


@dataclass
class NormStats:
    """Per-dimension min/max used to map raw values onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        safe = np.where(span > 1e-12, span, 1.0)
        out = 2.0 * (x - self.lo) / safe - 1.0
        return np.where(span > 1e-12, out, 0.0)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return self.lo + (x + 1.0) * (self.hi - self.lo) / 2.0

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, blob: dict) -> "NormStats":
        return cls(np.asarray(blob["lo"], float), np.asarray(blob["hi"], float))


@dataclass
class Dataset:
    cfg: EnvConfig
    horizon: int
    episodes: list[tuple[np.ndarray, np.ndarray]]  # (obs (L,obs_dim), act (L,d)) raw
    obs_stats: NormStats
    act_stats: NormStats
    meta: dict = field(default_factory=dict)

    @property
    def obs_dim(self) -> int:
        return self.episodes[0][0].shape[1]

    @property
    def action_dim(self) -> int:
        return self.episodes[0][1].shape[1]

    def denoiser_pairs(self, stride: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Normalized (observation, clean chunk) pairs.

        The default stride of one horizon gives the non-overlapping chunking
        the controller executes; a smaller stride yields overlapping windows
        for denser training coverage of mid-chunk phases.
        """
        stride = self.horizon if stride is None else stride
        obs_rows, chunks = [], []
        for obs, act in self.episodes:
            for start in range(0, len(act) - self.horizon + 1, stride):
                obs_rows.append(self.obs_stats.normalize(obs[start]))
                chunks.append(self.act_stats.normalize(act[start : start + self.horizon]))
        return np.asarray(obs_rows), np.asarray(chunks)

    def predictor_triples(
        self, stride: int | None = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Normalized (observation, previous chunk, target chunk) triples,
        aligned so the target starts where the previous chunk ended."""
        stride = self.horizon if stride is None else stride
        obs_rows, prevs, targets = [], [], []
        h = self.horizon
        for obs, act in self.episodes:
            for start in range(h, len(act) - h + 1, stride):
                obs_rows.append(self.obs_stats.normalize(obs[start]))
                prevs.append(self.act_stats.normalize(act[start - h : start]))
                targets.append(self.act_stats.normalize(act[start : start + h]))
        return np.asarray(obs_rows), np.asarray(prevs), np.asarray(targets)


def _episode_length(success_step: int | None, cap: int, horizon: int) -> int:
    """Hold for one extra chunk after success, rounded up to whole chunks."""
    usable_cap = (cap // horizon) * horizon
    if success_step is None:
        return usable_cap
    want = success_step + 1 + horizon
    want = ((want + horizon - 1) // horizon) * horizon
    return int(min(max(want, 2 * horizon), usable_cap))


def rollout_expert(
    cfg: EnvConfig,
    seed: int,
    horizon: int,
    mode: str = "direct",
    gain: float = EXPERT_GAIN,
    noise_sigma: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, int | None]:
    """Run the scripted expert; returns (obs, actions, success_step) with the
    length padded to a whole number of chunks (expert keeps station-holding
    after success).

    ``noise_sigma`` adds Gaussian exploration noise to the executed actions,
    so demonstrations also cover off-nominal states and their recoveries.
    """
    state = reset(cfg, seed)
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    obs_rows, act_rows = [], []
    success_step: int | None = None
    usable_cap = (cfg.episode_cap // horizon) * horizon
    if usable_cap < 2 * horizon:
        raise ContractError(
            f"episode_cap {cfg.episode_cap} too small for two chunks of {horizon}"
        )
    t = 0
    while t < usable_cap:
        obs_rows.append(obs_vector(state, cfg))
        a = expert_action(state, cfg, mode=mode, gain=gain)
        if noise_sigma > 0.0:
            a = np.clip(a + noise_rng.normal(0.0, noise_sigma, size=a.shape), -1.0, 1.0)
        act_rows.append(a)
        state, success = env_step(state, a, cfg)
        if success and success_step is None:
            success_step = t
        t += 1
        if success_step is not None and t >= _episode_length(success_step, cfg.episode_cap, horizon):
            break
    return np.asarray(obs_rows), np.asarray(act_rows), success_step


def generate_dataset(
    cfg: EnvConfig,
    n_episodes: int,
    seed: int,
    out_dir: str | Path,
    horizon: int = 16,
    expert_noise: float = 0.25,
) -> "Dataset":
    """Roll the scripted expert and write the dataset directory.

    Layout: ``manifest.json`` plus little-endian float64 blobs ``obs.bin``
    and ``actions.bin``. Fork episodes draw their side uniformly.
    """
    if n_episodes < 1:
        raise ContractError("n_episodes must be >= 1")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    episodes, index = [], []
    offset = 0
    for i in range(n_episodes):
        ep_seed = int(rng.integers(0, 2**31 - 1))
        mode = "direct"
        if cfg.env_kind == "fork":
            # prefer the side nearer the start; keeps both modes well represented
            start_x = reset(cfg, ep_seed).agent_pos[0]
            near = "left" if start_x < 0 else "right"
            far = "right" if near == "left" else "left"
            mode = near if rng.random() < 0.7 else far
        obs, act, success_step = rollout_expert(
            cfg, ep_seed, horizon, mode=mode, noise_sigma=expert_noise
        )
        episodes.append((obs, act))
        index.append(
            {
                "offset": offset,
                "length": len(act),
                "seed": ep_seed,
                "mode": mode,
                "success_step": success_step,
            }
        )
        offset += len(act)

    all_obs = np.concatenate([e[0] for e in episodes])
    all_act = np.concatenate([e[1] for e in episodes])
    obs_stats = NormStats(all_obs.min(axis=0), all_obs.max(axis=0))
    act_stats = NormStats(all_act.min(axis=0), all_act.max(axis=0))

    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        all_obs.astype("<f8").tofile(out_dir / "obs.bin")
        all_act.astype("<f8").tofile(out_dir / "actions.bin")
        manifest = {
            "format": _FORMAT,
            "env": _cfg_to_json(cfg),
            "horizon": horizon,
            "obs_dim": int(all_obs.shape[1]),
            "action_dim": int(all_act.shape[1]),
            "n_episodes": n_episodes,
            "seed": seed,
            "expert_noise": expert_noise,
            "obs_stats": obs_stats.to_json(),
            "act_stats": act_stats.to_json(),
            "episodes": index,
        }
        (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    except OSError as exc:
        raise OSError(f"failed writing dataset under {out_dir}: {exc}") from exc
    meta = {"n_episodes": n_episodes, "seed": seed, "episodes": index}
    return Dataset(cfg, horizon, episodes, obs_stats, act_stats, meta)


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise ContractError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != _FORMAT:
        raise ContractError(f"unrecognized dataset format in {manifest_path}")
    cfg = _cfg_from_json(manifest["env"])
    all_obs = np.fromfile(path / "obs.bin", dtype="<f8").reshape(-1, manifest["obs_dim"])
    all_act = np.fromfile(path / "actions.bin", dtype="<f8").reshape(-1, manifest["action_dim"])
    episodes = []
    for entry in manifest["episodes"]:
        o, n = entry["offset"], entry["length"]
        episodes.append((all_obs[o : o + n], all_act[o : o + n]))
    return Dataset(
        cfg,
        manifest["horizon"],
        episodes,
        NormStats.from_json(manifest["obs_stats"]),
        NormStats.from_json(manifest["act_stats"]),
        {k: manifest[k] for k in ("n_episodes", "seed", "episodes")},
    )


def _cfg_to_json(cfg: EnvConfig) -> dict:
    return {
        "env_kind": cfg.env_kind,
        "dead_zone": cfg.dead_zone,
        "dt": cfg.dt,
        "episode_cap": cfg.episode_cap,
        "success_radius": cfg.success_radius,
        "goal_switch_step": cfg.goal_switch_step,
        "min_separation": cfg.min_separation,
    }


def _cfg_from_json(blob: dict) -> EnvConfig:
    return EnvConfig(**blob)


def with_dead_zone(cfg: EnvConfig, dead_zone: float) -> EnvConfig:
    return replace(cfg, dead_zone=dead_zone)
