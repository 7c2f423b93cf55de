"""Networks: the conditional noise predictor used by the samplers, and the
chunk-to-chunk consistency predictor that supplies warm starts.

Parameters live in insertion-ordered dicts of named Tensors so optimizer
order, checkpoints, and finite-difference sweeps all agree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import Tensor, concat, gelu, no_grad, softmax, sqrt
from .numerics.checkpoint import load_checkpoint, save_checkpoint


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def sinusoidal_embedding(steps: np.ndarray, dim: int) -> np.ndarray:
    """Classic sin/cos positional features of diffusion step indices."""
    steps = np.atleast_1d(np.asarray(steps, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


class _NetBase:
    """Shared parameter bookkeeping for both networks."""

    params: dict[str, Tensor]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def load_params(self, params: dict[str, Tensor]) -> None:
        for name, own in self.params.items():
            if name not in params:
                raise ContractError(f"checkpoint is missing parameter {name!r}")
            if params[name].shape != own.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {params[name].shape} "
                    f"!= model shape {own.shape}"
                )
            own.data = params[name].data.copy()


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenoiserConfig:
    horizon: int
    action_dim: int
    obs_dim: int
    hidden: tuple[int, ...] = (256, 256)
    step_embed_dim: int = 64

    @property
    def in_dim(self) -> int:
        return self.horizon * self.action_dim + self.step_embed_dim + self.obs_dim


class DenoiserNet(_NetBase):
    """MLP over the flattened noisy chunk, conditioned on the observation and
    a sinusoidal embedding of the diffusion step."""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        if isinstance(config, dict):
            config = DenoiserConfig(**_tupled(config, "hidden"))
        self.config = config
        self.eval_count = 0
        rng = np.random.default_rng(seed)
        dims = [config.in_dim, *config.hidden, config.horizon * config.action_dim]
        self.params = {}
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"l{i}.w"] = _init_linear(rng, fi, fo)
            self.params[f"l{i}.b"] = _zeros(fo)
        self._n_layers = len(dims) - 1

    def forward_batch(self, a_t: np.ndarray, t: np.ndarray, obs: np.ndarray) -> Tensor:
        cfg = self.config
        a_t = np.asarray(a_t, dtype=np.float64)
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if a_t.shape[1:] != (cfg.horizon, cfg.action_dim):
            raise DimensionError(
                f"chunk batch shape {a_t.shape} != (B, {cfg.horizon}, {cfg.action_dim})"
            )
        if obs.shape[1] != cfg.obs_dim:
            raise DimensionError(f"obs dim {obs.shape[1]} != {cfg.obs_dim}")
        batch = a_t.shape[0]
        emb = sinusoidal_embedding(t, cfg.step_embed_dim)
        if emb.shape[0] == 1 and batch > 1:
            emb = np.repeat(emb, batch, axis=0)
        self.eval_count += 1
        h = concat(
            [Tensor(a_t.reshape(batch, -1)), Tensor(emb), Tensor(obs)], axis=-1
        )
        for i in range(self._n_layers):
            h = h @ self.params[f"l{i}.w"] + self.params[f"l{i}.b"]
            if i < self._n_layers - 1:
                h = gelu(h)
        return h.reshape(batch, cfg.horizon, cfg.action_dim)

    def forward(self, a_k: np.ndarray, k: int, obs: np.ndarray) -> np.ndarray:
        """Single-chunk noise prediction without graph recording."""
        if not 1 <= int(k) or int(k) != k:
            raise ContractError(f"step index must be a positive integer, got {k}")
        with no_grad():
            out = self.forward_batch(
                np.asarray(a_k)[None], np.array([int(k)]), np.asarray(obs)[None]
            )
        return out.data[0]

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.params, {"kind": "denoiser", **asdict(self.config)})

    @classmethod
    def load(cls, path: str | Path) -> "DenoiserNet":
        params, config = load_checkpoint(path)
        config = dict(config)
        if config.pop("kind", "denoiser") != "denoiser":
            raise ContractError(f"checkpoint at {path} is not a denoiser")
        net = cls(DenoiserConfig(**_fields_only(DenoiserConfig, _tupled(config, "hidden"))), seed=0)
        net.load_params(params)
        return net


# ---------------------------------------------------------------------------
# Consistency predictor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictorConfig:
    horizon: int
    action_dim: int
    obs_dim: int
    embed_dim: int = 128
    num_blocks: int = 2
    num_heads: int = 4
    ff_mult: int = 2


class PredictorNet(_NetBase):
    """Cross-attention predictor mapping (observation, previous chunk) to the
    next chunk.

    Per-position action tokens are the queries; the embedded observation
    supplies keys and values. Blocks are pre-norm with residuals around both
    the attention and feed-forward sublayers; a final layer norm feeds the
    output projection back to (H, d).
    """

    def __init__(self, config: PredictorConfig, seed: int = 0):
        if isinstance(config, dict):
            config = PredictorConfig(**config)
        if config.embed_dim % config.num_heads != 0:
            raise ContractError(
                f"embed_dim {config.embed_dim} not divisible by {config.num_heads} heads"
            )
        self.config = config
        self.eval_count = 0
        rng = np.random.default_rng(seed)
        d, dm = config.action_dim, config.embed_dim
        p: dict[str, Tensor] = {}
        p["act_embed.w"] = _init_linear(rng, d, dm)
        p["act_embed.b"] = _zeros(dm)
        p["pos_embed"] = Tensor(
            rng.normal(0.0, 0.02, size=(config.horizon, dm)), requires_grad=True
        )
        p["obs_embed.w"] = _init_linear(rng, config.obs_dim, dm)
        p["obs_embed.b"] = _zeros(dm)
        for i in range(config.num_blocks):
            pre = f"blocks.{i}."
            p[pre + "ln1.g"] = Tensor(np.ones(dm), requires_grad=True)
            p[pre + "ln1.b"] = _zeros(dm)
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + name] = _init_linear(rng, dm, dm)
                p[pre + name.replace("w", "b")] = _zeros(dm)
            p[pre + "ln2.g"] = Tensor(np.ones(dm), requires_grad=True)
            p[pre + "ln2.b"] = _zeros(dm)
            p[pre + "ff1.w"] = _init_linear(rng, dm, config.ff_mult * dm)
            p[pre + "ff1.b"] = _zeros(config.ff_mult * dm)
            p[pre + "ff2.w"] = _init_linear(rng, config.ff_mult * dm, dm)
            p[pre + "ff2.b"] = _zeros(dm)
        p["out_norm.g"] = Tensor(np.ones(dm), requires_grad=True)
        p["out_norm.b"] = _zeros(dm)
        p["out_proj.w"] = _init_linear(rng, dm, d)
        p["out_proj.b"] = _zeros(d)
        self.params = p

    def _attend(self, x: Tensor, kv: Tensor, prefix: str, batch: int) -> Tensor:
        cfg = self.config
        heads = cfg.num_heads
        hd = cfg.embed_dim // heads
        p = self.params

        def split(t: Tensor, n_tok: int) -> Tensor:
            return t.reshape(batch, n_tok, heads, hd).transpose(0, 2, 1, 3)

        q = split(x @ p[prefix + "wq"] + p[prefix + "bq"], cfg.horizon)
        k = split(kv @ p[prefix + "wk"] + p[prefix + "bk"], kv.shape[1])
        v = split(kv @ p[prefix + "wv"] + p[prefix + "bv"], kv.shape[1])
        scores = q @ k.transpose(0, 1, 3, 2) * (1.0 / math.sqrt(hd))
        attn = softmax(scores, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, cfg.horizon, cfg.embed_dim)
        return out @ p[prefix + "wo"] + p[prefix + "bo"]

    def forward_batch(self, obs: np.ndarray, prev: np.ndarray) -> Tensor:
        cfg = self.config
        prev = np.asarray(prev, dtype=np.float64)
        obs = np.asarray(obs, dtype=np.float64)
        if prev.ndim != 3 or prev.shape[1:] != (cfg.horizon, cfg.action_dim):
            raise DimensionError(
                f"previous-chunk batch shape {prev.shape} != (B, {cfg.horizon}, {cfg.action_dim})"
            )
        if obs.ndim == 2:
            obs = obs[:, None, :]  # single observation token
        if obs.shape[-1] != cfg.obs_dim or obs.shape[0] != prev.shape[0]:
            raise DimensionError(
                f"obs batch shape {obs.shape} incompatible with cfg obs_dim={cfg.obs_dim}"
            )
        batch = prev.shape[0]
        p = self.params
        self.eval_count += 1
        x = Tensor(prev) @ p["act_embed.w"] + p["act_embed.b"] + p["pos_embed"]
        kv = Tensor(obs) @ p["obs_embed.w"] + p["obs_embed.b"]
        for i in range(cfg.num_blocks):
            pre = f"blocks.{i}."
            x = x + self._attend(
                _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"]), kv, pre, batch
            )
            h = _layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            h = gelu(h @ p[pre + "ff1.w"] + p[pre + "ff1.b"]) @ p[pre + "ff2.w"] + p[pre + "ff2.b"]
            x = x + h
        x = _layer_norm(x, p["out_norm.g"], p["out_norm.b"])
        return x @ p["out_proj.w"] + p["out_proj.b"]

    def forward(self, obs: np.ndarray, prev: np.ndarray) -> np.ndarray:
        """Single-chunk prediction without graph recording.

        ``obs`` may be a flat vector (one token) or (n_tokens, obs_dim).
        """
        obs = np.asarray(obs, dtype=np.float64)
        with no_grad():
            out = self.forward_batch(obs[None], np.asarray(prev)[None])
        return out.data[0]

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.params, {"kind": "predictor", **asdict(self.config)})

    @classmethod
    def load(cls, path: str | Path) -> "PredictorNet":
        params, config = load_checkpoint(path)
        config = dict(config)
        if config.pop("kind", "predictor") != "predictor":
            raise ContractError(f"checkpoint at {path} is not a predictor")
        net = cls(PredictorConfig(**_fields_only(PredictorConfig, config)), seed=0)
        net.load_params(params)
        return net


def predictor_loss(
    obs_batch: np.ndarray,
    prev_batch: np.ndarray,
    target_batch: np.ndarray,
    net: PredictorNet,
) -> Tensor:
    """Mean over the batch of squared Frobenius distance to the target chunk."""
    prev_batch = np.asarray(prev_batch, dtype=np.float64)
    target_batch = np.asarray(target_batch, dtype=np.float64)
    if len(prev_batch) == 0:
        raise ContractError("empty predictor batch")
    if prev_batch.shape != target_batch.shape:
        raise DimensionError(
            f"previous chunks {prev_batch.shape} and targets {target_batch.shape} misaligned"
        )
    pred = net.forward_batch(obs_batch, prev_batch)
    diff = pred - Tensor(target_batch)
    return (diff * diff).sum(axis=(1, 2)).mean()


def _tupled(config: dict, key: str) -> dict:
    out = dict(config)
    if key in out and isinstance(out[key], list):
        out[key] = tuple(out[key])
    return out


def _fields_only(cls, config: dict) -> dict:
    """Drop extra manifest keys (e.g. normalization stats) before rebuilding."""
    import dataclasses

    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in config.items() if k in names}
