"""Noise schedules, forward corruption, and reverse samplers.

Step indices are 1-based: ``k`` runs over [1, K], with index 0 meaning the
clean sample. Schedule arrays are stored 0-based (entry ``k-1`` belongs to
step ``k``); use the ``abar()`` accessor, which also defines abar(0) = 1.

Action chunks are plain (H, d) float64 arrays; batched variants carry a
leading batch axis. Reverse-step functions are pure algebra over
precomputed noise predictions so they stay independent of any network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import Tensor

CHUNK_CLIP = 3.0  # bound on denoised chunk entries (normalized units)


@dataclass(frozen=True)
class Schedule:
    kind: str
    num_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray  # posterior std per step; sigma[0] (step 1) is 0

    def abar(self, k: int | np.ndarray) -> float | np.ndarray:
        """Cumulative alpha product at step k, with abar(0) defined as 1."""
        k = np.asarray(k)
        out = np.where(k > 0, self.alpha_bar[np.maximum(k, 1) - 1], 1.0)
        return float(out) if out.ndim == 0 else out

    def deterministic(self) -> "Schedule":
        """Copy with all reverse-step noise scales zeroed."""
        return Schedule(
            self.kind, self.num_steps, self.beta, self.alpha, self.alpha_bar,
            np.zeros_like(self.sigma),
        )


def make_schedule(kind: str, num_steps: int, sigma_mode: str = "posterior") -> Schedule:
    """Build a linear or cosine schedule for ``num_steps`` diffusion steps.

    Linear betas are scaled with 1/K so the terminal alpha_bar stays in the
    fully-noised regime regardless of K (the classic thousand-step endpoints
    produce a terminal alpha_bar of ~4e-5; the scaling preserves that curve).

    ``sigma_mode`` picks the stochastic reverse-step scale: "posterior" uses
    the a0-conditioned posterior variance (tight for near-deterministic
    conditionals, e.g. trained policies); "simple" uses beta_k itself, which
    is the exact reverse variance for unit-variance Gaussian data.
    """
    if num_steps < 1:
        raise ContractError(f"num_steps must be >= 1, got {num_steps}")
    if kind == "linear":
        scale = 1000.0 / num_steps
        beta = np.linspace(scale * 1e-4, scale * 0.02, num_steps)
        beta = np.clip(beta, 0.0, 0.999)
    elif kind == "cosine":
        s = 0.008
        ts = np.arange(num_steps + 1) / num_steps
        f = np.cos((ts + s) / (1 + s) * math.pi / 2.0) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    else:
        raise ContractError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_mode == "posterior":
        abar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
        var = beta * (1.0 - abar_prev) / (1.0 - alpha_bar)
    elif sigma_mode == "simple":
        var = beta.copy()
    else:
        raise ContractError(f"unknown sigma_mode {sigma_mode!r}")
    sigma = np.sqrt(var)
    return Schedule(kind, num_steps, beta, alpha, alpha_bar, sigma)


def forward_noise(a0: np.ndarray, t: int, eps: np.ndarray, s: Schedule) -> np.ndarray:
    """Corrupt a clean chunk to step t: sqrt(abar_t) a0 + sqrt(1-abar_t) eps."""
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise DimensionError(f"noise shape {eps.shape} does not match chunk {a0.shape}")
    if not 1 <= t <= s.num_steps:
        raise ContractError(f"step {t} outside [1, {s.num_steps}]")
    ab = s.abar(t)
    return math.sqrt(ab) * a0 + math.sqrt(1.0 - ab) * eps


def ddpm_mean(a_k: np.ndarray, k: int, eps_pred: np.ndarray, s: Schedule) -> np.ndarray:
    """Posterior mean of the reverse transition at step k (deterministic part)."""
    if not 1 <= k <= s.num_steps:
        raise ContractError(f"step {k} outside [1, {s.num_steps}]")
    ak = s.alpha[k - 1]
    ab = s.alpha_bar[k - 1]
    return (a_k - (1.0 - ak) / math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ak)


def ddpm_reverse_step(
    a_k: np.ndarray, k: int, eps_pred: np.ndarray, s: Schedule, noise: np.ndarray
) -> np.ndarray:
    """One stochastic reverse step k -> k-1. sigma is forced to 0 at k = 1."""
    mean = ddpm_mean(a_k, k, eps_pred, s)
    sig = 0.0 if k == 1 else s.sigma[k - 1]
    return mean + sig * np.asarray(noise, dtype=np.float64)


def ddim_step(
    a_k: np.ndarray,
    k: int,
    k_prev: int,
    eps_pred: np.ndarray,
    s: Schedule,
    eta: float = 0.0,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Deterministic (eta=0) or partially stochastic jump from step k to k_prev.

    Predicts the clean chunk from the current noise estimate and reprojects
    it to the target noise level; supports arbitrary subsampled ladders.
    """
    if k_prev >= k:
        raise ContractError(f"ddim requires k_prev < k, got {k_prev} >= {k}")
    if not 1 <= k <= s.num_steps or k_prev < 0:
        raise ContractError(f"invalid ladder transition {k} -> {k_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ContractError(f"eta must lie in [0, 1], got {eta}")
    ab_k = s.abar(k)
    ab_p = s.abar(k_prev)
    a0_hat = (a_k - math.sqrt(1.0 - ab_k) * eps_pred) / math.sqrt(ab_k)
    if eta > 0.0 and k_prev > 0:
        sig = eta * math.sqrt((1.0 - ab_p) / (1.0 - ab_k)) * math.sqrt(1.0 - ab_k / ab_p)
    else:
        sig = 0.0
    dir_coeff = math.sqrt(max(1.0 - ab_p - sig * sig, 0.0))
    out = math.sqrt(ab_p) * a0_hat + dir_coeff * eps_pred
    if sig > 0.0:
        if noise is None:
            raise ContractError("eta > 0 needs an explicit noise draw")
        out = out + sig * np.asarray(noise, dtype=np.float64)
    return out


def build_ladder(k_start: int, steps: int) -> tuple[int, ...]:
    """Evenly spaced decreasing step indices from k_start to 0, inclusive,
    with ``steps`` transitions (= denoiser evaluations when run)."""
    if steps < 1 or k_start < 1:
        raise ContractError(f"need steps >= 1 and k_start >= 1, got {steps}, {k_start}")
    if steps > k_start:
        raise ContractError(f"cannot fit {steps} transitions under k_start={k_start}")
    pts = np.linspace(k_start, 0, steps + 1)
    ladder = tuple(int(round(p)) for p in pts)
    if len(set(ladder)) != len(ladder):
        raise ContractError(f"ladder from k_start={k_start} with {steps} steps collapses")
    return ladder


def run_reverse(
    a_init: np.ndarray,
    ladder: tuple[int, ...],
    eps_fn,
    s: Schedule,
    sampler: str = "ddim",
    rng: np.random.Generator | None = None,
    eta: float = 0.0,
) -> tuple[np.ndarray, int]:
    """Denoise ``a_init`` over a decreasing ladder ending at 0.

    ``eps_fn(a, k)`` returns the predicted noise. The ddpm sampler requires
    consecutive indices; ddim accepts arbitrary jumps. Returns the clipped
    chunk and the number of denoiser evaluations performed.
    """
    if list(ladder) != sorted(set(ladder), reverse=True) or ladder[-1] != 0:
        raise ContractError(f"ladder must strictly decrease to 0, got {ladder}")
    a = np.asarray(a_init, dtype=np.float64)
    evals = 0
    for k, k_prev in zip(ladder[:-1], ladder[1:]):
        eps_pred = eps_fn(a, k)
        evals += 1
        if sampler == "ddpm":
            if k_prev != k - 1:
                raise ContractError("ddpm sampler needs a consecutive ladder")
            noise = rng.standard_normal(a.shape) if rng is not None else np.zeros_like(a)
            a = ddpm_reverse_step(a, k, eps_pred, s, noise)
        elif sampler == "ddim":
            noise = None
            if eta > 0.0 and k_prev > 0:
                if rng is None:
                    raise ContractError("eta > 0 needs an rng")
                noise = rng.standard_normal(a.shape)
            a = ddim_step(a, k, k_prev, eps_pred, s, eta=eta, noise=noise)
        else:
            raise ContractError(f"unknown sampler {sampler!r}")
    return np.clip(a, -CHUNK_CLIP, CHUNK_CLIP), evals


def denoiser_loss(
    a0_batch: np.ndarray,
    obs_batch: np.ndarray,
    model,
    s: Schedule,
    rng: np.random.Generator,
) -> Tensor:
    """Conditional noise-prediction objective.

    Per item, draws a uniform step in [1, K] and unit Gaussian noise, corrupts
    the clean chunk, and scores the model's noise estimate by elementwise MSE.
    """
    a0_batch = np.asarray(a0_batch, dtype=np.float64)
    obs_batch = np.asarray(obs_batch, dtype=np.float64)
    if a0_batch.ndim != 3 or len(a0_batch) == 0:
        raise ContractError(f"need a non-empty (B, H, d) batch, got {a0_batch.shape}")
    if len(obs_batch) != len(a0_batch):
        raise DimensionError(
            f"batch sizes disagree: {len(a0_batch)} chunks vs {len(obs_batch)} observations"
        )
    batch = len(a0_batch)
    t = rng.integers(1, s.num_steps + 1, size=batch)
    eps = rng.standard_normal(a0_batch.shape)
    ab = s.abar(t)[:, None, None]
    a_t = np.sqrt(ab) * a0_batch + np.sqrt(1.0 - ab) * eps
    pred = model.forward_batch(a_t, t, obs_batch)
    diff = pred - Tensor(eps)
    return (diff * diff).mean()
