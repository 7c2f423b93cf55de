"""Numerical verification of reverse-process contraction and measurement of
warm-start consistency.

The Gaussian family N(mu, s2 I) admits a closed-form optimal noise
predictor, making every contraction quantity computable exactly; it anchors
the empirical estimators, which are then pointed at trained networks.

Consistency is measured on episode records: temporal gaps at chunk
boundaries, and spatial distance of each warm-start chunk to dataset chunks
whose paired observations are nearest neighbors of the current observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import Schedule, ddim_step, ddpm_mean, forward_noise
from .envs import Dataset
from .errors import ContractError
from .inference import EpisodeRecord


def analytic_gaussian_denoiser(mu: np.ndarray, s2: float, schedule: Schedule):
    """Posterior-optimal noise predictor for data drawn from N(mu, s2 I).

    Returns ``eps_fn(a_k, k)`` usable anywhere a denoiser is expected.
    """
    if s2 <= 0:
        raise ContractError("s2 must be > 0")
    mu = np.asarray(mu, dtype=np.float64)

    def eps_fn(a_k: np.ndarray, k: int) -> np.ndarray:
        ab = schedule.abar(int(k))
        return math.sqrt(1.0 - ab) * (a_k - math.sqrt(ab) * mu) / (ab * s2 + 1.0 - ab)

    return eps_fn


def gaussian_step_factor(k: int, k_prev: int, s2: float, schedule: Schedule) -> float:
    """Closed-form contraction factor of the deterministic mean update for the
    Gaussian-optimal denoiser, for one ladder transition k -> k_prev."""
    ab_k = schedule.abar(k)
    denom = ab_k * s2 + 1.0 - ab_k
    if k_prev == k - 1:
        ak = schedule.alpha[k - 1]
        return abs((1.0 - (1.0 - ak) / denom) / math.sqrt(ak))
    ab_p = schedule.abar(k_prev)
    return abs(
        (math.sqrt(ab_p * ab_k) * s2 + math.sqrt((1.0 - ab_p) * (1.0 - ab_k))) / denom
    )


def _mean_update(a: np.ndarray, k: int, k_prev: int, eps_fn, s: Schedule) -> np.ndarray:
    """Deterministic part of one reverse transition (noise term dropped)."""
    eps = eps_fn(a, k)
    if k_prev == k - 1:
        return ddpm_mean(a, k, eps, s)
    return ddim_step(a, k, k_prev, eps, s, eta=0.0)


@dataclass
class ContractionReport:
    ladder: tuple[int, ...]
    per_step_c: list[float]  # max ratio per transition
    per_step_c_mean: list[float]
    product_c: list[float]  # running product of per_step_c
    lipschitz_L: float  # max ratio observed on the noise predictor itself
    neighborhood_radius: float
    sample_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "ladder": list(self.ladder),
                "per_step_c": self.per_step_c,
                "per_step_c_mean": self.per_step_c_mean,
                "product_c": self.product_c,
                "lipschitz_L": self.lipschitz_L,
                "neighborhood_radius": self.neighborhood_radius,
                "sample_count": self.sample_count,
            },
            indent=2,
        )


def estimate_contraction(
    eps_fn,
    schedule: Schedule,
    ladder: tuple[int, ...],
    base_points: np.ndarray,
    radius: float,
    n_pairs: int,
    rng: np.random.Generator,
) -> ContractionReport:
    """Empirical per-transition contraction factors of the mean update.

    For each ladder transition, pairs (A, A + delta) with ||delta|| = radius
    are pushed through the deterministic update; the max (and mean) output
    to input distance ratio estimates the local contraction factor. Base
    points are forward-noised to the transition's level so the neighborhood
    sits near where sampling actually operates.
    """
    if radius <= 0:
        raise ContractError("radius must be > 0")
    base_points = np.asarray(base_points, dtype=np.float64)
    if base_points.ndim < 2 or len(base_points) == 0:
        raise ContractError("base_points must be a non-empty array of chunks")
    if list(ladder) != sorted(set(ladder), reverse=True) or ladder[-1] != 0:
        raise ContractError(f"ladder must strictly decrease to 0, got {ladder}")
    per_c, per_c_mean = [], []
    lipschitz = 0.0
    for k, k_prev in zip(ladder[:-1], ladder[1:]):
        ratios = []
        for _ in range(n_pairs):
            a0 = base_points[rng.integers(0, len(base_points))]
            a_k = forward_noise(a0, k, rng.standard_normal(a0.shape), schedule)
            delta = rng.standard_normal(a0.shape)
            delta *= radius / np.linalg.norm(delta)
            out_a = _mean_update(a_k, k, k_prev, eps_fn, schedule)
            out_b = _mean_update(a_k + delta, k, k_prev, eps_fn, schedule)
            ratios.append(float(np.linalg.norm(out_b - out_a)) / radius)
            eps_gap = float(np.linalg.norm(eps_fn(a_k + delta, k) - eps_fn(a_k, k)))
            lipschitz = max(lipschitz, eps_gap / radius)
        per_c.append(max(ratios))
        per_c_mean.append(float(np.mean(ratios)))
    return ContractionReport(
        ladder=tuple(ladder),
        per_step_c=per_c,
        per_step_c_mean=per_c_mean,
        product_c=list(np.cumprod(per_c)),
        lipschitz_L=lipschitz,
        neighborhood_radius=radius,
        sample_count=n_pairs,
    )


def verify_error_decay(
    eps_fn,
    schedule: Schedule,
    base_points: np.ndarray,
    radii: tuple[float, ...],
    ladder_lengths: tuple[int, ...],
    n_pairs: int,
    rng: np.random.Generator,
) -> list[dict]:
    """Paired denoising from a warm start vs a perturbed warm start.

    A ladder of length L runs the consecutive deterministic updates
    L -> L-1 -> ... -> 0. Reports the mean final-gap ratio per (radius, L):
    how much of an initialization error of size ``radius`` survives.
    """
    base_points = np.asarray(base_points, dtype=np.float64)
    rows = []
    for radius in radii:
        for length in ladder_lengths:
            ladder = tuple(range(length, -1, -1))
            gaps = []
            for _ in range(n_pairs):
                a0 = base_points[rng.integers(0, len(base_points))]
                start = forward_noise(a0, length, rng.standard_normal(a0.shape), schedule)
                delta = rng.standard_normal(a0.shape)
                if radius > 0:
                    delta *= radius / np.linalg.norm(delta)
                else:
                    delta[:] = 0.0
                a, b = start, start + delta
                for k, k_prev in zip(ladder[:-1], ladder[1:]):
                    a = _mean_update(a, k, k_prev, eps_fn, schedule)
                    b = _mean_update(b, k, k_prev, eps_fn, schedule)
                final_gap = float(np.linalg.norm(b - a))
                gaps.append(final_gap / radius if radius > 0 else final_gap)
            rows.append(
                {
                    "radius": radius,
                    "ladder_length": length,
                    "mean_gap_ratio": float(np.mean(gaps)),
                    "max_gap_ratio": float(np.max(gaps)),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Consistency measurement
# ---------------------------------------------------------------------------


@dataclass
class ConsistencyReport:
    temporal_gaps: list[float]
    spatial_dists: list[float]
    eps_t_hat: float  # empirical 95th percentile of temporal gaps
    eps_s_hat: float  # empirical 95th percentile of spatial distances
    n_chunks: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "eps_t_hat": self.eps_t_hat,
                "eps_s_hat": self.eps_s_hat,
                "n_chunks": self.n_chunks,
                "median_temporal_gap": float(np.median(self.temporal_gaps))
                if self.temporal_gaps
                else None,
                "median_spatial_dist": float(np.median(self.spatial_dists))
                if self.spatial_dists
                else None,
                "temporal_gaps": self.temporal_gaps,
                "spatial_dists": self.spatial_dists,
                "meta": self.meta,
            },
            indent=2,
        )


def measure_consistency(
    records: list[EpisodeRecord],
    dataset: Dataset,
    k_nn: int = 8,
    include_cold: bool = True,
) -> ConsistencyReport:
    """Temporal gaps at chunk boundaries and warm-start distance to the
    data manifold.

    The manifold around an observation is approximated by the dataset chunks
    whose paired observations are its k_nn nearest neighbors; the spatial
    distance is the smallest Frobenius distance from the warm-start chunk to
    any of them.
    """
    if not records:
        raise ContractError("need at least one episode record")
    obs_rows, chunk_rows = dataset.denoiser_pairs()
    if len(obs_rows) < k_nn:
        raise ContractError(f"dataset has only {len(obs_rows)} chunks, need >= k_nn={k_nn}")
    temporal, spatial = [], []
    n_chunks = 0
    for rec in records:
        for chunk in rec.chunks:
            if chunk.cold_start and not include_cold:
                continue
            n_chunks += 1
            if chunk.temporal_gap is not None:
                temporal.append(chunk.temporal_gap)
            ws = np.asarray(chunk.warm_chunk)
            obs = np.asarray(chunk.obs)
            d_obs = np.linalg.norm(obs_rows - obs, axis=1)
            nn = np.argpartition(d_obs, k_nn - 1)[:k_nn]
            dists = np.linalg.norm(
                chunk_rows[nn] - ws[None], axis=(1, 2)
            )
            spatial.append(float(dists.min()))
    return ConsistencyReport(
        temporal_gaps=temporal,
        spatial_dists=spatial,
        eps_t_hat=float(np.percentile(temporal, 95)) if temporal else 0.0,
        eps_s_hat=float(np.percentile(spatial, 95)) if spatial else 0.0,
        n_chunks=n_chunks,
        meta={"k_nn": k_nn, "n_records": len(records)},
    )
