import math

import numpy as np
import pytest

from warmstart_dp.analysis import (
    analytic_gaussian_denoiser,
    estimate_contraction,
    gaussian_step_factor,
    measure_consistency,
    verify_error_decay,
)
from warmstart_dp.diffusion import ddpm_mean, denoiser_loss, make_schedule
from warmstart_dp.envs import EnvConfig, generate_dataset
from warmstart_dp.errors import ContractError
from warmstart_dp.inference import ChunkTrace, EpisodeRecord
from warmstart_dp.numerics import Tensor


@pytest.fixture(scope="module")
def schedule():
    return make_schedule("linear", 100)


class TestAnalyticDenoiser:
    def test_zero_at_scaled_mean(self, schedule):
        mu = np.full((4, 2), 0.3)
        eps_fn = analytic_gaussian_denoiser(mu, 0.5, schedule)
        for k in (1, 10, 100):
            ab = schedule.abar(k)
            out = eps_fn(math.sqrt(ab) * mu, k)
            np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_vanishes_for_uninformative_prior(self, schedule):
        mu = np.zeros((4, 2))
        a_k = np.ones((4, 2))
        big = analytic_gaussian_denoiser(mu, 1e12, schedule)(a_k, 50)
        assert np.abs(big).max() < 1e-6

    def test_invalid_variance_rejected(self, schedule):
        with pytest.raises(ContractError):
            analytic_gaussian_denoiser(np.zeros((2, 2)), 0.0, schedule)

    def test_oracle_beats_trained_net_on_matching_data(self, schedule):
        # the posterior-optimal predictor minimizes the noise-prediction loss:
        # a net trained on the same Gaussian data cannot beat it beyond MC error
        from warmstart_dp.models import DenoiserConfig, DenoiserNet
        from warmstart_dp.numerics import AdamW

        rng = np.random.default_rng(0)
        mu = np.full((4, 2), 0.2)
        s2 = 0.3

        class OracleModel:
            def forward_batch(self, a_t, t, obs):
                eps_fn = analytic_gaussian_denoiser(mu, s2, schedule)
                out = np.stack([eps_fn(a, int(k)) for a, k in zip(a_t, t)])
                return Tensor(out)

        a0 = mu[None] + math.sqrt(s2) * rng.standard_normal((4000, 4, 2))
        obs = np.zeros((4000, 1))
        net = DenoiserNet(
            DenoiserConfig(horizon=4, action_dim=2, obs_dim=1, hidden=(32, 32),
                           step_embed_dim=16),
            seed=1,
        )
        opt = AdamW(net.parameters(), lr=1e-3, weight_decay=0.0)
        train_rng = np.random.default_rng(2)
        for _ in range(400):
            idx = train_rng.integers(0, len(a0), size=64)
            loss = denoiser_loss(a0[idx], obs[idx], net, schedule, train_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
        l_oracle = denoiser_loss(a0, obs, OracleModel(), schedule, np.random.default_rng(1))
        l_net = denoiser_loss(a0, obs, net, schedule, np.random.default_rng(1))
        assert l_oracle.item() <= l_net.item() + 0.01  # MC slack


class TestEstimateContraction:
    def test_matches_closed_form_on_gaussian_oracle(self, schedule):
        mu = np.full((4, 2), -0.1)
        s2 = 0.25
        eps_fn = analytic_gaussian_denoiser(mu, s2, schedule)
        rng = np.random.default_rng(1)
        base = mu[None] + math.sqrt(s2) * rng.standard_normal((40, 4, 2))
        ladder = (10, 9, 4, 0)  # one ddpm-style step plus two jumps
        report = estimate_contraction(eps_fn, schedule, ladder, base,
                                      radius=0.1, n_pairs=12, rng=rng)
        for (k, k_prev), c_hat in zip(zip(ladder, ladder[1:]), report.per_step_c):
            assert abs(c_hat - gaussian_step_factor(k, k_prev, s2, schedule)) < 1e-8

    def test_product_is_cumulative(self, schedule):
        eps_fn = analytic_gaussian_denoiser(np.zeros((2, 2)), 1.0, schedule)
        rng = np.random.default_rng(2)
        base = rng.standard_normal((10, 2, 2))
        report = estimate_contraction(eps_fn, schedule, (5, 3, 0), base, 0.05, 6, rng)
        np.testing.assert_allclose(report.product_c, np.cumprod(report.per_step_c))

    def test_radius_ratio_matches_jacobian_norm(self, schedule):
        # small-radius ratio approaches the operator norm of the step Jacobian;
        # finite-difference Jacobian on tiny dims is the oracle
        rng = np.random.default_rng(3)
        w = rng.uniform(-0.4, 0.4, (4, 4))
        w = 0.5 * (w + w.T)  # symmetric so the operator norm is |eigenvalue|

        def eps_fn(a, k):
            return (a.reshape(-1) @ w).reshape(a.shape)

        k = 10
        h = 1e-6
        jac = np.zeros((4, 4))
        base_point = rng.standard_normal((2, 2))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            up = ddpm_mean(base_point + e.reshape(2, 2), k, eps_fn(base_point + e.reshape(2, 2), k), schedule)
            dn = ddpm_mean(base_point - e.reshape(2, 2), k, eps_fn(base_point - e.reshape(2, 2), k), schedule)
            jac[:, j] = (up - dn).reshape(-1) / (2 * h)
        spectral = np.linalg.norm(jac, 2)
        report = estimate_contraction(eps_fn, schedule, (k, k - 1, 0),
                                      base_point[None], radius=1e-4, n_pairs=64,
                                      rng=np.random.default_rng(4))
        assert report.per_step_c[0] <= spectral * 1.0 + 1e-9
        assert report.per_step_c[0] > spectral * 0.95

    def test_rejects_bad_inputs(self, schedule):
        eps_fn = analytic_gaussian_denoiser(np.zeros((2, 2)), 1.0, schedule)
        with pytest.raises(ContractError):
            estimate_contraction(eps_fn, schedule, (5, 0), np.zeros((0, 2, 2)), 0.1, 4,
                                 np.random.default_rng(0))
        with pytest.raises(ContractError):
            estimate_contraction(eps_fn, schedule, (5, 0), np.zeros((3, 2, 2)), -1.0, 4,
                                 np.random.default_rng(0))

    def test_lipschitz_estimate_positive(self, schedule):
        eps_fn = analytic_gaussian_denoiser(np.zeros((2, 2)), 0.5, schedule)
        rng = np.random.default_rng(5)
        report = estimate_contraction(eps_fn, schedule, (8, 0),
                                      rng.standard_normal((10, 2, 2)), 0.1, 8, rng)
        assert report.lipschitz_L > 0


class TestVerifyErrorDecay:
    def test_zero_perturbation_zero_gap(self, schedule):
        eps_fn = analytic_gaussian_denoiser(np.zeros((2, 2)), 1.0, schedule)
        rng = np.random.default_rng(6)
        rows = verify_error_decay(eps_fn, schedule, rng.standard_normal((5, 2, 2)),
                                  radii=(0.0,), ladder_lengths=(2,), n_pairs=4, rng=rng)
        assert rows[0]["mean_gap_ratio"] == 0.0

    def test_oracle_gap_equals_product_of_factors(self, schedule):
        mu = np.full((2, 2), 0.4)
        s2 = 0.5
        eps_fn = analytic_gaussian_denoiser(mu, s2, schedule)
        rng = np.random.default_rng(7)
        base = mu[None] + math.sqrt(s2) * rng.standard_normal((10, 2, 2))
        for length in (1, 2, 4):
            rows = verify_error_decay(eps_fn, schedule, base, radii=(0.1,),
                                      ladder_lengths=(length,), n_pairs=6, rng=rng)
            expect = 1.0
            for k in range(length, 0, -1):
                expect *= gaussian_step_factor(k, k - 1, s2, schedule)
            assert rows[0]["mean_gap_ratio"] == pytest.approx(expect, abs=1e-8)

    def test_monotone_decay_in_ladder_length(self, schedule):
        # the contraction product strictly shrinks as the ladder grows
        mu = np.zeros((2, 2))
        eps_fn = analytic_gaussian_denoiser(mu, 0.1, schedule)
        rng = np.random.default_rng(8)
        base = 0.3 * rng.standard_normal((10, 2, 2))
        rows = verify_error_decay(eps_fn, schedule, base, radii=(0.1,),
                                  ladder_lengths=(1, 2, 4), n_pairs=6, rng=rng)
        ratios = [r["mean_gap_ratio"] for r in rows]
        assert ratios[0] > ratios[1] > ratios[2]
        assert all(r < 1.0 for r in ratios)


def _record_with_chunks(chunks, seed=0) -> EpisodeRecord:
    return EpisodeRecord(
        seed=seed, env_kind="reach", method="test", steps=2, success=True,
        success_step=10, n_steps=16, stall_events=0, chunks=chunks,
    )


def _chunk(warm, obs, gap=None, cold=False):
    return ChunkTrace(
        cold_start=cold, indicator=0, sigma=1.0, sigma_t=0.0, denoiser_evals=2,
        predictor_evals=1, latency_ms=1.0, temporal_gap=gap,
        warm_chunk=np.asarray(warm).tolist(),
        executed_chunk=np.asarray(warm).tolist(),
        obs=np.asarray(obs).tolist(), executed_actions=16,
    )


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    return generate_dataset(EnvConfig("reach", episode_cap=64), 30, seed=9,
                            out_dir=out / "d", horizon=16)


class TestMeasureConsistency:

    def test_zero_gap_when_warm_start_continues_exactly(self, dataset):
        obs, chunks = dataset.denoiser_pairs()
        rec = _record_with_chunks([
            _chunk(chunks[0], obs[0], gap=None, cold=True),
            _chunk(chunks[1], obs[1], gap=0.0),
        ])
        report = measure_consistency([rec], dataset, k_nn=4)
        assert report.temporal_gaps == [0.0]

    def test_dataset_chunk_has_zero_spatial_distance(self, dataset):
        obs, chunks = dataset.denoiser_pairs()
        rec = _record_with_chunks([_chunk(chunks[3], obs[3])])
        report = measure_consistency([rec], dataset, k_nn=4)
        assert report.spatial_dists[0] == pytest.approx(0.0, abs=1e-12)

    def test_noise_chunk_is_far_from_manifold(self, dataset):
        obs, chunks = dataset.denoiser_pairs()
        rng = np.random.default_rng(10)
        noise_chunk = rng.standard_normal(chunks[0].shape)
        rec = _record_with_chunks([
            _chunk(chunks[2], obs[2]),
            _chunk(noise_chunk, obs[2]),
        ])
        report = measure_consistency([rec], dataset, k_nn=4)
        assert report.spatial_dists[1] > report.spatial_dists[0] + 1.0

    def test_percentiles_populated(self, dataset):
        obs, chunks = dataset.denoiser_pairs()
        recs = [
            _record_with_chunks([_chunk(chunks[i], obs[i], gap=0.1 * i)], seed=i)
            for i in range(5)
        ]
        report = measure_consistency(recs, dataset, k_nn=4)
        assert report.eps_t_hat >= 0 and report.eps_s_hat >= 0
        assert report.n_chunks == 5

    def test_empty_records_rejected(self, dataset):
        with pytest.raises(ContractError):
            measure_consistency([], dataset)

    def test_json_serialization(self, dataset):
        obs, chunks = dataset.denoiser_pairs()
        rec = _record_with_chunks([_chunk(chunks[0], obs[0], gap=0.2)])
        report = measure_consistency([rec], dataset, k_nn=4)
        import json

        blob = json.loads(report.to_json())
        assert blob["n_chunks"] == 1
        assert blob["meta"]["k_nn"] == 4
