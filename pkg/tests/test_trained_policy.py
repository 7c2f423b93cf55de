"""Behavioral checks that need trained policies (session bundles).

Everything here reuses the cached bundles from conftest, so these tests are
evaluation-only and stay in the tens-of-seconds range each.
"""

import numpy as np
import pytest
from dataclasses import replace

from warmstart_dp.envs import EnvConfig, generate_dataset
from warmstart_dp.harness.config import EnvBlock, EvalBlock, ExperimentConfig, ModelBlock, TrainBlock
from warmstart_dp.harness.evaluate import run_eval_grid
from warmstart_dp.harness.sweep import run_sweep
from warmstart_dp.harness.train import train_denoiser, train_predictor
from warmstart_dp.inference import cold_start_config, default_warm_config, run_episode
from warmstart_dp.models import predictor_loss


def _episodes(bundle, env, cfg, n, predictor=None):
    return [
        run_episode(env, bundle.denoiser, bundle.schedule, cfg, seed=seed,
                    predictor=predictor, obs_stats=bundle.dataset.obs_stats,
                    act_stats=bundle.dataset.act_stats)
        for seed in range(n)
    ]


class TestTemporalConsistency:
    def test_warm_start_gaps_no_larger_than_cold_at_equal_steps(self, reach_bundle):
        # medians over >= 50 episodes at the same 2-step budget
        b = reach_bundle
        env = EnvConfig("reach", episode_cap=200)
        warm = _episodes(b, env, default_warm_config(100, steps=2, k_prime=10), 50,
                         predictor=b.predictor)
        cold = _episodes(b, env, cold_start_config(100, steps=2), 50)
        warm_gaps = [g for r in warm for g in r.temporal_gaps]
        cold_gaps = [g for r in cold for g in r.temporal_gaps]
        assert np.median(warm_gaps) <= np.median(cold_gaps)


@pytest.fixture(scope="module")
def clean_reach(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    return generate_dataset(EnvConfig("reach", episode_cap=64), 120, seed=5,
                            out_dir=out / "d", horizon=16, expert_noise=0.0)


class TestTrainingDiagnostics:

    def test_loss_decreases_monotonically_in_smoothed_windows(self, clean_reach):
        cfg = ExperimentConfig(
            model=ModelBlock(horizon=16, denoiser_hidden=(64, 64), step_embed_dim=16),
            train=TrainBlock(denoiser_steps=1200, batch_size=32, learning_rate=3e-4,
                             warmup_steps=50, window_stride=4, schedule_kind="cosine"),
        )
        _, _, losses = train_denoiser(clean_reach, cfg, seed=0)
        windows = [np.mean(losses[i:i + 100]) for i in range(0, 1200, 100)]
        assert all(b <= a * 1.05 for a, b in zip(windows, windows[1:]))
        assert windows[-1] < 0.5 * windows[0]

    def test_train_thresholds_on_clean_data(self, clean_reach, tmp_path):
        # noise-free demonstrations: denoiser loss falls below a tenth of its
        # starting value and the predictor fits held-out chunks tightly
        cfg = ExperimentConfig(
            model=ModelBlock(horizon=16, denoiser_hidden=(128, 128), step_embed_dim=32,
                             embed_dim=32, num_blocks=2, num_heads=4),
            train=TrainBlock(denoiser_steps=6000, predictor_steps=1200, batch_size=64,
                             learning_rate=3e-4, warmup_steps=100, window_stride=2,
                             schedule_kind="cosine"),
        )
        _, _, dlosses = train_denoiser(clean_reach, cfg, seed=0)
        assert np.mean(dlosses[-50:]) < 0.1 * np.mean(dlosses[:10])

        predictor, _ = train_predictor(clean_reach, cfg, seed=1)
        obs, prevs, targets = clean_reach.predictor_triples()
        train = predictor_loss(obs, prevs, targets, predictor).item()
        # genuinely held-out episodes: fresh rollouts from a different seed,
        # normalized with the training statistics
        from dataclasses import replace as dc_replace

        held_raw = generate_dataset(EnvConfig("reach", episode_cap=64), 40, seed=99,
                                    out_dir=tmp_path / "held", horizon=16,
                                    expert_noise=0.0)
        held_ds = dc_replace(held_raw, obs_stats=clean_reach.obs_stats,
                             act_stats=clean_reach.act_stats)
        h_obs, h_prev, h_tgt = held_ds.predictor_triples()
        held = predictor_loss(h_obs, h_prev, h_tgt, predictor).item()
        assert held / (16 * 2) < 0.05
        assert held < 2.0 * train  # no held-out blowup at convergence


class TestEvalGridOnTrainedPolicy:
    def test_latency_ordering_by_evaluation_count(self, reach_bundle):
        b = reach_bundle
        cfg = ExperimentConfig(
            env=EnvBlock(env_kind="reach", episode_cap=200),
            eval=EvalBlock(n_seeds=5, steps=(8, 2), k_prime=10, bootstrap_resamples=100),
        )
        artifacts = run_eval_grid(cfg, b.denoiser, b.predictor, b.schedule,
                                  b.dataset.obs_stats, b.dataset.act_stats)
        t = artifacts.table
        full = t.find("ddpm_full", 100)
        ddim8 = t.find("ddim_cold", 8)
        warm2 = t.find("warm", 2)
        assert full.denoiser_evals > ddim8.denoiser_evals > warm2.denoiser_evals
        assert all(row.time_ms > 0 for row in t.rows)

    def test_default_sweep_reproduces_reported_shape(self, reach_bundle):
        # sigma_stall=0 row near zero; interior stall argmax; collapse at the top
        b = reach_bundle
        cfg = ExperimentConfig(
            env=EnvBlock(env_kind="reach"),
            eval=EvalBlock(n_seeds=20, k_prime=10, bootstrap_resamples=200),
        )
        cfg = replace(cfg, sweep=replace(cfg.sweep, n_seeds=20))
        table = run_sweep(cfg, b.denoiser, b.predictor, b.schedule,
                          b.dataset.obs_stats, b.dataset.act_stats)
        stall_grid = cfg.sweep.sigma_stall_grid
        scale_grid = cfg.sweep.sigma_scale_grid
        for scale in scale_grid:
            assert table.cell(0.0, scale).score <= 0.10
        best = table.argmax()
        assert best.sigma_stall not in (stall_grid[0], stall_grid[-1])
        for scale in scale_grid:
            top = table.cell(stall_grid[-1], scale).score
            assert top < max(table.cell(st, scale).score for st in stall_grid)
