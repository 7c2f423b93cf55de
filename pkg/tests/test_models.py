import numpy as np
import pytest

from warmstart_dp.errors import ContractError, DimensionError
from warmstart_dp.models import (
    DenoiserConfig,
    DenoiserNet,
    PredictorConfig,
    PredictorNet,
    predictor_loss,
    sinusoidal_embedding,
)
from warmstart_dp.numerics import AdamW
from warmstart_dp.diffusion import denoiser_loss, make_schedule

from helpers import check_grads_fd

TINY_DEN = DenoiserConfig(horizon=4, action_dim=2, obs_dim=4, hidden=(16, 16), step_embed_dim=8)
TINY_PRED = PredictorConfig(horizon=4, action_dim=2, obs_dim=4, embed_dim=16,
                            num_blocks=2, num_heads=2)


class TestDenoiser:
    def test_fresh_net_output_finite_and_bounded(self):
        net = DenoiserNet(TINY_DEN, seed=0)
        rng = np.random.default_rng(0)
        out = net.forward(rng.standard_normal((4, 2)) * 3, 5, rng.standard_normal(4))
        assert out.shape == (4, 2)
        assert np.all(np.isfinite(out))
        assert np.abs(out).max() < 100.0  # fan-in init keeps activations tame

    def test_determinism_bit_identical(self):
        net = DenoiserNet(TINY_DEN, seed=1)
        rng = np.random.default_rng(1)
        a, obs = rng.standard_normal((4, 2)), rng.standard_normal(4)
        assert net.forward(a, 3, obs).tobytes() == net.forward(a, 3, obs).tobytes()

    def test_gradients_match_finite_differences_everywhere(self):
        net = DenoiserNet(TINY_DEN, seed=2)
        s = make_schedule("linear", 10)
        rng = np.random.default_rng(2)
        a0 = rng.standard_normal((3, 4, 2))
        obs = rng.standard_normal((3, 4))

        def loss():
            return denoiser_loss(a0, obs, net, s, np.random.default_rng(42))

        check_grads_fd(loss, net.params, rng, coords_per_param=4)

    def test_obs_dim_mismatch(self):
        net = DenoiserNet(TINY_DEN, seed=0)
        with pytest.raises(DimensionError):
            net.forward(np.zeros((4, 2)), 1, np.zeros(5))

    def test_chunk_shape_mismatch(self):
        net = DenoiserNet(TINY_DEN, seed=0)
        with pytest.raises(DimensionError):
            net.forward(np.zeros((5, 2)), 1, np.zeros(4))

    def test_checkpoint_roundtrip(self, tmp_path):
        net = DenoiserNet(TINY_DEN, seed=3)
        net.save(tmp_path / "d")
        loaded = DenoiserNet.load(tmp_path / "d")
        assert loaded.config == net.config
        rng = np.random.default_rng(3)
        a, obs = rng.standard_normal((4, 2)), rng.standard_normal(4)
        np.testing.assert_array_equal(net.forward(a, 2, obs), loaded.forward(a, 2, obs))

    def test_eval_counter(self):
        net = DenoiserNet(TINY_DEN, seed=0)
        net.forward(np.zeros((4, 2)), 1, np.zeros(4))
        net.forward(np.zeros((4, 2)), 2, np.zeros(4))
        assert net.eval_count == 2


class TestSinusoidalEmbedding:
    def test_shape_and_range(self):
        emb = sinusoidal_embedding(np.array([1, 50, 100]), 64)
        assert emb.shape == (3, 64)
        assert np.all(np.abs(emb) <= 1.0)

    def test_distinct_steps_distinct_embeddings(self):
        emb = sinusoidal_embedding(np.arange(1, 101), 64)
        gaps = np.linalg.norm(emb[1:] - emb[:-1], axis=1)
        assert np.all(gaps > 1e-6)


class TestPredictor:
    def test_output_shape_and_finiteness(self):
        net = PredictorNet(TINY_PRED, seed=0)
        rng = np.random.default_rng(0)
        out = net.forward(rng.standard_normal(4), rng.standard_normal((4, 2)))
        assert out.shape == (4, 2)
        assert np.all(np.isfinite(out))

    def test_zeroed_out_proj_gives_zero_output(self):
        net = PredictorNet(TINY_PRED, seed=0)
        net.params["out_proj.w"].data[:] = 0.0
        rng = np.random.default_rng(1)
        out = net.forward(rng.standard_normal(4), rng.standard_normal((4, 2)))
        np.testing.assert_array_equal(out, np.zeros((4, 2)))

    def test_determinism(self):
        net = PredictorNet(TINY_PRED, seed=1)
        rng = np.random.default_rng(2)
        obs, prev = rng.standard_normal(4), rng.standard_normal((4, 2))
        assert net.forward(obs, prev).tobytes() == net.forward(obs, prev).tobytes()

    def test_permuting_identical_obs_tokens_is_invariant(self):
        net = PredictorNet(TINY_PRED, seed=2)
        rng = np.random.default_rng(3)
        token = rng.standard_normal(4)
        obs_tokens = np.stack([token, token, token])
        prev = rng.standard_normal((4, 2))
        out_a = net.forward(obs_tokens, prev)
        out_b = net.forward(obs_tokens[::-1].copy(), prev)
        np.testing.assert_allclose(out_a, out_b, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        net = PredictorNet(TINY_PRED, seed=3)
        rng = np.random.default_rng(4)
        obs = rng.standard_normal((3, 4))
        prev = rng.standard_normal((3, 4, 2))
        target = rng.standard_normal((3, 4, 2))
        check_grads_fd(
            lambda: predictor_loss(obs, prev, target, net), net.params, rng,
            coords_per_param=3,
        )

    def test_param_count_at_reference_defaults_under_bound(self):
        net = PredictorNet(PredictorConfig(horizon=16, action_dim=2, obs_dim=6))
        assert net.config.embed_dim == 128 and net.config.num_blocks == 2
        assert net.param_count() < 1_200_000

    def test_embed_width_and_block_count_configurable(self):
        cfg = PredictorConfig(horizon=4, action_dim=2, obs_dim=4, embed_dim=32,
                              num_blocks=3, num_heads=4)
        net = PredictorNet(cfg, seed=0)
        assert net.params["act_embed.w"].shape == (2, 32)
        assert "blocks.2.ff2.w" in net.params and "blocks.3.ln1.g" not in net.params

    def test_checkpoint_roundtrip(self, tmp_path):
        net = PredictorNet(TINY_PRED, seed=4)
        net.save(tmp_path / "p")
        loaded = PredictorNet.load(tmp_path / "p")
        rng = np.random.default_rng(5)
        obs, prev = rng.standard_normal(4), rng.standard_normal((4, 2))
        np.testing.assert_array_equal(net.forward(obs, prev), loaded.forward(obs, prev))

    def test_wrong_checkpoint_kind_rejected(self, tmp_path):
        DenoiserNet(TINY_DEN, seed=0).save(tmp_path / "d")
        with pytest.raises(ContractError):
            PredictorNet.load(tmp_path / "d")


class TestPredictorLoss:
    def test_exact_prediction_gives_zero(self):
        net = PredictorNet(TINY_PRED, seed=5)
        rng = np.random.default_rng(6)
        obs = rng.standard_normal((2, 4))
        prev = rng.standard_normal((2, 4, 2))
        target = net.forward_batch(obs, prev).data
        assert predictor_loss(obs, prev, target, net).item() == pytest.approx(0.0, abs=1e-20)

    def test_zero_net_on_unit_norm_targets_gives_one(self):
        net = PredictorNet(TINY_PRED, seed=6)
        net.params["out_proj.w"].data[:] = 0.0
        net.params["out_proj.b"].data[:] = 0.0
        rng = np.random.default_rng(7)
        obs = rng.standard_normal((5, 4))
        prev = rng.standard_normal((5, 4, 2))
        target = rng.standard_normal((5, 4, 2))
        target /= np.linalg.norm(target, axis=(1, 2), keepdims=True)
        assert predictor_loss(obs, prev, target, net).item() == pytest.approx(1.0)

    def test_misaligned_shapes_rejected(self):
        net = PredictorNet(TINY_PRED, seed=0)
        with pytest.raises(DimensionError):
            predictor_loss(np.zeros((2, 4)), np.zeros((2, 4, 2)), np.zeros((2, 5, 2)), net)

    def test_empty_batch_rejected(self):
        net = PredictorNet(TINY_PRED, seed=0)
        with pytest.raises(ContractError):
            predictor_loss(np.zeros((0, 4)), np.zeros((0, 4, 2)), np.zeros((0, 4, 2)), net)


def _train(net, loss_fn, steps, lr=3e-3, seed=0):
    rng = np.random.default_rng(seed)
    opt = AdamW(net.parameters(), lr=lr, weight_decay=0.0)
    for _ in range(steps):
        loss = loss_fn(rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return loss.item()


class TestPredictorLearning:
    def test_learns_exact_linear_map(self):
        # next chunk = prev @ A.T + obs @ B.T per position, noise-free
        rng = np.random.default_rng(8)
        A = rng.uniform(-0.6, 0.6, (2, 2))
        B = rng.uniform(-0.6, 0.6, (2, 4))
        obs = rng.uniform(-1, 1, (512, 4))
        prev = rng.uniform(-1, 1, (512, 4, 2))
        target = prev @ A.T + (obs @ B.T)[:, None, :]
        net = PredictorNet(
            PredictorConfig(horizon=4, action_dim=2, obs_dim=4, embed_dim=32,
                            num_blocks=2, num_heads=4),
            seed=9,
        )

        def batch(rng_):
            idx = rng_.integers(0, len(obs), size=64)
            return predictor_loss(obs[idx], prev[idx], target[idx], net)

        _train(net, batch, steps=900, lr=3e-3)
        pred = net.forward_batch(obs[:256], prev[:256]).data
        mse = float(((pred - target[:256]) ** 2).mean())
        assert mse < 1e-3

    def test_approximates_conditional_expectation(self):
        # stochastic targets: g(o, prev) + noise; the fit lands near g,
        # well inside the noise floor
        rng = np.random.default_rng(10)
        A = rng.uniform(-0.5, 0.5, (2, 2))
        B = rng.uniform(-0.5, 0.5, (2, 4))
        sigma_n = 0.3
        obs = rng.uniform(-1, 1, (1024, 4))
        prev = rng.uniform(-1, 1, (1024, 4, 2))
        g = prev @ A.T + (obs @ B.T)[:, None, :]
        target = g + sigma_n * rng.standard_normal(g.shape)
        net = PredictorNet(
            PredictorConfig(horizon=4, action_dim=2, obs_dim=4, embed_dim=32,
                            num_blocks=2, num_heads=4),
            seed=11,
        )

        def batch(rng_):
            idx = rng_.integers(0, len(obs), size=64)
            return predictor_loss(obs[idx], prev[idx], target[idx], net)

        _train(net, batch, steps=1200, lr=3e-3)
        pred = net.forward_batch(obs[:256], prev[:256]).data
        mse_vs_g = float(((pred - g[:256]) ** 2).mean())
        assert mse_vs_g < 0.2 * sigma_n**2
