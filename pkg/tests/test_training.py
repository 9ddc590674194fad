import numpy as np
import pytest

from flowinv.core import constant_field, init_field, raw_condition
from flowinv.dataset import default_spec
from flowinv.errors import ConfigError, TrainingDivergedError
from flowinv.training import (
    Checkpoint,
    TrainConfig,
    flow_matching_loss,
    flow_path,
    train,
    write_loss_curve,
)


class TestFlowPath:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(0)
        x0, x1 = rng.standard_normal(8), rng.standard_normal(8)
        assert np.array_equal(flow_path(x0, x1, 0.0), x0)
        assert np.array_equal(flow_path(x0, x1, 1.0), x1)

    def test_midpoint(self):
        x0, x1 = np.zeros(4), np.ones(4)
        assert np.allclose(flow_path(x0, x1, 0.25), 0.25)


class TestFlowMatchingLoss:
    def test_perfect_prediction_is_zero(self):
        rng = np.random.default_rng(1)
        x0, x1 = rng.standard_normal(8), rng.standard_normal(8)
        field = constant_field(init_field(seed=0), x1 - x0)
        cond = raw_condition(np.zeros(16))
        assert flow_matching_loss(field, x0, x1, 0.4, cond) == 0.0

    def test_zero_network_hand_value(self):
        rng = np.random.default_rng(2)
        x0, x1 = rng.standard_normal(8), rng.standard_normal(8)
        field = init_field(seed=0, zero_final_layer=True)
        cond = raw_condition(np.zeros(16))
        u = x1 - x0
        expected = float(np.dot(u, u)) / 8
        assert flow_matching_loss(field, x0, x1, 0.9, cond) == pytest.approx(expected, rel=1e-14)


class TestTrain:
    def test_fixed_seed_is_bitwise_reproducible(self):
        spec = default_spec(seed=0)
        config = TrainConfig(iterations=200, seed=5)
        a, b = train(spec, config), train(spec, config)
        for wa, wb in zip(a.field.weights, b.field.weights):
            assert np.array_equal(wa, wb)
        assert np.array_equal(a.field.embeddings, b.field.embeddings)
        assert a.loss_curve == b.loss_curve

    def test_zero_iterations_equals_initialization(self):
        spec = default_spec(seed=0)
        config = TrainConfig(iterations=0, seed=5)
        ckpt = train(spec, config)
        init = init_field(d=config.d, d_c=config.d_c, vocab=spec.vocab,
                          widths=config.widths, seed=config.seed)
        for w0, w1 in zip(ckpt.field.weights, init.weights):
            assert np.array_equal(w0, w1)
        assert np.array_equal(ckpt.field.embeddings, init.embeddings)
        assert ckpt.loss_curve == ()

    def test_loss_beats_half_of_zero_network_baseline(self, default_checkpoint):
        # Baseline: the zero field's expected loss, measured over seeded batches.
        spec = default_checkpoint.spec
        zero = init_field(seed=0, zero_final_layer=True)
        cond = raw_condition(np.zeros(16))
        rng = np.random.default_rng(3)
        losses = []
        for _ in range(512):
            tokens = spec.trained_tokens()
            token = tokens[rng.integers(len(tokens))]
            x0 = spec.mode_of(token) + spec.stddev * rng.standard_normal(spec.d)
            x1 = rng.standard_normal(spec.d)
            losses.append(flow_matching_loss(zero, x0, x1, float(rng.uniform()), cond))
        baseline = float(np.mean(losses))
        tail = np.mean([loss for _, loss in default_checkpoint.loss_curve[-200:]])
        assert tail < 0.5 * baseline

    def test_untrained_ood_rows_stay_at_init(self, quick_checkpoint):
        spec = quick_checkpoint.spec
        config = quick_checkpoint.config
        init = init_field(d=config.d, d_c=config.d_c, vocab=spec.vocab,
                          widths=config.widths, seed=config.seed)
        for token in spec.ood_tokens:
            assert np.array_equal(quick_checkpoint.field.embeddings[token],
                                  init.embeddings[token])
        for token in spec.trained_tokens():
            assert not np.array_equal(quick_checkpoint.field.embeddings[token],
                                      init.embeddings[token])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_iteration(self):
        # Adam's updates are step-size bounded, so only an absurd lr can push
        # the squared residuals past the float range and trip the guard.
        spec = default_spec(seed=0)
        with pytest.raises(TrainingDivergedError) as err:
            train(spec, TrainConfig(iterations=20, lr=1e155, seed=0))
        assert err.value.iteration >= 0

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr=-1.0)

    def test_loss_curve_csv(self, tmp_path):
        spec = default_spec(seed=0)
        ckpt = train(spec, TrainConfig(iterations=10, seed=1))
        path = tmp_path / "curve.csv"
        write_loss_curve(path, ckpt.loss_curve)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,loss"
        assert len(lines) == 11
