"""Warmup schedule, AdamW, the training loop, gradient checking."""

import numpy as np
import pytest

import comma.tensor as tensor_mod
from comma.masks import ModalityLayout
from comma.model import CommaConfig, init_params
from comma.synthetic import SynthConfig, generate
from comma.tensor import Tensor
from comma.training import (
    LossMode,
    OptimizerState,
    TrainConfig,
    adamw_step,
    grad_check,
    train,
    warmup_lr,
    write_loss_csv,
)


class TestWarmup:
    def test_last_warmup_step_reaches_full_rate(self):
        cfg = TrainConfig(learning_rate=0.5)
        assert warmup_lr(9, 10, cfg) == 0.5

    def test_first_step_fraction(self):
        cfg = TrainConfig(learning_rate=1.0)
        assert warmup_lr(0, 10, cfg) == pytest.approx(0.1)

    def test_monotone_then_constant(self):
        cfg = TrainConfig(learning_rate=1e-3)
        rates = [warmup_lr(s, 7, cfg) for s in range(30)]
        for a, b in zip(rates, rates[1:]):
            assert b >= a - 1e-18
        assert all(r == 1e-3 for r in rates[7:])

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            warmup_lr(0, 0, TrainConfig())

    def test_no_warmup_epochs_means_full_rate(self):
        cfg = TrainConfig(learning_rate=0.2, warmup_epochs=0)
        assert warmup_lr(0, 10, cfg) == 0.2


def scalar_params(value):
    named = {"p": tensor_mod.parameter("p", np.array([value]))}
    return named, OptimizerState.fresh(named)


class TestAdamW:
    def test_zero_grad_zero_decay_no_change(self):
        named, state = scalar_params(3.0)
        cfg = TrainConfig(weight_decay=0.0)
        updated, state = adamw_step(named, {}, state, rate=0.1, cfg=cfg)
        assert np.array_equal(updated["p"].data, [3.0])
        assert state.step == 1

    def test_first_step_closed_form(self):
        named, state = scalar_params(0.0)
        cfg = TrainConfig(weight_decay=0.0)
        grads = {"p": Tensor(np.array([1.0]))}
        updated, _ = adamw_step(named, grads, state, rate=0.01, cfg=cfg)
        assert updated["p"].data[0] == pytest.approx(-0.01, rel=1e-6)

    def test_decay_is_decoupled(self):
        named, state = scalar_params(2.0)
        cfg = TrainConfig(weight_decay=0.5)
        updated, _ = adamw_step(named, {}, state, rate=0.1, cfg=cfg)
        # no gradient: the only movement is -rate * wd * value
        assert updated["p"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_converges_to_quadratic_minimum(self):
        # gradient of 0.5 * ||p - c||^2 is p - c; 100 steps land within 1e-3
        target = np.array([0.03, -0.12, 0.25])
        named = {"p": tensor_mod.parameter("p", np.zeros(3))}
        state = OptimizerState.fresh(named)
        cfg = TrainConfig(weight_decay=0.0)
        for _ in range(100):
            grad = {"p": Tensor(named["p"].data - target)}
            named, state = adamw_step(named, grad, state, rate=0.01, cfg=cfg)
        assert np.max(np.abs(named["p"].data - target)) <= 1e-3

    def test_non_finite_gradient_rejected(self):
        named, state = scalar_params(0.0)
        bad = Tensor.__new__(Tensor)  # bypass constructor to smuggle a NaN
        arr = np.array([np.nan])
        object.__setattr__(bad, "data", arr)
        with pytest.raises(ValueError, match="non-finite"):
            adamw_step(named, {"p": bad}, state, rate=0.1, cfg=TrainConfig())

    def test_state_shapes_mirror_params(self):
        cfg = CommaConfig(d_video_in=3, d_word_in=2, d=4)
        named = init_params(cfg).named()
        state = OptimizerState.fresh(named)
        for name, value in named.items():
            assert state.first_moment[name].shape == value.shape
            assert state.second_moment[name].shape == value.shape


def tiny_dataset(n_samples=12, seed=0):
    cfg = SynthConfig(
        vocab_size=6,
        n_samples=n_samples,
        t=1,
        h=2,
        w=2,
        d_video_in=4,
        d_word_in=3,
        words_per_sample=2,
        distractor_count=1,
        temporal_jitter=0.0,
        input_t=2,
        input_h=8,
        input_w=8,
        train_fraction=0.75,
        seed=seed,
    )
    train_set, test_set = generate(cfg)
    layout = ModalityLayout(cfg.words_per_sample, cfg.t, cfg.h, cfg.w)
    return cfg, layout, train_set, test_set


class TestTrainLoop:
    def test_zero_learning_rate_keeps_params(self):
        synth_cfg, layout, train_set, _ = tiny_dataset()
        model_cfg = CommaConfig(d_video_in=4, d_word_in=3, d=4, seed=0)
        tc = TrainConfig(learning_rate=0.0, weight_decay=0.0, batch_size=3, epochs=2, seed=0)
        result = train(train_set, model_cfg, tc, layout)
        fresh = init_params(model_cfg).named()
        for name, value in result.params.named().items():
            assert np.array_equal(value.data, fresh[name].data)

    def test_fixed_batch_loss_mostly_decreases(self):
        synth_cfg, layout, train_set, _ = tiny_dataset()
        model_cfg = CommaConfig(d_video_in=4, d_word_in=3, d=8, seed=0)
        # batch == dataset, so every step sees the same batch
        tc = TrainConfig(
            learning_rate=3e-3,
            batch_size=4,
            epochs=50,
            warmup_epochs=1,
            loss_mode=LossMode.SENTENCE,
            seed=0,
        )
        result = train(train_set[:4], model_cfg, tc, layout)
        losses = [row[2] for row in result.log_rows]
        assert len(losses) == 50
        drops = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
        assert drops / (len(losses) - 1) >= 0.9

    def test_reproducible_given_seed(self):
        synth_cfg, layout, train_set, _ = tiny_dataset()
        model_cfg = CommaConfig(d_video_in=4, d_word_in=3, d=4, seed=0)
        tc = TrainConfig(learning_rate=1e-3, batch_size=3, epochs=2, seed=7)
        a = train(train_set, model_cfg, tc, layout)
        b = train(train_set, model_cfg, tc, layout)
        assert a.log_rows == b.log_rows
        for name, value in a.params.named().items():
            assert np.array_equal(value.data, b.params.named()[name].data)

    def test_loss_log_shape(self, tmp_path):
        synth_cfg, layout, train_set, _ = tiny_dataset()
        model_cfg = CommaConfig(d_video_in=4, d_word_in=3, d=4, seed=0)
        tc = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=3, seed=0)
        result = train(train_set, model_cfg, tc, layout)
        steps_per_epoch = len(train_set) // 4
        assert len(result.log_rows) == 3 * steps_per_epoch
        assert len(result.epoch_losses) == 3
        path = tmp_path / "loss.csv"
        write_loss_csv(result.log_rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,step,loss,lr"
        assert len(lines) == 1 + len(result.log_rows)

    def test_empty_dataset_rejected(self):
        model_cfg = CommaConfig(d_video_in=4, d_word_in=3, d=4)
        with pytest.raises(ValueError):
            train([], model_cfg, TrainConfig(), ModalityLayout(1, 1, 1, 1))


class TestGradCheck:
    MODEL = CommaConfig(d_video_in=5, d_word_in=3, d=4, seed=0)

    def test_linear_only_toy_path(self):
        # sentence loss on a 1-word layout exercises the linear projections
        report = grad_check(self.MODEL, LossMode.SENTENCE, seed=0, n_words=1, grid=(1, 1, 2))
        assert report["video_proj.weight"] <= 1e-6

    @pytest.mark.parametrize("mode", list(LossMode))
    def test_full_model_all_modes(self, mode):
        report = grad_check(self.MODEL, mode, seed=0)
        assert len(report) == 13  # every trainable parameter exactly once
        assert max(report.values()) <= 1e-4

    def test_corrupted_backward_detected(self, monkeypatch):
        # overstate the relu adjoint by 1.5x; mlp2 picks relu up from the
        # tensor module's globals, so one patch corrupts every MLP backward
        import comma.tensor

        true_relu = comma.tensor.relu

        def broken_relu(a):
            out = true_relu(a)
            if out._parents:
                parent = out._parents[0]
                out._vjps = (lambda g: 1.5 * g * (parent.data > 0.0),)
            return out

        monkeypatch.setattr(comma.tensor, "relu", broken_relu)
        report = grad_check(self.MODEL, LossMode.WORD, seed=0)
        assert max(report.values()) > 1e-2
