"""Head forward/backward, optimizer, training loop, and checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from capeval.errors import CheckpointError, ValidationError
from capeval.head import (
    ACTIVATIONS,
    AdamWState,
    Batch,
    HeadParams,
    TrainConfig,
    TrainingExample,
    adamw_step,
    batch_loss,
    forward,
    forward_batch,
    gradients,
    init_head_params,
    load_checkpoint,
    mse_loss,
    output_names,
    save_checkpoint,
    train,
    validation_tau,
)

SIGMOID_ONE = 0.7310585786300049  # 1 / (1 + e^-1), float64


def random_params(rng, d_in, hidden, mode, activation="tanh"):
    p = init_head_params(d_in, hidden, mode, activation=activation, rng=rng)
    for t in p.tensors():
        t += 0.05 * rng.standard_normal(t.shape)
    return p


def random_batch(rng, d_in, n_outputs, size=8):
    return Batch(
        X=rng.standard_normal((size, d_in)),
        rows=rng.integers(0, n_outputs, size=size),
        targets=rng.uniform(0.05, 0.95, size=size),
    )


class TestForward:
    def test_zero_params_give_half(self):
        p = HeadParams(
            trunk_W=np.zeros((4, 6)),
            trunk_b=np.zeros(4),
            out_W=np.zeros((3, 4)),
            out_b=np.zeros(3),
            activation="tanh",
            mode="per_perspective",
        )
        np.testing.assert_array_equal(forward(p, np.ones(6)), [0.5, 0.5, 0.5])

    def test_identity_passthrough_hits_sigmoid_of_one(self):
        d = 3
        e1 = np.zeros(d)
        e1[0] = 1.0
        p = HeadParams(
            trunk_W=np.eye(d),
            trunk_b=np.zeros(d),
            out_W=np.vstack([e1, np.zeros(d), np.zeros(d)]),
            out_b=np.zeros(3),
            activation="identity",
            mode="per_perspective",
        )
        out = forward(p, e1)
        assert out[0] == pytest.approx(SIGMOID_ONE, abs=1e-15)
        assert out[1] == out[2] == 0.5

    def test_nan_feature_rejected(self):
        p = init_head_params(4, 2, "per_perspective", seed=0)
        x = np.array([1.0, np.nan, 0.0, 0.0])
        with pytest.raises(ValidationError):
            forward(p, x)

    def test_wrong_length_rejected(self):
        p = init_head_params(4, 2, "per_perspective", seed=0)
        with pytest.raises(ValidationError):
            forward(p, np.zeros(5))

    def test_outputs_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(0)
        for mode in ("per_perspective", "shared_prompt", "single_score"):
            p = random_params(rng, 8, 4, mode)
            X = 5.0 * rng.standard_normal((50, 8))
            Y = forward_batch(p, X)
            assert np.all(Y > 0.0) and np.all(Y < 1.0)

    def test_depth_zero_is_plain_affine_sigmoid(self):
        rng = np.random.default_rng(1)
        p = init_head_params(6, 0, "shared_prompt", rng=rng)
        x = rng.standard_normal(6)
        z = p.out_W @ x + p.out_b
        np.testing.assert_allclose(forward(p, x), 1 / (1 + np.exp(-z)), atol=1e-15)

    def test_param_count_documented_default(self):
        p = init_head_params(2 * 2048 + 2 * 768, 640, "per_perspective", seed=0)
        assert p.param_count == 3_607_043

    def test_init_bounds_and_zero_biases(self):
        d_in, hidden = 64, 16
        p = init_head_params(d_in, hidden, "per_perspective", seed=4)
        assert np.all(np.abs(p.trunk_W) <= 1.0 / np.sqrt(d_in))
        assert np.all(np.abs(p.out_W) <= 1.0 / np.sqrt(hidden))
        np.testing.assert_array_equal(p.trunk_b, np.zeros(hidden))
        np.testing.assert_array_equal(p.out_b, np.zeros(3))


class TestMSE:
    def test_zero_residual(self):
        assert mse_loss([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_unit_residuals(self):
        assert mse_loss([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]) == 1.0

    def test_mean_over_six_components(self):
        pred = [[0.2, 0.4, 0.6], [0.8, 0.5, 0.1]]
        target = [[0.0, 0.5, 0.5], [1.0, 0.5, 0.3]]
        expected = (0.2**2 + 0.1**2 + 0.1**2 + 0.2**2 + 0.0 + 0.2**2) / 6
        assert mse_loss(pred, target) == pytest.approx(expected, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            mse_loss([], [])


def finite_difference_grads(params, batch, h=1e-4):
    """Central differences through the public loss path."""
    out = []
    for tensor in params.tensors():
        g = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = batch_loss(params, batch)
            flat[i] = orig - h
            lm = batch_loss(params, batch)
            flat[i] = orig
            gf[i] = (lp - lm) / (2.0 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
        worst = max(worst, float(np.max(np.abs(a - n)) / scale))
    return worst


class TestGradients:
    def test_zero_residual_gives_zero_grads(self):
        p = HeadParams(
            trunk_W=np.zeros((3, 4)),
            trunk_b=np.zeros(3),
            out_W=np.zeros((3, 3)),
            out_b=np.zeros(3),
            activation="tanh",
            mode="per_perspective",
        )
        batch = Batch(
            X=np.ones((5, 4)),
            rows=np.zeros(5, dtype=np.intp),
            targets=np.full(5, 0.5),
        )
        g = gradients(p, batch)
        assert g.loss == 0.0
        for t in g.tensors():
            np.testing.assert_array_equal(t, np.zeros_like(t))

    def test_out_b_closed_form_single_sample(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, 5, 3, "per_perspective")
        x = rng.standard_normal(5)
        batch = Batch(
            X=x[None, :], rows=np.array([1], dtype=np.intp), targets=np.array([0.2])
        )
        y = forward(p, x)[1]
        expected = 2.0 * (y - 0.2) * y * (1.0 - y)
        g = gradients(p, batch)
        assert g.out_b[1] == pytest.approx(expected, rel=1e-12)
        assert g.out_b[0] == g.out_b[2] == 0.0

    @pytest.mark.parametrize("mode", ("per_perspective", "shared_prompt", "single_score"))
    @pytest.mark.parametrize("activation", ACTIVATIONS)
    def test_matches_finite_differences(self, mode, activation):
        rng = np.random.default_rng(hash((mode, activation)) % 2**32)
        p = random_params(rng, 8, 4, mode, activation)
        batch = random_batch(rng, 8, p.n_outputs, size=6)
        analytic = gradients(p, batch)
        numeric = finite_difference_grads(p, batch)
        assert max_relative_error(analytic.tensors(), numeric) < 1e-4

    def test_depth_zero_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        p = init_head_params(6, 0, "shared_prompt", rng=rng)
        batch = random_batch(rng, 6, 3, size=5)
        analytic = gradients(p, batch)
        numeric = finite_difference_grads(p, batch)
        assert max_relative_error(analytic.tensors(), numeric) < 1e-4

    def test_row_out_of_range(self):
        p = init_head_params(4, 2, "single_score", seed=0)
        batch = Batch(
            X=np.zeros((1, 4)), rows=np.array([2], dtype=np.intp), targets=np.array([0.5])
        )
        with pytest.raises(ValidationError):
            gradients(p, batch)


def reference_adamw(tensors, grads_list, lr, b1, b2, eps, wd, steps):
    """Independent reimplementation used as the update oracle."""
    ts = [t.copy() for t in tensors]
    ms = [np.zeros_like(t) for t in ts]
    vs = [np.zeros_like(t) for t in ts]
    for k in range(1, steps + 1):
        for t, g, m, v in zip(ts, grads_list[k - 1], ms, vs):
            m[:] = b1 * m + (1 - b1) * g
            v[:] = b2 * v + (1 - b2) * g * g
            mh = m / (1 - b1**k)
            vh = v / (1 - b2**k)
            t[:] = t * (1 - lr * wd) - lr * mh / (np.sqrt(vh) + eps)
    return ts


class TestAdamW:
    def _grads_like(self, params, arrays):
        from capeval.head import HeadGrads

        return HeadGrads(*arrays, loss=0.0)

    def test_zero_grad_zero_decay_fixed_point(self):
        rng = np.random.default_rng(4)
        p = random_params(rng, 4, 3, "per_perspective")
        before = [t.copy() for t in p.tensors()]
        config = TrainConfig(weight_decay=0.0, hidden=3, seed=0)
        state = AdamWState.init(p)
        g = self._grads_like(p, [np.zeros_like(t) for t in p.tensors()])
        adamw_step(p, g, state, config)
        for t, b in zip(p.tensors(), before):
            np.testing.assert_array_equal(t, b)

    def test_zero_grad_decay_shrinks_multiplicatively(self):
        rng = np.random.default_rng(5)
        p = random_params(rng, 4, 3, "per_perspective")
        before = [t.copy() for t in p.tensors()]
        config = TrainConfig(lr=0.01, weight_decay=0.1, hidden=3, seed=0)
        state = AdamWState.init(p)
        g = self._grads_like(p, [np.zeros_like(t) for t in p.tensors()])
        adamw_step(p, g, state, config)
        for t, b in zip(p.tensors(), before):
            np.testing.assert_allclose(t, b * (1 - 0.01 * 0.1), atol=1e-15)

    def test_multi_step_matches_reference(self):
        rng = np.random.default_rng(6)
        p = random_params(rng, 5, 4, "shared_prompt")
        config = TrainConfig(lr=1e-3, weight_decay=0.02, hidden=4, seed=0)
        start = [t.copy() for t in p.tensors()]
        grads_list = [
            [rng.standard_normal(t.shape) for t in p.tensors()] for _ in range(5)
        ]
        state = AdamWState.init(p)
        for step_grads in grads_list:
            adamw_step(p, self._grads_like(p, step_grads), state, config)
        expected = reference_adamw(
            start, grads_list, config.lr, config.beta1, config.beta2, config.eps,
            config.weight_decay, steps=5,
        )
        for t, e in zip(p.tensors(), expected):
            np.testing.assert_allclose(t, e, atol=1e-14)

    def test_first_step_direction(self):
        p = HeadParams(
            trunk_W=np.zeros((0, 2)),
            trunk_b=np.zeros(0),
            out_W=np.zeros((1, 2)),
            out_b=np.zeros(1),
            activation="tanh",
            mode="single_score",
        )
        config = TrainConfig(lr=0.5, weight_decay=0.0, hidden=0, seed=0)
        g = self._grads_like(
            p, [np.zeros((0, 2)), np.zeros(0), np.array([[0.3, -0.7]]), np.zeros(1)]
        )
        adamw_step(p, g, AdamWState.init(p), config)
        # Bias-corrected first step moves by ~lr against the gradient sign.
        np.testing.assert_allclose(
            p.out_W, [[-0.5 * 0.3 / (0.3 + 1e-8), 0.5 * 0.7 / (0.7 + 1e-8)]],
            atol=1e-8,
        )


def make_examples(rng, n, d_in, mode):
    names = output_names(mode)
    out = []
    w = rng.standard_normal((len(names), d_in))
    for i in range(n):
        if mode == "per_perspective":
            inputs = rng.standard_normal((3, d_in))
            rows = np.arange(3)
            targets = 1 / (1 + np.exp(-np.einsum("ij,ij->i", w, inputs)))
        elif mode == "shared_prompt":
            x = rng.standard_normal(d_in)
            inputs = np.stack([x, x, x])
            rows = np.arange(3)
            targets = 1 / (1 + np.exp(-(w @ x)))
        else:
            inputs = rng.standard_normal((1, d_in))
            rows = np.zeros(1, dtype=np.intp)
            targets = 1 / (1 + np.exp(-(w @ inputs[0])))
        out.append(
            TrainingExample(
                sample_id=f"t{i}", inputs=inputs, rows=rows, targets=targets
            )
        )
    return out


class TestTrain:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        train_ex = make_examples(rng, 30, 6, "per_perspective")
        val_ex = make_examples(rng, 10, 6, "per_perspective")
        config = TrainConfig(epochs=3, lr=1e-3, hidden=4, seed=123, batch_size=4)
        p1, h1 = train(train_ex, val_ex, config, "per_perspective", 6)
        p2, h2 = train(train_ex, val_ex, config, "per_perspective", 6)
        assert h1.as_dict() == h2.as_dict()
        for a, b in zip(p1.tensors(), p2.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_early_stopping_on_degrading_metric(self):
        rng = np.random.default_rng(8)
        train_ex = make_examples(rng, 12, 4, "shared_prompt")
        seen: list[HeadParams] = []
        metric_values = iter([0.9, 0.8, 0.7, 0.6])

        def fake_metric(params, epoch):
            seen.append(params.copy())
            v = next(metric_values)
            return {"desc": v, "rel": v, "flu": v}

        config = TrainConfig(epochs=10, hidden=2, seed=1, patience=1)
        params, history = train(
            train_ex, [], config, "shared_prompt", 4, val_metric=fake_metric
        )
        assert len(history.epochs) == 2
        assert history.stopped_early
        assert history.best_epoch == 1
        for a, b in zip(params.tensors(), seen[0].tensors()):
            np.testing.assert_array_equal(a, b)

    def test_patience_two_allows_one_bad_epoch(self):
        rng = np.random.default_rng(9)
        train_ex = make_examples(rng, 12, 4, "shared_prompt")
        metric_values = iter([0.5, 0.4, 0.6, 0.3, 0.2, 0.1])

        def fake_metric(params, epoch):
            v = next(metric_values)
            return {"desc": v, "rel": v, "flu": v}

        config = TrainConfig(epochs=10, hidden=2, seed=1, patience=2)
        _, history = train(
            train_ex, [], config, "shared_prompt", 4, val_metric=fake_metric
        )
        assert [e.epoch for e in history.epochs] == [1, 2, 3, 4, 5]
        assert history.best_epoch == 3

    def test_empty_split_rejected(self):
        config = TrainConfig(hidden=2, seed=0)
        with pytest.raises(ValidationError):
            train([], [], config, "shared_prompt", 4)

    def test_history_invariant_when_stopped_early(self):
        rng = np.random.default_rng(10)
        train_ex = make_examples(rng, 16, 4, "per_perspective")
        val_ex = make_examples(rng, 8, 4, "per_perspective")
        config = TrainConfig(epochs=10, lr=1e-3, hidden=2, seed=3)
        _, history = train(train_ex, val_ex, config, "per_perspective", 4)
        if history.stopped_early:
            best = max(e.val_tau_mean for e in history.epochs[:-1])
            assert history.epochs[-1].val_tau_mean <= best

    def test_validation_tau_per_output(self):
        rng = np.random.default_rng(11)
        examples = make_examples(rng, 20, 5, "single_score")
        p = init_head_params(5, 3, "single_score", rng=rng)
        taus = validation_tau(p, examples)
        assert set(taus) == {"score"}
        assert -1.0 <= taus["score"] <= 1.0


class TestCheckpoint:
    def _f32_params(self, rng, d_in=7, hidden=3, mode="per_perspective"):
        p = random_params(rng, d_in, hidden, mode)
        # Values storable exactly in the float32 file format.
        for t in p.tensors():
            t[:] = t.astype(np.float32).astype(np.float64)
        return p

    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(12)
        p = self._f32_params(rng)
        path = tmp_path / "head.ckpt"
        save_checkpoint(p, path, {"best_epoch": 4, "seed": 9})
        loaded, meta = load_checkpoint(path)
        assert meta == {"best_epoch": 4, "seed": 9}
        assert loaded.mode == p.mode and loaded.activation == p.activation
        for a, b in zip(loaded.tensors(), p.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_forward_identical_after_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        p = self._f32_params(rng, mode="shared_prompt")
        path = tmp_path / "head.ckpt"
        save_checkpoint(p, path)
        loaded, _ = load_checkpoint(path)
        x = rng.standard_normal(7)
        np.testing.assert_array_equal(forward(loaded, x), forward(p, x))

    def test_depth_zero_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        p = init_head_params(5, 0, "single_score", rng=rng)
        for t in p.tensors():
            t[:] = t.astype(np.float32).astype(np.float64)
        path = tmp_path / "head.ckpt"
        save_checkpoint(p, path)
        loaded, _ = load_checkpoint(path)
        assert loaded.hidden == 0 and loaded.d_in == 5
        for a, b in zip(loaded.tensors(), p.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_d_in_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(15)
        p = self._f32_params(rng, d_in=7)
        path = tmp_path / "head.ckpt"
        save_checkpoint(p, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_d_in=9)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "head.ckpt"
        path.write_bytes(b"NOTAHEAD" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        rng = np.random.default_rng(16)
        p = self._f32_params(rng)
        path = tmp_path / "head.ckpt"
        save_checkpoint(p, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
