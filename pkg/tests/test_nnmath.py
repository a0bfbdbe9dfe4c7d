import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import scalar_adam
from sparsegest.errors import ConfigError, NumericError, ShapeError
from sparsegest.nnmath import (
    AdamState,
    DenseLayer,
    LrSchedule,
    adam_step,
    clip_gradients,
    cross_entropy,
    dense_forward,
    finite_difference_check,
    global_norm,
    lr_at,
    sigmoid,
    softmax,
)

finite = st.floats(-50, 50, allow_nan=False)


class TestDense:
    def test_identity(self):
        layer = DenseLayer(np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(dense_forward(layer, np.array([3.0, 4.0])), [3, 4])

    def test_zero_weights_give_bias(self):
        layer = DenseLayer(np.zeros((2, 2)), np.ones(2))
        np.testing.assert_array_equal(dense_forward(layer, np.array([7.0, -2.0])), [1, 1])

    def test_hand_multiply(self):
        layer = DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
        np.testing.assert_allclose(dense_forward(layer, np.ones(2)), [3.5, 6.5])

    def test_batch_rows(self):
        layer = DenseLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
        out = dense_forward(layer, np.array([[1.0, 1.0], [0.0, 0.0]]))
        np.testing.assert_allclose(out, [[3.5, 6.5], [0.5, -0.5]])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            dense_forward(DenseLayer(np.eye(2), np.zeros(2)), np.ones(3))

    def test_bias_length_checked(self):
        with pytest.raises(ShapeError):
            DenseLayer(np.eye(2), np.zeros(3))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax(np.zeros(2)), [0.5, 0.5])

    def test_large_equal_inputs(self):
        np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(softmax(np.array([0.0, math.log(3)])), [0.25, 0.75], rtol=1e-12)

    def test_empty(self):
        with pytest.raises(ShapeError):
            softmax(np.array([]))

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)), st.floats(-1e6, 1e6))
    def test_sums_to_one_and_shift_invariant(self, v, c):
        p = softmax(v)
        assert abs(p.sum() - 1) <= 1e-9
        np.testing.assert_allclose(softmax(v + c), p, atol=1e-9)


def test_sigmoid_stable_at_extremes():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
    assert sigmoid(0.0) == 0.5
    assert np.isfinite(sigmoid(np.float32(-200)))


class TestCrossEntropy:
    def test_certain(self):
        assert cross_entropy(np.array([1.0, 0.0, 0.0]), 0) == 0.0

    def test_half(self):
        assert cross_entropy(np.array([0.5, 0.5]), 1) == pytest.approx(math.log(2))

    def test_quarter(self):
        assert cross_entropy(np.array([0.25, 0.75]), 0) == pytest.approx(math.log(4))

    def test_floor_prevents_infinity(self):
        assert cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(-math.log(1e-12))

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(np.array([0.5, 0.5]), 2)

    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(0, 1)), st.data())
    def test_nonnegative_zero_iff_certain(self, raw, data):
        probs = raw / raw.sum() if raw.sum() > 0 else np.full(raw.size, 1 / raw.size)
        label = data.draw(st.integers(0, probs.size - 1))
        ce = cross_entropy(probs, label)
        assert ce >= 0
        assert (ce == 0) == (probs[label] >= 1.0)


class TestClip:
    def test_under_threshold_unchanged(self):
        out = clip_gradients({"g": np.array([3.0, 4.0])}, 10)
        np.testing.assert_array_equal(out["g"], [3, 4])

    def test_scaled(self):
        out = clip_gradients({"g": np.array([3.0, 4.0])}, 1)
        np.testing.assert_allclose(out["g"], [0.6, 0.8])

    def test_zero(self):
        out = clip_gradients({"a": np.zeros(3), "b": np.zeros((2, 2))}, 0.5)
        assert global_norm(out) == 0

    def test_global_not_per_tensor(self):
        out = clip_gradients({"a": np.array([3.0]), "b": np.array([4.0])}, 1)
        np.testing.assert_allclose([out["a"][0], out["b"][0]], [0.6, 0.8])

    def test_nonfinite(self):
        with pytest.raises(NumericError):
            clip_gradients({"g": np.array([np.nan, 1.0])}, 1)

    def test_does_not_alias_input(self):
        g = {"g": np.array([0.1])}
        out = clip_gradients(g, 1)
        out["g"][0] = 5
        assert g["g"][0] == 0.1

    @given(arrays(np.float64, st.integers(1, 10), elements=finite), st.floats(1e-3, 100))
    def test_idempotent_and_bounded(self, g, max_norm):
        once = clip_gradients({"g": g}, max_norm)
        twice = clip_gradients(once, max_norm)
        np.testing.assert_allclose(twice["g"], once["g"], rtol=1e-12, atol=1e-15)
        assert global_norm(once) <= max_norm + 1e-9


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.zeros_like(params)
        adam_step(params, {"w": np.zeros(2)}, state, 0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.step == 1

    def test_moments_decay_under_zero_gradient(self):
        params = {"w": np.array([1.0])}
        state = AdamState.zeros_like(params)
        adam_step(params, {"w": np.array([2.0])}, state, 0.1)
        m, v = state.m["w"].copy(), state.v["w"].copy()
        adam_step(params, {"w": np.zeros(1)}, state, 0.1)
        np.testing.assert_allclose(state.m["w"], 0.9 * m)
        np.testing.assert_allclose(state.v["w"], 0.999 * v)

    def test_first_step_is_signed_lr(self):
        params = {"w": np.array([0.0, 0.0])}
        state = AdamState.zeros_like(params)
        adam_step(params, {"w": np.array([3.0, -0.2])}, state, 0.01)
        np.testing.assert_allclose(params["w"], [-0.01, 0.01], rtol=1e-6)

    def test_two_step_scalar_trace(self):
        params = {"w": np.array([1.0])}
        state = AdamState.zeros_like(params)
        grads = [0.3, 0.3]
        expected = scalar_adam(1.0, grads, 0.05)
        for g, want in zip(grads, expected):
            adam_step(params, {"w": np.array([g])}, state, 0.05)
            assert params["w"][0] == pytest.approx(want, rel=1e-14)
        assert state.step == 2

    def test_rejects_nonpositive_lr(self):
        params = {"w": np.zeros(1)}
        with pytest.raises(ConfigError):
            adam_step(params, {"w": np.zeros(1)}, AdamState.zeros_like(params), 0.0)

    @given(arrays(np.float64, 4, elements=finite), st.integers(1, 5))
    def test_zero_gradients_never_move(self, p, steps):
        params = {"w": p.copy()}
        state = AdamState.zeros_like(params)
        for _ in range(steps):
            adam_step(params, {"w": np.zeros(4)}, state, 0.1)
        np.testing.assert_array_equal(params["w"], p)


class TestSchedule:
    def test_base(self):
        assert lr_at(LrSchedule(0.001, 0.9, 0)) == 0.001

    def test_one_decay(self):
        assert lr_at(LrSchedule(0.001, 0.9, 1)) == pytest.approx(0.0009)

    def test_no_decay(self):
        assert lr_at(LrSchedule(0.003, 1.0, 57)) == 0.003


class TestFiniteDifference:
    @staticmethod
    def quadratic(params):
        # loss = 0.5 * ||A w - y||^2 for a linear model
        A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.1]])
        y = np.array([1.0, 0.0, -1.0])
        r = A @ params["w"] - y
        return 0.5 * float(r @ r), {"w": A.T @ r}

    def test_linear_model_exact(self):
        params = {"w": np.array([0.3, -0.7])}
        assert finite_difference_check(params, self.quadratic) < 1e-7

    def test_corrupted_gradient_detected(self):
        def doubled(params):
            loss, g = self.quadratic(params)
            return loss, {"w": 2 * g["w"]}

        err = finite_difference_check({"w": np.array([0.3, -0.7])}, doubled)
        assert err == pytest.approx(0.5, abs=1e-6)

    def test_restores_params(self):
        params = {"w": np.array([0.3, -0.7])}
        finite_difference_check(params, self.quadratic)
        np.testing.assert_array_equal(params["w"], [0.3, -0.7])

    def test_one_layer_rnn_segment(self):
        from sparsegest.data import Segment
        from sparsegest.model import DetectorModel, detector_config
        from sparsegest.training import segment_loss_and_grads

        rng = np.random.default_rng(3)
        model = DetectorModel.init(detector_config(4, 3, seed=1))
        seg = Segment(rng.normal(size=(5, 4)), np.array([0, 0, 1, 1, 0]))
        err = finite_difference_check(model.parameters(), lambda p: segment_loss_and_grads(model, seg, training=False), 1e-5)
        assert err < 1e-4
