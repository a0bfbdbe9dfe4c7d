import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import straight_line_forward
from sparsegest.errors import ConfigError, ParseError, ShapeError, VersionError
from sparsegest.model import (
    DetectorModel,
    ExternalHiddenState,
    ModelConfig,
    RecognizerModel,
    RnnLiteCell,
    cell_step,
    count_parameters,
    detector_config,
    load_model,
    recognizer_config,
    reset_hidden,
    save_model,
)


def small_recognizer(seed=0, classes=4):
    return RecognizerModel.init(recognizer_config(6, (5, 4, 3), classes, 0.2, seed))


class TestCell:
    def test_zero_cell(self):
        cell = RnnLiteCell(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros(2))
        np.testing.assert_array_equal(cell_step(cell, np.array([1.0, 2, 3]), np.array([0.9, -0.4])), [0, 0])

    def test_zero_recurrence_decouples_state(self):
        rng = np.random.default_rng(0)
        cell = RnnLiteCell(rng.normal(size=(2, 3)), np.zeros((2, 2)), rng.normal(size=2))
        x = rng.normal(size=3)
        a = cell_step(cell, x, np.array([0.5, 0.5]))
        b = cell_step(cell, x, np.array([-0.9, 0.1]))
        np.testing.assert_array_equal(a, b)

    def test_hand_values(self):
        cell = RnnLiteCell(np.array([[1.0, 2.0], [0.0, -1.0]]), np.array([[0.5, 0.0], [1.0, 1.0]]), np.array([0.1, 0.2]))
        x, h = np.array([1.0, 0.0]), np.array([0.5, -0.5])
        want = [math.tanh(1.0 + 0.25 + 0.1), math.tanh(0.0 + 0.0 + 0.2)]
        np.testing.assert_allclose(cell_step(cell, x, h), want, rtol=1e-15)

    def test_does_not_mutate_state(self):
        cell = RnnLiteCell(np.ones((2, 2)), np.ones((2, 2)), np.ones(2))
        h = np.array([0.1, 0.2])
        cell_step(cell, np.ones(2), h)
        np.testing.assert_array_equal(h, [0.1, 0.2])

    def test_shape_errors(self):
        cell = RnnLiteCell(np.ones((2, 2)), np.ones((2, 2)), np.ones(2))
        with pytest.raises(ShapeError):
            cell_step(cell, np.ones(3), np.zeros(2))
        with pytest.raises(ShapeError):
            cell_step(cell, np.ones(2), np.zeros(3))
        with pytest.raises(ShapeError):
            RnnLiteCell(np.ones((2, 2)), np.ones((2, 3)), np.ones(2))

    @given(arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)), st.integers(0, 2**31))
    def test_bounded(self, x, seed):
        rng = np.random.default_rng(seed)
        cell = RnnLiteCell(rng.normal(size=(3, 4)), rng.normal(size=(3, 3)), rng.normal(size=3))
        h = cell_step(cell, x, rng.uniform(-1, 1, 3))
        assert np.all(np.abs(h) <= 1)


class TestConfig:
    def test_detector_shape_rules(self):
        with pytest.raises(ConfigError):
            ModelConfig("detector", 6, (4, 4))
        with pytest.raises(ConfigError):
            ModelConfig("detector", 6, (4,), num_classes=2)

    def test_recognizer_shape_rules(self):
        with pytest.raises(ConfigError):
            ModelConfig("recognizer", 6, (4, 4), 3)
        with pytest.raises(ConfigError):
            ModelConfig("recognizer", 6, (4, 4, 4), 1)
        with pytest.raises(ConfigError):
            recognizer_config(6, 4, 3, dropout=1.0)

    def test_defaults(self):
        assert detector_config().hidden == (256,)
        cfg = recognizer_config()
        assert (cfg.input_dim, cfg.hidden, cfg.num_classes, cfg.dropout) == (78, (256,) * 3, 17, 0.2)


class TestRecognizer:
    def test_zero_model_uniform(self):
        model = RecognizerModel.zeros(recognizer_config(6, 3, 5))
        probs, _ = model.step(model.zero_state(), np.ones(6))
        np.testing.assert_allclose(probs, np.full(5, 0.2))

    def test_inference_deterministic(self):
        model = small_recognizer()
        h = model.zero_state()
        x = np.arange(6.0)
        a, ha = model.step(h, x)
        b, hb = model.step(h, x)
        np.testing.assert_array_equal(a, b)
        for u, v in zip(ha.layers, hb.layers):
            np.testing.assert_array_equal(u, v)

    def test_matches_straight_line_oracle(self):
        model = small_recognizer(seed=5)
        frames = np.random.default_rng(1).normal(size=(5, 6))
        want = straight_line_forward(model.parameters(), 3, frames)
        h = model.zero_state()
        for x, w in zip(frames, want):
            p, h = model.step(h, x)
            np.testing.assert_allclose(p, w, rtol=1e-12, atol=1e-15)

    def test_returns_fresh_state(self):
        model = small_recognizer()
        h = model.zero_state()
        _, h2 = model.step(h, np.ones(6))
        assert all(np.all(l == 0) for l in h.layers)
        assert any(np.any(l != 0) for l in h2.layers)

    def test_dropout_only_in_training(self):
        model = small_recognizer()
        h = model.zero_state()
        x = np.ones(6)
        base, _ = model.step(h, x)
        p1, _ = model.step(h, x, training=True, rng=np.random.default_rng(0))
        p2, _ = model.step(h, x, training=True, rng=np.random.default_rng(1))
        assert not np.allclose(p1, p2)
        with pytest.raises(ConfigError):
            model.step(h, x, training=True)
        np.testing.assert_array_equal(base, model.step(h, x)[0])

    def test_dropout_leaves_recurrent_state_unmasked(self):
        model = small_recognizer()
        h = model.zero_state()
        _, clean = model.step(h, np.ones(6))
        _, dropped = model.step(h, np.ones(6), training=True, rng=np.random.default_rng(0))
        # layer 1 sees the raw frame, so its state cannot depend on dropout
        np.testing.assert_array_equal(clean.layers[0], dropped.layers[0])

    def test_wrong_state_layers(self):
        model = small_recognizer()
        with pytest.raises(ShapeError):
            model.step(ExternalHiddenState([np.zeros(5)]), np.ones(6))

    def test_parameters_untouched_by_stepping(self):
        model = small_recognizer()
        before = {k: v.copy() for k, v in model.parameters().items()}
        h = model.zero_state()
        for _ in range(3):
            _, h = model.step(h, np.ones(6), training=True, rng=np.random.default_rng(0))
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, before[k])


class TestDetector:
    def test_zero_model_half(self):
        model = DetectorModel.zeros(detector_config(6, 4))
        h = model.zero_state()
        for _ in range(3):
            c, h = model.step(h, np.ones(6))
            assert c == 0.5

    def test_saturated_bias(self):
        model = DetectorModel.zeros(detector_config(6, 4))
        model.readout.bias[:] = 10
        c, _ = model.step(model.zero_state(), np.ones(6))
        assert c > 0.9999

    def test_matches_oracle(self):
        model = DetectorModel.init(detector_config(6, 5, seed=2))
        frames = np.random.default_rng(2).normal(size=(3, 6))
        want = straight_line_forward(model.parameters(), 1, frames, readout="sigmoid")
        h = model.zero_state()
        for x, w in zip(frames, want):
            c, h = model.step(h, x)
            assert c == pytest.approx(w, rel=1e-12)


class TestReset:
    def test_all_zero_and_idempotent(self):
        h = ExternalHiddenState([np.array([0.3, -0.2]), np.array([0.9])])
        once = reset_hidden(h)
        assert all(np.all(l == 0) for l in once.layers)
        twice = reset_hidden(once)
        for a, b in zip(once.layers, twice.layers):
            np.testing.assert_array_equal(a, b)

    @given(st.integers(0, 10), st.integers(1, 6))
    def test_reset_equals_fresh_start(self, prefix, tail):
        model = small_recognizer(seed=3)
        rng = np.random.default_rng(prefix * 10 + tail)
        frames = rng.normal(size=(prefix + tail, 6))
        h = model.zero_state()
        for x in frames[:prefix]:
            _, h = model.step(h, x)
        h = reset_hidden(h)
        fresh = model.zero_state()
        for x in frames[prefix:]:
            a, h = model.step(h, x)
            b, fresh = model.step(fresh, x)
            np.testing.assert_array_equal(a, b)


class TestCounts:
    def test_toy_detector(self):
        counts = count_parameters(detector_config(2, 1), recognizer_config(2, (1, 1, 1), 2))
        assert counts.detector == 6
        assert counts.recognizer == 14
        assert (counts.idle, counts.busy) == (6, 20)

    def test_counts_match_tensor_sizes(self):
        det = DetectorModel.init(detector_config(12, 7))
        rec = RecognizerModel.init(recognizer_config(12, (5, 6, 7), 4))
        counts = count_parameters(det.config, rec.config)
        assert counts.detector == sum(p.size for p in det.parameters().values())
        assert counts.recognizer == sum(p.size for p in rec.parameters().values())

    @given(st.integers(1, 100), st.integers(1, 64), st.lists(st.integers(1, 64), min_size=3, max_size=3), st.integers(2, 30))
    def test_busy_is_idle_plus_recognizer(self, inp, hd, hr, c):
        counts = count_parameters(detector_config(inp, hd), recognizer_config(inp, tuple(hr), c))
        assert counts.busy == counts.idle + counts.recognizer
        assert counts.idle == counts.detector


class TestSerialization:
    def test_round_trip_bytes(self, tmp_path):
        model = small_recognizer()
        a, b = tmp_path / "a.model", tmp_path / "b.model"
        save_model(model, a)
        save_model(load_model(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_f8_is_exact(self, tmp_path):
        model = DetectorModel.init(detector_config(6, 4, seed=9))
        save_model(model, tmp_path / "m", dtype="f8")
        loaded = load_model(tmp_path / "m")
        assert loaded.config == model.config
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(loaded.parameters()[k], v)

    def test_f4_rounds_to_float32(self, tmp_path):
        model = DetectorModel.init(detector_config(6, 4, seed=9))
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(loaded.parameters()[k], v.astype(np.float32))

    def test_truncated(self, tmp_path):
        save_model(small_recognizer(), tmp_path / "m")
        data = (tmp_path / "m").read_bytes()
        for cut in (3, 20, len(data) // 2, len(data) - 1):
            (tmp_path / "t").write_bytes(data[:cut])
            with pytest.raises((ParseError, VersionError)) as info:
                load_model(tmp_path / "t")
            if isinstance(info.value, ParseError):
                assert info.value.offset is not None

    def test_bad_magic(self, tmp_path):
        save_model(small_recognizer(), tmp_path / "m")
        data = bytearray((tmp_path / "m").read_bytes())
        data[0] ^= 0xFF
        (tmp_path / "m").write_bytes(bytes(data))
        with pytest.raises(VersionError):
            load_model(tmp_path / "m")

    def test_bad_version(self, tmp_path):
        save_model(small_recognizer(), tmp_path / "m")
        data = bytearray((tmp_path / "m").read_bytes())
        data[4] = 9
        (tmp_path / "m").write_bytes(bytes(data))
        with pytest.raises(VersionError):
            load_model(tmp_path / "m")

    def test_corrupt_payload(self, tmp_path):
        save_model(small_recognizer(), tmp_path / "m")
        data = bytearray((tmp_path / "m").read_bytes())
        data[-10] ^= 0x01
        (tmp_path / "m").write_bytes(bytes(data))
        with pytest.raises(ParseError, match="checksum"):
            load_model(tmp_path / "m")
