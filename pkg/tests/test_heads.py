"""Head assembly, prediction rule, and the trained-head file format."""

from __future__ import annotations

import numpy as np
import pytest

from aidetect.errors import DimensionError, HeadFormatError
from aidetect.heads import (
    HeadKind,
    cnn_head,
    head_init,
    load_head,
    loss_and_gradients,
    mlp_head,
    predict,
    save_head,
)
from aidetect.labels import Label
from aidetect.nn import sigmoid


def fixture_z(seed=123):
    return np.random.default_rng(seed).normal(size=512).astype(np.float32)


def numpy_mlp_forward(params, z, train=False):
    """Independent reference forward: plain numpy, no layer classes."""
    h1 = np.maximum(params["dense1.weights"] @ z + params["dense1.bias"], 0)
    # eval mode: dropout is the identity
    h2 = np.maximum(params["dense2.weights"] @ h1 + params["dense2.bias"], 0)
    return float((params["dense3.weights"] @ h2 + params["dense3.bias"])[0])


class TestInit:
    def test_same_seed_bit_identical(self):
        a = head_init(HeadKind.MLP, 42).parameters()
        b = head_init(HeadKind.MLP, 42).parameters()
        for key in a:
            np.testing.assert_array_equal(a[key], b[key])

    def test_different_seed_differs(self):
        a = head_init(HeadKind.CNN, 1).parameters()
        b = head_init(HeadKind.CNN, 2).parameters()
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_mlp_parameter_count(self):
        assert head_init(HeadKind.MLP, 0).parameter_count() == 164_353

    def test_cnn_parameter_count(self):
        assert head_init(HeadKind.CNN, 0).parameter_count() == 1_048_961

    def test_biases_start_at_zero(self):
        for kind in HeadKind:
            for key, value in head_init(kind, 3).parameters().items():
                if key.endswith(".bias"):
                    assert np.all(value == 0)

    def test_weight_scale_respects_fan_in(self):
        head = head_init(HeadKind.MLP, 5)
        w1 = head.parameters()["dense1.weights"]
        bound = np.sqrt(1.0 / 512)
        assert np.all(np.abs(w1) <= bound)
        assert np.abs(w1).max() > 0.5 * bound


class TestForward:
    def test_zero_parameters_give_zero_logit(self):
        for kind in HeadKind:
            head = head_init(kind, 0)
            for value in head.parameters().values():
                value[...] = 0
            assert head.forward(fixture_z()) == 0.0

    def test_zero_input_composes_biases(self):
        head = head_init(HeadKind.MLP, 7)
        params = head.parameters()
        rng = np.random.default_rng(8)
        for key, value in params.items():
            if key.endswith(".bias"):
                value[...] = rng.normal(size=value.shape).astype(np.float32)
        z = np.zeros(512, np.float32)
        expected = numpy_mlp_forward(params, z)
        assert head.forward(z) == pytest.approx(expected, rel=1e-6)

    def test_against_reference_forward_oracle(self):
        head = head_init(HeadKind.MLP, 42)
        z = fixture_z()
        expected = numpy_mlp_forward(head.parameters(), z)
        assert head.forward(z, train=False) == pytest.approx(expected, rel=1e-5)

    def test_wrong_dimension_rejected(self):
        head = head_init(HeadKind.MLP, 0)
        for bad in (511, 513):
            with pytest.raises(DimensionError, match="512"):
                head.forward(np.zeros(bad, np.float32))

    def test_scalar_logit_for_both_kinds(self):
        z = fixture_z()
        for kind in HeadKind:
            logit = head_init(kind, 1).forward(z)
            assert isinstance(logit, float)

    def test_eval_forward_pure(self):
        head = head_init(HeadKind.CNN, 9)
        z = fixture_z(5)
        first = head.forward(z, train=False)
        assert all(head.forward(z, train=False) == first for _ in range(1000))

    def test_batch_matches_singles(self):
        head = head_init(HeadKind.CNN, 4)
        z = np.random.default_rng(10).normal(size=(5, 512)).astype(np.float32)
        batch = head.forward(z)
        for i in range(5):
            assert batch[i] == pytest.approx(head.forward(z[i]), rel=1e-4)


class TestPredict:
    def test_boundary_goes_to_fake(self):
        head = head_init(HeadKind.MLP, 0)
        for value in head.parameters().values():
            value[...] = 0
        prob, label = predict(head, fixture_z(), threshold=0.5)
        assert prob == 0.5
        assert label is Label.FAKE

    def test_saturated_negative_is_real(self):
        head = head_init(HeadKind.MLP, 0)
        for key, value in head.parameters().items():
            value[...] = 0
        head.parameters()["dense3.bias"][...] = -30.0
        prob, label = predict(head, fixture_z())
        assert prob < 1e-9
        assert label is Label.REAL

    def test_sigmoid_oracle_at_logit_one(self):
        head = head_init(HeadKind.MLP, 0)
        for value in head.parameters().values():
            value[...] = 0
        head.parameters()["dense3.bias"][...] = 1.0
        prob, label = predict(head, fixture_z())
        assert prob == pytest.approx(1 / (1 + np.exp(-1.0)), abs=1e-6)
        assert prob == pytest.approx(0.7311, abs=1e-4)
        assert label is Label.FAKE

    def test_monotone_in_logit(self):
        probs = [sigmoid(x) for x in np.linspace(-20, 20, 200)]
        assert all(b >= a for a, b in zip(probs, probs[1:]))

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            predict(head_init(HeadKind.MLP, 0), fixture_z(), threshold=1.0)


class TestLossAndGradients:
    def test_loss_matches_bce_of_logits(self):
        head = head_init(HeadKind.MLP, 11)
        z = np.random.default_rng(11).normal(size=(8, 512)).astype(np.float32)
        t = np.array([0, 1] * 4, np.float32)
        logits = head.forward(z, train=False)
        expected = float(
            np.mean(np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits))))
        )
        loss, grads = loss_and_gradients(head, z, t, train=False)
        assert loss == pytest.approx(expected, rel=1e-6)
        assert set(grads) == set(head.parameters())

    def test_gradients_scale_with_batch_mean(self):
        # duplicating the batch must not change mean-reduced gradients
        head = head_init(HeadKind.MLP, 12)
        z = np.random.default_rng(12).normal(size=(4, 512)).astype(np.float32)
        t = np.array([1, 0, 1, 0], np.float32)
        _, g1 = loss_and_gradients(head, z, t, train=False)
        _, g2 = loss_and_gradients(head, np.tile(z, (2, 1)), np.tile(t, 2), train=False)
        for key in g1:
            np.testing.assert_allclose(g1[key], g2[key], rtol=1e-4, atol=1e-7)


class TestHeadFile:
    @pytest.mark.parametrize("kind", list(HeadKind))
    def test_roundtrip_bit_exact(self, kind, tmp_path):
        head = head_init(kind, 21)
        rng = np.random.default_rng(21)
        for value in head.parameters().values():
            value[...] = rng.normal(size=value.shape).astype(np.float32)
        path = tmp_path / "head.ahd"
        save_head(head, path)
        loaded = load_head(path)
        assert loaded.kind is kind
        for key, value in head.parameters().items():
            np.testing.assert_array_equal(loaded.parameters()[key], value)

    def test_save_load_save_identical_bytes(self, tmp_path):
        head = head_init(HeadKind.CNN, 3)
        p1, p2 = tmp_path / "a.ahd", tmp_path / "b.ahd"
        save_head(head, p1)
        save_head(load_head(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_and_kind_byte(self, tmp_path):
        path = tmp_path / "h.ahd"
        save_head(head_init(HeadKind.MLP, 0), path)
        blob = path.read_bytes()
        assert blob[:4] == b"AHD1"
        assert blob[4] == 0
        save_head(head_init(HeadKind.CNN, 0), path)
        assert path.read_bytes()[4] == 1

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ahd"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(HeadFormatError, match="magic"):
            load_head(path)

    def test_unknown_kind_byte(self, tmp_path):
        path = tmp_path / "h.ahd"
        save_head(head_init(HeadKind.MLP, 0), path)
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(HeadFormatError, match="kind"):
            load_head(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "h.ahd"
        save_head(head_init(HeadKind.MLP, 0), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(HeadFormatError, match="truncated"):
            load_head(path)

    def test_reduced_width_heads_roundtrip(self, tmp_path):
        head = cnn_head(5, in_dim=16, channels=4, kernel_size=3, hidden=6)
        path = tmp_path / "small.ahd"
        save_head(head, path)
        loaded = load_head(path)
        z = np.random.default_rng(0).normal(size=16).astype(np.float32)
        assert loaded.forward(z) == head.forward(z)

    def test_loaded_head_same_logits(self, tmp_path):
        head = mlp_head(33)
        path = tmp_path / "h.ahd"
        save_head(head, path)
        z = fixture_z(33)
        assert load_head(path).forward(z) == head.forward(z)
