"""Behavioural and gradient checks for the network building blocks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from factormix import tensor as T
from factormix.nets import (
    MLP,
    AttentionLambda,
    GRUCell,
    HyperNet,
    Linear,
    Module,
    positive_floor,
)
from factormix.tensor import Tensor, finite_diff_check


def zero_module(module: Module) -> None:
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


class TestMLP:
    def test_zero_network_outputs_zero(self):
        rng = np.random.default_rng(0)
        mlp = MLP([3, 4, 2], rng)
        zero_module(mlp)
        out = mlp(Tensor(np.ones((2, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_single_layer_equals_affine_map(self):
        rng = np.random.default_rng(1)
        mlp = MLP([3, 2], rng)
        x = rng.standard_normal((4, 3))
        expected = x @ mlp.layers[0].weight.data + mlp.layers[0].bias.data
        np.testing.assert_allclose(mlp(Tensor(x)).data, expected)

    def test_output_activations(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((5, 3)))
        assert (MLP([3, 4, 2], rng, output="abs")(x).data >= 0).all()
        assert (MLP([3, 4, 2], rng, output="elu_plus_one")(x).data > 0).all()

    def test_invalid_sizes_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            MLP([3], rng)
        with pytest.raises(ValueError):
            MLP([3, 0, 2], rng)
        with pytest.raises(ValueError):
            MLP([3, 2], rng, output="softmax")

    def test_input_width_mismatch_rejected(self):
        mlp = MLP([3, 2], np.random.default_rng(0))
        with pytest.raises(ValueError, match="features"):
            mlp(Tensor(np.ones((2, 4))))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        mlp = MLP([3, 5, 1], rng)
        x = Tensor(rng.standard_normal((2, 3)))
        report = finite_diff_check(
            lambda *ps: T.sum_(mlp(x)), mlp.parameters()
        )
        assert report.passed, report


class TestGRUCell:
    def test_zero_parameters_halve_hidden(self):
        rng = np.random.default_rng(0)
        gru = GRUCell(3, 4, rng)
        zero_module(gru)
        h = rng.standard_normal((2, 4))
        out = gru(Tensor(np.ones((2, 3))), Tensor(h))
        np.testing.assert_allclose(out.data, 0.5 * h)

    def test_all_zero_inputs_give_zero_hidden(self):
        rng = np.random.default_rng(0)
        gru = GRUCell(3, 4, rng)
        zero_module(gru)
        out = gru(Tensor(np.zeros((1, 3))), gru.initial_hidden(1))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_shape_mismatch_rejected(self):
        gru = GRUCell(3, 4, np.random.default_rng(0))
        with pytest.raises(ValueError, match="hidden"):
            gru(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 5))))

    def test_unrolled_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        gru = GRUCell(2, 3, rng)
        xs = [Tensor(rng.standard_normal((1, 2))) for _ in range(8)]

        def f(*ps):
            h = gru.initial_hidden(1)
            for x in xs:
                h = gru(x, h)
            return T.sum_(h)

        report = finite_diff_check(f, gru.parameters())
        assert report.passed, report


class TestHyperNet:
    def test_weights_non_negative_for_sampled_conditioning(self):
        rng = np.random.default_rng(5)
        hyper = HyperNet(4, 3, 5, rng)
        for _ in range(50):
            w, _ = hyper(Tensor(rng.standard_normal((2, 4)) * 3))
            assert w.data.min() >= 0.0

    def test_zero_conditioning_zero_params_give_zeros(self):
        rng = np.random.default_rng(6)
        hyper = HyperNet(4, 3, 5, rng)
        zero_module(hyper)
        w, b = hyper(Tensor(np.zeros((1, 4))))
        np.testing.assert_array_equal(w.data, np.zeros((1, 3, 5)))
        np.testing.assert_array_equal(b.data, np.zeros((1, 5)))

    def test_distinct_states_give_distinct_weights(self):
        rng = np.random.default_rng(7)
        hyper = HyperNet(4, 2, 3, rng)
        s = rng.standard_normal((2, 4))
        w, _ = hyper(Tensor(s))
        assert not np.allclose(w.data[0], w.data[1])
        assert w.data.min() >= 0.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(8)
        hyper = HyperNet(3, 2, 2, rng, hidden=4)
        cond = Tensor(rng.standard_normal((2, 3)))

        def f(*ps):
            w, b = hyper(cond)
            return T.add(T.sum_(w), T.sum_(b))

        report = finite_diff_check(f, hyper.parameters())
        assert report.passed, report


class TestAttentionLambda:
    def test_coefficients_strictly_positive(self):
        rng = np.random.default_rng(9)
        attn = AttentionLambda(4, 6, 3, rng, hidden=8)
        for _ in range(50):
            lam = attn(
                Tensor(rng.standard_normal((2, 4)) * 4),
                Tensor(rng.standard_normal((2, 6)) * 4),
            )
            assert lam.data.min() > 0.0

    def test_head_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        attn = AttentionLambda(4, 6, 3, rng, hidden=8)
        heads = attn.head_weights(
            Tensor(rng.standard_normal((5, 4))), Tensor(rng.standard_normal((5, 6)))
        )
        assert len(heads) == attn.n_heads
        for h in heads:
            np.testing.assert_allclose(h.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_coefficients_vary_with_joint_action(self):
        rng = np.random.default_rng(11)
        attn = AttentionLambda(3, 4, 2, rng, hidden=8)
        cond = Tensor(rng.standard_normal((1, 3)))
        enc_a = np.zeros((1, 4))
        enc_a[0, [0, 2]] = 1.0
        enc_b = np.zeros((1, 4))
        enc_b[0, [1, 3]] = 1.0
        lam_a = attn(cond, Tensor(enc_a)).data
        lam_b = attn(cond, Tensor(enc_b)).data
        assert not np.allclose(lam_a, lam_b)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(12)
        attn = AttentionLambda(2, 3, 2, rng, n_heads=2, hidden=3)
        cond = Tensor(rng.standard_normal((2, 2)))
        enc = Tensor(rng.standard_normal((2, 3)))
        report = finite_diff_check(
            lambda *ps: T.sum_(attn(cond, enc)), attn.parameters()
        )
        assert report.passed, report


@given(hnp.arrays(np.float64, (2, 3), elements=st.floats(-5, 5)))
@settings(max_examples=50, deadline=None)
def test_positive_floor_is_a_floor(values):
    out = positive_floor(Tensor(values), 1e-6)
    assert (out.data >= 1e-6).all()
    big = values > 1e-6
    np.testing.assert_allclose(out.data[big], values[big])


def test_named_parameters_use_dotted_paths():
    rng = np.random.default_rng(0)
    mlp = MLP([2, 3, 1], rng)
    names = set(mlp.named_parameters())
    assert "layers.0.weight" in names
    assert "layers.1.bias" in names


def test_state_round_trip():
    rng = np.random.default_rng(1)
    a = MLP([2, 3, 1], rng)
    b = MLP([2, 3, 1], np.random.default_rng(2))
    b.load_state_arrays(a.state_arrays())
    x = Tensor(rng.standard_normal((4, 2)))
    np.testing.assert_array_equal(a(x).data, b(x).data)
