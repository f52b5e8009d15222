"""Decomposition identities of the gated components against dense oracles."""

import numpy as np
import pytest

from archslim import components as comp
from archslim import grad
from archslim.errors import InvalidArchitectureError, ShapeError
from archslim.grad import Rng, evaluate, finite_difference_check, leaf

import oracles


def concat_ff(stack):
    """Recover the undecomposed feedforward weights from a sliced stack."""
    w1 = np.hstack([s.w1.value for s in stack.slices])
    b1 = np.hstack([s.b1.value for s in stack.slices])
    w2 = np.vstack([s.w2.value for s in stack.slices])
    return w1, b1, w2, stack.b2.value


class TestFeedForward:
    def test_identity_weights_positive_input(self):
        sl = comp.FeedForwardSlice(w1=leaf([[1.0]]), b1=leaf([[0.0]]), w2=leaf([[1.0]]))
        out = evaluate(comp.ff_slice_forward(sl, leaf([[2.0]]), activation="relu"))
        np.testing.assert_array_equal(out, [[2.0]])

    def test_relu_clamps_negative_input(self):
        sl = comp.FeedForwardSlice(w1=leaf([[1.0]]), b1=leaf([[0.0]]), w2=leaf([[1.0]]))
        out = evaluate(comp.ff_slice_forward(sl, leaf([[-2.0]]), activation="relu"))
        np.testing.assert_array_equal(out, [[0.0]])

    def test_slice_sum_matches_dense(self):
        rng = Rng(101)
        stack = comp.make_ff_stack(rng.child("ff"), hidden=4, ff_dim=8, m=2)
        # Nonzero biases so the bias convention is exercised.
        for s in stack.slices:
            s.b1.value[:] = rng.uniform(1, s.width, -0.5, 0.5)
        stack.b2.value[:] = rng.uniform(1, 4, -0.5, 0.5)
        x = leaf(rng.uniform(5, 4, -1, 1))
        got = evaluate(comp.ff_stack_forward(stack, x))
        want = oracles.dense_ff(x.value, *concat_ff(stack))
        assert np.abs(got - want).max() < 1e-10

    @pytest.mark.parametrize("m", [1, 2, 4, 8])
    @pytest.mark.parametrize("rows", [1, 4, 16])
    def test_decomposition_all_granularities(self, m, rows):
        rng = Rng(11 * m + rows)
        stack = comp.make_ff_stack(rng.child("ff"), hidden=8, ff_dim=16, m=m)
        x = leaf(rng.uniform(rows, 8, -1, 1))
        got = evaluate(comp.ff_stack_forward(stack, x))
        want = oracles.dense_ff(x.value, *concat_ff(stack))
        assert np.abs(got - want).max() < 1e-10

    def test_dimension_mismatch(self):
        sl = comp.FeedForwardSlice(w1=leaf([[1.0], [1.0]]), b1=leaf([[0.0]]), w2=leaf([[1.0, 1.0]]))
        with pytest.raises(ShapeError):
            comp.ff_slice_forward(sl, leaf([[1.0]]))


class TestSimilarity:
    def test_empty_slice_set_gives_zeros(self):
        out = evaluate(comp.sim_forward([], leaf(np.ones((3, 2)))))
        np.testing.assert_array_equal(out, np.zeros((3, 3)))

    def test_single_slice_outer_product(self):
        sl = comp.SimSlice(wq=leaf([[1.0]]), wk=leaf([[1.0]]))
        out = evaluate(comp.sim_forward([sl], leaf([[1.0], [2.0]])))
        np.testing.assert_array_equal(out, [[1.0, 2.0], [2.0, 4.0]])

    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_slice_sum_matches_full(self, m):
        rng = Rng(202 + m)
        head = comp.make_head(rng.child("h"), hidden=4, key_dim=4, value_dim=4, m_sim=m, m_value=1)
        x = leaf(rng.uniform(5, 4, -1, 1))
        got = evaluate(comp.sim_forward(head.sim_slices, x))
        wq = np.hstack([s.wq.value for s in head.sim_slices])
        wk = np.hstack([s.wk.value for s in head.sim_slices])
        want = oracles.dense_sim(x.value, wq, wk)
        assert np.abs(got - want).max() < 1e-10


class TestAttentionHead:
    def test_all_sim_dropped_is_value_mean_pooling(self):
        # Values before projection are [[1], [3]]; with the similarity branch
        # gone the attention weights are uniform, so every row averages to 2.
        head = comp.AttentionHead(
            sim_slices=[comp.SimSlice(wq=leaf([[1.0]]), wk=leaf([[1.0]]))],
            value_slices=[comp.ValueSlice(wv=leaf([[1.0]]), wo=leaf([[1.0]]))],
        )
        x = leaf([[1.0], [3.0]])
        out = evaluate(comp.head_forward(head, x, sim_scale=1.0, sim_gates=[0.0]))
        np.testing.assert_allclose(out, [[2.0], [2.0]])

    def test_single_position_softmax_is_identity(self):
        rng = Rng(31)
        head = comp.make_head(rng, hidden=3, key_dim=2, value_dim=2, m_sim=1, m_value=1)
        x = leaf(rng.uniform(1, 3, -1, 1))
        out = evaluate(comp.head_forward(head, x, sim_scale=1.0))
        vs = head.value_slices[0]
        want = (x.value @ vs.wv.value) @ vs.wo.value
        np.testing.assert_allclose(out, want, atol=1e-12)

    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_value_slice_sum_matches_full(self, m):
        rng = Rng(404 + m)
        head = comp.make_head(rng.child("h"), hidden=4, key_dim=4, value_dim=4, m_sim=1, m_value=m)
        x = leaf(rng.uniform(6, 4, -1, 1))
        scale = 1.0 / np.sqrt(4)
        got = evaluate(comp.head_forward(head, x, sim_scale=scale))
        wq = head.sim_slices[0].wq.value
        wk = head.sim_slices[0].wk.value
        wv = np.hstack([s.wv.value for s in head.value_slices])
        wo = np.vstack([s.wo.value for s in head.value_slices])
        want = oracles.dense_single_head(x.value, wq, wk, wv, wo, scale)
        assert np.abs(got - want).max() < 1e-10

    def test_retained_head_without_values_is_invalid(self):
        rng = Rng(5)
        head = comp.make_head(rng, hidden=2, key_dim=2, value_dim=2, m_sim=1, m_value=2)
        with pytest.raises(InvalidArchitectureError):
            comp.head_forward(head, leaf(rng.uniform(3, 2)), sim_scale=1.0,
                              value_gates=[0.0, 0.0], check_values_retained=True)


class TestMultiHead:
    def test_single_head_equals_head_forward(self):
        rng = Rng(51)
        head = comp.make_head(rng.child("h"), hidden=4, key_dim=2, value_dim=2, m_sim=1, m_value=1)
        x = leaf(rng.uniform(4, 4, -1, 1))
        a = evaluate(comp.multihead_forward([head], x, sim_scale=0.5))
        b = evaluate(comp.head_forward(head, x, sim_scale=0.5))
        np.testing.assert_array_equal(a, b)

    def test_zero_retained_heads_gives_zeros(self):
        rng = Rng(52)
        head = comp.make_head(rng, hidden=4, key_dim=2, value_dim=2, m_sim=1, m_value=1)
        x = leaf(rng.uniform(4, 4, -1, 1))
        out = evaluate(comp.multihead_forward([head], x, sim_scale=0.5, head_gates=[0.0]))
        np.testing.assert_array_equal(out, np.zeros((4, 4)))

    def test_sum_form_matches_concat_projection(self):
        rng = Rng(53)
        h, dk, dv, num_heads = 4, 2, 2, 2
        heads = [
            comp.make_head(rng.child(f"h{i}"), hidden=h, key_dim=dk, value_dim=dv,
                           m_sim=1, m_value=1)
            for i in range(num_heads)
        ]
        x = leaf(rng.uniform(6, h, -1, 1))
        scale = 1.0 / np.sqrt(dk)
        got = evaluate(comp.multihead_forward(heads, x, sim_scale=scale))
        head_weights = [
            (hd.sim_slices[0].wq.value, hd.sim_slices[0].wk.value, hd.value_slices[0].wv.value)
            for hd in heads
        ]
        wo_full = np.vstack([hd.value_slices[0].wo.value for hd in heads])
        want = oracles.dense_multihead_concat(x.value, head_weights, wo_full, scale)
        assert np.abs(got - want).max() < 1e-10

    def test_mixed_value_dims_rejected(self):
        rng = Rng(54)
        h1 = comp.make_head(rng.child("a"), hidden=4, key_dim=2, value_dim=2, m_sim=1, m_value=1)
        h2 = comp.make_head(rng.child("b"), hidden=4, key_dim=2, value_dim=4, m_sim=1, m_value=1)
        with pytest.raises(ShapeError):
            comp.multihead_forward([h1, h2], leaf(rng.uniform(3, 4)), sim_scale=1.0)


class TestLayerNorm:
    def test_zero_mean_unit_variance_input_unchanged(self):
        ln = comp.make_layer_norm(2)
        out = evaluate(comp.layer_norm_forward(ln, leaf([[1.0, -1.0]]), mean_gate=1.0))
        np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-6)

    def test_mean_gate_off_scalar_case(self):
        # Row [3, 4] without mean subtraction: sigma = sqrt(12.5).
        ln = comp.make_layer_norm(2)
        out = evaluate(comp.layer_norm_forward(ln, leaf([[3.0, 4.0]]), mean_gate=0.0))
        np.testing.assert_allclose(out, [[0.8485281, 1.1313708]], atol=1e-6)

    def test_constant_row_returns_beta(self):
        ln = comp.make_layer_norm(3)
        ln.beta.value[:] = [[0.1, 0.2, 0.3]]
        out = evaluate(comp.layer_norm_forward(ln, leaf([[5.0, 5.0, 5.0]]), mean_gate=1.0))
        np.testing.assert_allclose(out, [[0.1, 0.2, 0.3]], atol=1e-5)

    def test_output_rows_centered_when_mean_on(self):
        rng = Rng(61)
        ln = comp.make_layer_norm(8)
        x = leaf(rng.uniform(5, 8, -2, 2))
        out = evaluate(comp.layer_norm_forward(ln, x, mean_gate=1.0))
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)

    def test_matches_oracle_fractional_gate(self):
        rng = Rng(62)
        ln = comp.make_layer_norm(6)
        ln.alpha.value[:] = rng.uniform(1, 6, 0.5, 1.5)
        ln.beta.value[:] = rng.uniform(1, 6, -0.5, 0.5)
        x = leaf(rng.uniform(4, 6, -2, 2))
        gate = 0.37
        mu = gate * x.value.mean(axis=1, keepdims=True)
        centered = x.value - mu
        sigma = np.sqrt((centered**2).mean(axis=1, keepdims=True) + ln.eps)
        want = ln.alpha.value * centered / sigma + ln.beta.value
        got = evaluate(comp.layer_norm_forward(ln, x, mean_gate=gate))
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestGradientsFlow:
    def test_all_component_weights_differentiable(self):
        rng = Rng(71)
        h = 4
        stack = comp.make_ff_stack(rng.child("ff"), hidden=h, ff_dim=8, m=2)
        head = comp.make_head(rng.child("head"), hidden=h, key_dim=2, value_dim=2, m_sim=2, m_value=2)
        ln = comp.make_layer_norm(h)
        x = leaf(rng.uniform(3, h, -1, 1))
        probe = grad.constant(rng.uniform(3, h, -1, 1))

        def build():
            y = comp.head_forward(head, x, sim_scale=1.0 / np.sqrt(2))
            y = comp.layer_norm_forward(ln, grad.add(x, y), mean_gate=1.0)
            y = comp.ff_stack_forward(stack, y)
            return grad.sum_all(grad.mul(y, probe))

        targets = [stack.slices[0].w1, stack.slices[1].w2, stack.b2,
                   head.sim_slices[0].wq, head.sim_slices[1].wk,
                   head.value_slices[0].wv, head.value_slices[1].wo,
                   ln.alpha, ln.beta]
        for t in targets:
            report = finite_difference_check(build, t, step=1e-5, tolerance=1e-5)
            assert report.passed, f"{t.name}: {report}"
