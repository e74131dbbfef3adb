# tests/test_layer.py
import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tdnas.errors import DegenerateParameterError, ShapeError
from tdnas.layer import (
    FactoredLayer,
    LayerChoice,
    candidate_flop_count,
    candidate_param_count,
    extract_layer,
    layer_forward_onehot,
    semi_orthogonal_residual,
    semi_orthogonal_step,
    splice,
    splice_adjoint,
)
from tdnas.numeric import Rng

DIMS = (1, 2, 4)


def make_layer(seed=0, in_dim=3, out_dim=5, d_left=2, d_right=2, n_max=4, final=False):
    layer = FactoredLayer.initialize(in_dim, out_dim, d_left, d_right, n_max, Rng(seed, 9), final=final)
    layer.bias[:] = Rng(seed, 10).normal(out_dim) * 0.2
    return layer


def naive_candidate(layer, choice, dims, h):
    """Frame-by-frame reference of one candidate path."""
    n = dims[choice.dim_index]
    T = h.shape[0]
    clamp = lambda t: min(max(t, 0), T - 1)  # noqa: E731
    B0 = layer.linear_blocks[0][:n]
    z = np.zeros((T, n))
    for t in range(T):
        z[t] = B0 @ h[t]
        if choice.left > 0:
            z[t] += layer.linear_blocks[choice.left][:n] @ h[clamp(t - choice.left)]
    A0 = layer.affine_blocks[0][:, :n]
    y = np.zeros((T, layer.out_dim))
    for t in range(T):
        y[t] = A0 @ z[t] + layer.bias
        if choice.right > 0:
            y[t] += layer.affine_blocks[choice.right][:, :n] @ z[clamp(t + choice.right)]
    return y if layer.final else np.maximum(y, 0.0)


def test_splice_examples():
    h = np.arange(3.0).reshape(3, 1)
    assert_array_equal(splice(h, 0), h)
    assert_array_equal(splice(h, -1)[:, 0], [0.0, 0.0, 1.0])
    assert_array_equal(splice(h, 2)[:, 0], [2.0, 2.0, 2.0])


def test_splice_is_a_shift_away_from_edges():
    h = Rng(0, 0).normal((9, 2))
    out = splice(h, 3)
    for t in range(6):
        assert_array_equal(out[t], h[t + 3])


@pytest.mark.parametrize("offset", [-3, -1, 0, 2, 5])
def test_splice_adjoint_is_the_transpose(offset):
    h = Rng(1, 0).normal((2, 6, 3))
    g = Rng(2, 0).normal((2, 6, 3))
    lhs = np.sum(splice(h, offset) * g)
    rhs = np.sum(h * splice_adjoint(g, offset))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_onehot_forward_matches_naive_reference():
    layer = make_layer()
    h = Rng(3, 0).normal((7, 3))
    for i in range(len(DIMS)):
        choice = LayerChoice(1, 1, i)
        out = layer_forward_onehot(layer, choice, DIMS, h)
        assert np.max(np.abs(out - naive_candidate(layer, choice, DIMS, h))) < 1e-12


def test_full_dim_uses_full_matrices():
    layer = make_layer(seed=4)
    h = Rng(4, 1).normal((6, 3))
    choice = LayerChoice(2, 1, len(DIMS) - 1)
    assert_allclose(layer_forward_onehot(layer, choice, DIMS, h), naive_candidate(layer, choice, DIMS, h), atol=1e-12)


def test_zero_context_single_frame():
    layer = make_layer(seed=5)
    x = Rng(5, 1).normal((1, 3))
    out = layer_forward_onehot(layer, LayerChoice(0, 0, 2), DIMS, x)
    expected = np.maximum(layer.affine_blocks[0] @ layer.linear_blocks[0] @ x[0] + layer.bias, 0.0)
    assert_allclose(out[0], expected, atol=1e-12)


def test_final_layer_skips_relu():
    layer = make_layer(seed=6, final=True)
    h = Rng(6, 1).normal((5, 3))
    out = layer_forward_onehot(layer, LayerChoice(1, 2, 1), DIMS, h)
    assert np.any(out < 0)


def test_onehot_forward_rejects_wrong_input_dim():
    with pytest.raises(ShapeError):
        layer_forward_onehot(make_layer(), LayerChoice(0, 0, 0), DIMS, np.zeros((4, 2)))


def test_extracted_forward_is_bit_identical_for_every_choice():
    layer = make_layer(seed=7)
    h = Rng(7, 1).normal((2, 6, 3))
    for c, r, i in itertools.product(range(3), range(3), range(3)):
        choice = LayerChoice(c, r, i)
        standalone = extract_layer(layer, choice, DIMS)
        assert_array_equal(standalone.forward(h), layer_forward_onehot(layer, choice, DIMS, h))


def test_extracted_scalar_count_equals_candidate_param_count():
    layer = make_layer(seed=8)
    for c, r, i in itertools.product(range(3), range(3), range(3)):
        choice = LayerChoice(c, r, i)
        assert extract_layer(layer, choice, DIMS).param_count() == candidate_param_count(layer, choice, DIMS)


def test_candidate_param_count_hand_value():
    layer = make_layer(in_dim=4, out_dim=5, n_max=4)
    assert candidate_param_count(layer, LayerChoice(1, 1, 0), (3, 4)) == 59
    assert candidate_param_count(layer, LayerChoice(0, 0, 1), (3, 4)) == 4 * 4 + 5 * 4 + 5


def test_candidate_param_count_is_monotone():
    layer = make_layer(seed=9)
    counts = {
        (c, r, i): candidate_param_count(layer, LayerChoice(c, r, i), DIMS)
        for c, r, i in itertools.product(range(3), range(3), range(3))
    }
    for (c, r, i), n in counts.items():
        if i + 1 < 3:
            assert counts[(c, r, i + 1)] >= n
        assert counts[(min(c + 1, 2), r, i)] >= n
        assert counts[(c, min(r + 1, 2), i)] >= n


def test_flop_count_excludes_bias():
    layer = make_layer(seed=10)
    choice = LayerChoice(2, 0, 1)
    assert candidate_flop_count(layer, choice, DIMS) == candidate_param_count(layer, choice, DIMS) - layer.out_dim


def test_extract_rejects_out_of_range_choice():
    with pytest.raises(ValueError):
        extract_layer(make_layer(), LayerChoice(3, 0, 0), DIMS)
    with pytest.raises(ValueError):
        extract_layer(make_layer(), LayerChoice(0, 0, 3), DIMS)


def _layer_from_stacked(M, d_left, in_dim, out_dim=2):
    n = M.shape[0]
    blocks = M.reshape(n, d_left + 1, in_dim).transpose(1, 0, 2)
    return FactoredLayer(blocks.copy(), np.ones((1, out_dim, n)), np.zeros(out_dim))


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_semi_orthogonal_fixed_points(scale):
    M = scale * np.eye(2, 6)
    layer = _layer_from_stacked(M, d_left=1, in_dim=3)
    assert semi_orthogonal_residual(layer.stacked_linear()) == 0.0
    stepped = semi_orthogonal_step(layer)
    assert_array_equal(stepped.stacked_linear(), M)


def test_semi_orthogonal_step_keeps_block_layout():
    layer = make_layer(seed=11, d_left=2, in_dim=3, n_max=2)
    stepped = semi_orthogonal_step(layer)
    assert stepped.linear_blocks.shape == layer.linear_blocks.shape
    assert_array_equal(stepped.affine_blocks, layer.affine_blocks)
    assert_array_equal(stepped.bias, layer.bias)


def test_semi_orthogonal_converges_monotonically():
    for seed in range(100):
        layer = make_layer(seed=seed, in_dim=6, d_left=1, n_max=3)
        initial = semi_orthogonal_residual(layer.stacked_linear())
        previous = initial
        for _ in range(10):
            layer = semi_orthogonal_step(layer)
            current = semi_orthogonal_residual(layer.stacked_linear())
            assert current <= previous * (1 + 1e-9) + 1e-15
            previous = current
        assert previous < 1e-3 * initial


def test_semi_orthogonal_rejects_all_zero_blocks():
    layer = FactoredLayer(np.zeros((2, 3, 4)), np.ones((1, 2, 3)), np.zeros(2))
    with pytest.raises(DegenerateParameterError):
        semi_orthogonal_step(layer)


def test_factored_layer_validates_shapes():
    with pytest.raises(ShapeError):
        FactoredLayer(np.zeros((2, 3, 4)), np.zeros((1, 2, 5)), np.zeros(2))
    with pytest.raises(ValueError):
        FactoredLayer(np.full((1, 2, 2), np.nan), np.zeros((1, 2, 2)), np.zeros(2))
