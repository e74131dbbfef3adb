# tests/test_supernet.py
import itertools
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tdnas.errors import StateError
from tdnas.layer import LayerChoice, candidate_param_count, extract_layer
from tdnas.numeric import Rng, central_difference, stable_softmax
from tdnas.supernet import (
    CandidateArchitecture,
    GateVector,
    SearchSpaceSpec,
    SuperNetwork,
    extract_network,
    gates_for_candidate,
    gates_from_lambda,
    network_param_count,
    onehot,
    sample_onehot_uniform,
    supernet_backward,
    supernet_forward,
    supernet_forward_onehot,
)

from .conftest import gradients_agree, random_arch


def softmax_gates(net):
    out = []
    for l, groups in enumerate(net.arch.log_alpha):
        lam = {tag: stable_softmax(a) for tag, a in groups.items()}
        out.append(gates_from_lambda(lam.get("left"), lam.get("right"), lam.get("dim"), net.spec, l))
    return out


def random_candidate(spec, rng):
    return sample_onehot_uniform(spec, rng)


# -- gates ------------------------------------------------------------------

def test_gates_from_onehot_context():
    spec = SearchSpaceSpec(num_layers=1, d_left=3, d_right=1, dim_choices=(2, 4))
    g = gates_from_lambda(onehot(4, 2), onehot(2, 0), onehot(2, 1), spec)
    assert_array_equal(g.left, [1.0, 0.0, 1.0, 0.0])
    assert_array_equal(g.right, [1.0, 0.0])


def test_gates_from_lambda_examples():
    spec = SearchSpaceSpec(num_layers=1, d_left=2, d_right=2, dim_choices=(2, 4))
    g = gates_from_lambda(np.array([0.2, 0.3, 0.5]), np.array([1.0, 0.0, 0.0]), np.array([0.5, 0.5]), spec)
    assert_allclose(g.left, [1.0, 0.3, 0.5])
    assert_array_equal(g.dim, [1.0, 1.0, 0.5, 0.5])


def test_dim_gate_is_non_increasing_and_bounded():
    spec = SearchSpaceSpec(num_layers=1, dim_choices=(1, 3, 4, 7))
    lam = stable_softmax(Rng(0, 0).normal(4))
    g = gates_from_lambda(None, None, lam, spec)
    assert np.all(np.diff(g.dim) <= 0)
    assert np.all((g.dim >= 0) & (g.dim <= 1))
    assert g.dim[0] == pytest.approx(1.0)


def test_unsearched_groups_take_the_default():
    spec = SearchSpaceSpec(num_layers=1, d_left=2, d_right=2, dim_choices=(2, 4), search_context=False,
                           default_left=1, default_right=2)
    g = gates_from_lambda(None, None, np.array([1.0, 0.0]), spec)
    assert_array_equal(g.left, [1.0, 1.0, 0.0])
    assert_array_equal(g.right, [1.0, 0.0, 1.0])


def test_gates_reject_non_simplex():
    spec = SearchSpaceSpec(num_layers=1, d_left=1, d_right=1, dim_choices=(2,))
    with pytest.raises(ValueError):
        gates_from_lambda(np.array([0.6, 0.6]), None, None, spec)


def test_shift_invariance_of_gates_and_forward(tiny_net, tiny_x):
    before, _ = supernet_forward(tiny_net, softmax_gates(tiny_net), tiny_x)
    for groups in tiny_net.arch.log_alpha:
        groups["left"] = groups["left"] + 17.0
    after, _ = supernet_forward(tiny_net, softmax_gates(tiny_net), tiny_x)
    assert np.max(np.abs(before - after)) < 1e-12


# -- forward ----------------------------------------------------------------

def test_onehot_gates_match_extracted_network(tiny_net, tiny_x):
    rng = Rng(10, 0)
    for _ in range(100):
        cand = random_candidate(tiny_net.spec, rng)
        gated, _ = supernet_forward(tiny_net, gates_for_candidate(tiny_net.spec, cand), tiny_x)
        extracted = extract_network(tiny_net, cand).forward(tiny_x)
        assert np.max(np.abs(gated - extracted)) < 1e-12
        assert_array_equal(supernet_forward_onehot(tiny_net, cand, tiny_x), extracted)


def test_gated_forward_equals_naive_candidate_sum():
    spec = SearchSpaceSpec(num_layers=2, input_dim=3, hidden_dim=4, num_classes=3, d_left=2, d_right=2,
                           dim_choices=(2, 4))
    net = SuperNetwork.initialize(spec, Rng(3, 1))
    net.arch = random_arch(spec, Rng(3, 2))
    x = Rng(3, 3).normal((2, 6, 3))

    logits, _ = supernet_forward(net, softmax_gates(net), x)

    h = x
    for l, layer in enumerate(net.layers):
        lam = {tag: stable_softmax(a) for tag, a in net.arch.log_alpha[l].items()}
        pre = 0.0
        for c, r, i in itertools.product(range(3), range(3), range(2)):
            weight = lam["left"][c] * lam["right"][r] * lam["dim"][i]
            standalone = replace(extract_layer(layer, LayerChoice(c, r, i), spec.dim_choices), final=True)
            pre = pre + weight * standalone.forward(h)
        h = np.maximum(pre, 0.0)
    naive = h @ net.classifier_w.T + net.classifier_b
    assert np.max(np.abs(logits - naive)) < 1e-10


def test_zero_input_gives_zero_logits(tiny_spec):
    net = SuperNetwork.initialize(tiny_spec, Rng(0, 1))
    logits, _ = supernet_forward(net, softmax_gates(net), np.zeros((1, 4, 3)))
    assert_array_equal(logits, np.zeros((1, 4, 3)))


def test_forward_rejects_wrong_gate_shapes(tiny_net, tiny_x):
    gates = softmax_gates(tiny_net)
    gates[0] = GateVector(gates[0].left[:2], gates[0].right, gates[0].dim)
    with pytest.raises(ValueError):
        supernet_forward(tiny_net, gates, tiny_x)


# -- backward ---------------------------------------------------------------

def _linear_loss(net, gates, x, R):
    logits, _ = supernet_forward(net, gates, x)
    return float(np.sum(logits * R))


def test_parameter_gradients_match_central_differences(tiny_net, tiny_x):
    gates = softmax_gates(tiny_net)
    R = Rng(20, 0).normal((2, 5, 3))
    _, cache = supernet_forward(tiny_net, gates, tiny_x)
    grads = supernet_backward(tiny_net, gates, cache, R).params

    for name, param in tiny_net.parameters().items():
        original = param.copy()

        def f(v, param=param):
            param[...] = v.reshape(param.shape)
            return _linear_loss(tiny_net, gates, tiny_x, R)

        for i in range(param.size):
            numeric = central_difference(f, original, i, 1e-6)
            param[...] = original
            assert gradients_agree(grads[name].reshape(-1)[i], numeric), (name, i)


def test_gate_gradients_match_central_differences(tiny_net, tiny_x):
    gates = softmax_gates(tiny_net)
    R = Rng(21, 0).normal((2, 5, 3))
    _, cache = supernet_forward(tiny_net, gates, tiny_x)
    gate_grads = supernet_backward(tiny_net, gates, cache, R).gates

    for l in range(len(gates)):
        for field in ("left", "right", "dim"):
            base = getattr(gates[l], field)
            analytic = getattr(gate_grads[l], field)

            def f(v, l=l, field=field):
                perturbed = list(gates)
                perturbed[l] = replace(gates[l], **{field: v})
                return _linear_loss(tiny_net, perturbed, tiny_x, R)

            for i in range(base.size):
                numeric = central_difference(f, base, i, 1e-6)
                assert gradients_agree(analytic[i], numeric), (l, field, i)


def test_zero_upstream_gradient_gives_zero_gradients(tiny_net, tiny_x):
    gates = softmax_gates(tiny_net)
    logits, cache = supernet_forward(tiny_net, gates, tiny_x)
    grads = supernet_backward(tiny_net, gates, cache, np.zeros_like(logits))
    for g in grads.params.values():
        assert not np.any(g)


def test_unused_block_receives_no_gradient(tiny_net, tiny_x):
    cand = CandidateArchitecture((LayerChoice(1, 0, 2), LayerChoice(0, 2, 1)))
    gates = gates_for_candidate(tiny_net.spec, cand)
    logits, cache = supernet_forward(tiny_net, gates, tiny_x)
    grads = supernet_backward(tiny_net, gates, cache, np.ones_like(logits)).params
    assert not np.any(grads["layers.0.linear"][2])
    assert not np.any(grads["layers.0.affine"][1:])
    assert not np.any(grads["layers.1.linear"][1:])


def test_backward_requires_forward_state(tiny_net, tiny_x):
    gates = softmax_gates(tiny_net)
    logits, cache = supernet_forward(tiny_net, gates, tiny_x)
    with pytest.raises(StateError):
        supernet_backward(tiny_net, gates, None, np.ones_like(logits))
    with pytest.raises(StateError):
        supernet_backward(tiny_net, softmax_gates(tiny_net), cache, np.ones_like(logits))


# -- sampling and extraction ------------------------------------------------

def test_sampling_single_choice_space():
    spec = SearchSpaceSpec(num_layers=2, d_left=0, d_right=0, dim_choices=(2,))
    cand = sample_onehot_uniform(spec, Rng(0, 0))
    assert cand == CandidateArchitecture((LayerChoice(0, 0, 0), LayerChoice(0, 0, 0)))


def test_sampling_is_uniform_and_deterministic():
    spec = SearchSpaceSpec(num_layers=1, dim_choices=(1, 2, 3), search_context=False)
    rng = Rng(42, 0)
    counts = np.zeros(3)
    for _ in range(10**5):
        counts[sample_onehot_uniform(spec, rng)[0].dim_index] += 1
    assert np.all(np.abs(counts / 10**5 - 1 / 3) < 0.02)
    assert sample_onehot_uniform(spec, Rng(1, 2)) == sample_onehot_uniform(spec, Rng(1, 2))


def test_extracted_parameter_count(tiny_net):
    spec = tiny_net.spec
    for cand in [random_candidate(spec, Rng(s, 0)) for s in range(10)]:
        standalone = extract_network(tiny_net, cand)
        expected = sum(
            candidate_param_count(layer, ch, spec.dim_choices) for layer, ch in zip(tiny_net.layers, cand)
        ) + tiny_net.classifier_w.size + tiny_net.classifier_b.size
        assert standalone.param_count() == expected == network_param_count(cand, spec)


def test_extracting_twice_gives_identical_networks(tiny_net):
    cand = CandidateArchitecture((LayerChoice(2, 1, 0), LayerChoice(1, 1, 2)))
    a, b = extract_network(tiny_net, cand), extract_network(tiny_net, cand)
    for name, arr in a.parameters().items():
        assert_array_equal(arr, b.parameters()[name])


def test_extract_rejects_invalid_candidate(tiny_net):
    with pytest.raises(ValueError):
        extract_network(tiny_net, CandidateArchitecture((LayerChoice(3, 0, 0), LayerChoice(0, 0, 0))))


def test_network_param_count_edges():
    assert network_param_count(CandidateArchitecture(()), SearchSpaceSpec(num_layers=0, input_dim=3, num_classes=4)) == 16
    spec = SearchSpaceSpec(num_layers=1, dim_choices=(2, 4, 8))
    counts = [network_param_count(CandidateArchitecture((LayerChoice(1, 1, i),)), spec) for i in range(3)]
    assert counts == sorted(counts)
