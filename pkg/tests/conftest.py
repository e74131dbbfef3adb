# tests/conftest.py
from __future__ import annotations

import numpy as np
import pytest

from tdnas.generator import SyntheticTaskSpec, generate_dataset
from tdnas.numeric import Rng, STREAM_INIT, relative_error
from tdnas.supernet import ArchitectureWeights, SearchSpaceSpec, SuperNetwork


@pytest.fixture
def tiny_spec() -> SearchSpaceSpec:
    """2 layers, 3x3x3 choices per layer."""
    return SearchSpaceSpec(
        num_layers=2,
        input_dim=3,
        hidden_dim=4,
        num_classes=3,
        d_left=2,
        d_right=2,
        dim_choices=(1, 2, 3),
    )


def random_arch(spec: SearchSpaceSpec, rng: Rng, scale: float = 1.0) -> ArchitectureWeights:
    weights = ArchitectureWeights.zeros(spec)
    for groups in weights.log_alpha:
        for tag in groups:
            groups[tag] = scale * rng.normal(groups[tag].shape)
    return weights


@pytest.fixture
def tiny_net(tiny_spec) -> SuperNetwork:
    net = SuperNetwork.initialize(tiny_spec, Rng(1, STREAM_INIT))
    net.arch = random_arch(tiny_spec, Rng(2, 0))
    # non-zero biases so dead-ReLU patterns are not trivial
    for layer in net.layers:
        layer.bias[:] = Rng(3, 0).normal(layer.bias.shape) * 0.1
    return net


@pytest.fixture
def tiny_x() -> np.ndarray:
    return Rng(4, 0).normal((2, 5, 3))


@pytest.fixture
def tiny_labels() -> np.ndarray:
    return np.array([[0, 1, 2, 1, 0], [2, 2, 1, 0, 1]])


@pytest.fixture
def small_task() -> SyntheticTaskSpec:
    return SyntheticTaskSpec(
        kind="planted-context",
        num_sequences=24,
        frames=8,
        feature_dim=3,
        num_classes=3,
        planted_left=1,
        planted_right=1,
        seed=5,
    )


@pytest.fixture
def small_data(small_task):
    return generate_dataset(small_task)


def gradients_agree(analytic, numeric, rtol: float = 1e-5, atol: float = 1e-7) -> bool:
    """Relative agreement, with an absolute floor for entries that should be zero."""
    analytic, numeric = float(analytic), float(numeric)
    return abs(analytic - numeric) <= atol or relative_error(analytic, numeric) < rtol
