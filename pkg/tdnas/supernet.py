# tdnas/supernet.py
"""
Weight-sharing super-network over per-layer (left offset, right offset,
bottleneck dim) choices, and the standalone networks cut out of it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError, StateError
from .layer import (
    FactoredLayer,
    KernelCache,
    LayerChoice,
    StandaloneLayer,
    extract_layer,
    factored_backward,
    factored_forward,
    layer_forward_onehot,
    param_count_for,
    semi_orthogonal_step,
)
from .numeric import Rng, STREAM_INIT

GROUP_TAGS = ("left", "right", "dim")
SIMPLEX_TOL = 1e-9

PAPER_DIM_CHOICES = (25, 50, 80, 100, 120, 160, 200, 240)


@dataclass(frozen=True)
class SearchSpaceSpec:
    num_layers: int = 2
    input_dim: int = 8
    hidden_dim: int = 8
    num_classes: int = 4
    d_left: int = 6
    d_right: int = 6
    dim_choices: Tuple[int, ...] = (2, 4, 8, 12)
    search_context: bool = True
    search_dims: bool = True
    default_left: int = 1
    default_right: int = 1
    default_dim: Optional[int] = None
    pinned: Tuple[LayerChoice, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dim_choices)
        object.__setattr__(self, "dim_choices", dims)
        object.__setattr__(self, "pinned", tuple(self.pinned))
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"dim_choices must be positive, got {dims}")
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ValueError(f"dim_choices must be strictly ascending, got {dims}")
        if self.d_left < 0 or self.d_right < 0:
            raise ValueError("maximum offsets must be >= 0")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if min(self.input_dim, self.hidden_dim, self.num_classes) < 1:
            raise ValueError("input_dim, hidden_dim and num_classes must be >= 1")
        if not (self.search_context or self.search_dims):
            raise ValueError("at least one attribute group must be searched")
        if self.default_dim is not None and self.default_dim not in dims:
            raise ValueError(f"default_dim {self.default_dim} is not one of {dims}")
        if self.pinned and len(self.pinned) != self.num_layers:
            raise ValueError(f"pinned has {len(self.pinned)} entries for {self.num_layers} layers")

    @property
    def n_max(self) -> int:
        return self.dim_choices[-1]

    def layer_dims(self, layer: int) -> Tuple[int, int]:
        in_dim = self.input_dim if layer == 0 else self.hidden_dim
        return in_dim, self.hidden_dim

    def classifier_in_dim(self) -> int:
        return self.hidden_dim if self.num_layers > 0 else self.input_dim

    def default_choice(self, layer: int) -> LayerChoice:
        if self.pinned:
            return self.pinned[layer]
        dim_index = (
            len(self.dim_choices) - 1
            if self.default_dim is None
            else self.dim_choices.index(self.default_dim)
        )
        return LayerChoice(
            min(self.default_left, self.d_left),
            min(self.default_right, self.d_right),
            dim_index,
        )

    def searched(self, tag: str) -> bool:
        return self.search_dims if tag == "dim" else self.search_context

    def group_size(self, tag: str) -> int:
        return {"left": self.d_left + 1, "right": self.d_right + 1, "dim": len(self.dim_choices)}[tag]

    def searched_tags(self) -> Tuple[str, ...]:
        return tuple(t for t in GROUP_TAGS if self.searched(t))


@dataclass(frozen=True, order=True)
class CandidateArchitecture:
    choices: Tuple[LayerChoice, ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))

    def __len__(self) -> int:
        return len(self.choices)

    def __iter__(self) -> Iterator[LayerChoice]:
        return iter(self.choices)

    def __getitem__(self, layer: int) -> LayerChoice:
        return self.choices[layer]

    def validate(self, spec: SearchSpaceSpec) -> None:
        if len(self.choices) != spec.num_layers:
            raise ValueError(f"candidate has {len(self.choices)} layers, space has {spec.num_layers}")
        for l, ch in enumerate(self.choices):
            if not (0 <= ch.left <= spec.d_left):
                raise ValueError(f"layer {l + 1}: left offset {ch.left} outside 0..{spec.d_left}")
            if not (0 <= ch.right <= spec.d_right):
                raise ValueError(f"layer {l + 1}: right offset {ch.right} outside 0..{spec.d_right}")
            if not (0 <= ch.dim_index < len(spec.dim_choices)):
                raise ValueError(f"layer {l + 1}: dim index {ch.dim_index} out of range")


def choice_index(choice: LayerChoice, tag: str) -> int:
    return {"left": choice.left, "right": choice.right, "dim": choice.dim_index}[tag]


@dataclass
class ArchitectureWeights:
    """log alpha arrays: log_alpha[l][tag] for every searched (layer, tag)."""

    log_alpha: List[Dict[str, np.ndarray]]

    @classmethod
    def zeros(cls, spec: SearchSpaceSpec) -> "ArchitectureWeights":
        return cls(
            [
                {tag: np.zeros(spec.group_size(tag)) for tag in spec.searched_tags()}
                for _ in range(spec.num_layers)
            ]
        )

    def groups(self) -> Iterator[Tuple[int, str, np.ndarray]]:
        for l, groups in enumerate(self.log_alpha):
            for tag in GROUP_TAGS:
                if tag in groups:
                    yield l, tag, groups[tag]

    def copy(self) -> "ArchitectureWeights":
        return ArchitectureWeights([{t: a.copy() for t, a in g.items()} for g in self.log_alpha])

    def check(self, spec: SearchSpaceSpec) -> None:
        if len(self.log_alpha) != spec.num_layers:
            raise ValueError(f"weights cover {len(self.log_alpha)} layers, space has {spec.num_layers}")
        for l, groups in enumerate(self.log_alpha):
            if set(groups) != set(spec.searched_tags()):
                raise ValueError(f"layer {l + 1}: weight groups {sorted(groups)} do not match the space")
            for tag, arr in groups.items():
                if arr.shape != (spec.group_size(tag),):
                    raise ShapeError(f"layer {l + 1} {tag}: shape {arr.shape}, expected ({spec.group_size(tag)},)")
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"layer {l + 1} {tag}: non-finite log alpha")

    def argmax_choice(self, spec: SearchSpaceSpec, layer: int) -> LayerChoice:
        """Current per-group argmax; lowest index wins ties, defaults fill unsearched groups."""
        default = spec.default_choice(layer)
        picked = {tag: choice_index(default, tag) for tag in GROUP_TAGS}
        for tag, arr in self.log_alpha[layer].items():
            picked[tag] = int(np.argmax(arr))
        return LayerChoice(picked["left"], picked["right"], picked["dim"])


@dataclass
class GateVector:
    left: np.ndarray
    right: np.ndarray
    dim: np.ndarray


def onehot(size: int, index: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def _check_simplex(lam, size: int, name: str) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (size,):
        raise ShapeError(f"{name} weights have shape {lam.shape}, expected ({size},)")
    if np.any(lam < -SIMPLEX_TOL) or abs(lam.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{name} weights are not on the simplex: {lam}")
    return lam


def gates_from_lambda(
    lam_left: Optional[np.ndarray],
    lam_right: Optional[np.ndarray],
    lam_dim: Optional[np.ndarray],
    spec: SearchSpaceSpec,
    layer: int = 0,
) -> GateVector:
    """
    Context gates: g_0 = 1, g_c = lambda_c. Dim gate: g_k = sum of lambda_i over
    choices wider than k. Unsearched groups use the one-hot default choice.
    """
    default = spec.default_choice(layer)
    if lam_left is None:
        lam_left = onehot(spec.d_left + 1, default.left)
    if lam_right is None:
        lam_right = onehot(spec.d_right + 1, default.right)
    if lam_dim is None:
        lam_dim = onehot(len(spec.dim_choices), default.dim_index)

    lam_left = _check_simplex(lam_left, spec.d_left + 1, "left")
    lam_right = _check_simplex(lam_right, spec.d_right + 1, "right")
    lam_dim = _check_simplex(lam_dim, len(spec.dim_choices), "dim")

    g_left = lam_left.copy()
    g_left[0] = 1.0
    g_right = lam_right.copy()
    g_right[0] = 1.0
    g_dim = np.zeros(spec.n_max)
    for lam, n in zip(lam_dim, spec.dim_choices):
        g_dim[:n] += lam
    return GateVector(np.clip(g_left, 0.0, 1.0), np.clip(g_right, 0.0, 1.0), np.clip(g_dim, 0.0, 1.0))


def gates_for_candidate(spec: SearchSpaceSpec, cand: CandidateArchitecture) -> List[GateVector]:
    return [
        gates_from_lambda(
            onehot(spec.d_left + 1, ch.left),
            onehot(spec.d_right + 1, ch.right),
            onehot(len(spec.dim_choices), ch.dim_index),
            spec,
            l,
        )
        for l, ch in enumerate(cand)
    ]


def lambda_sensitivities(gate_grad: GateVector, spec: SearchSpaceSpec) -> Dict[str, np.ndarray]:
    """Chain gate gradients into dL/dlambda for each group (the per-choice v_i)."""
    v_left = gate_grad.left.copy()
    v_left[0] = 0.0
    v_right = gate_grad.right.copy()
    v_right[0] = 0.0
    cum = np.cumsum(gate_grad.dim)
    v_dim = np.array([cum[n - 1] for n in spec.dim_choices])
    return {"left": v_left, "right": v_right, "dim": v_dim}


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    gates: List[GateVector]
    layers: List[KernelCache]
    features: np.ndarray


@dataclass
class SuperNetwork:
    spec: SearchSpaceSpec
    layers: List[FactoredLayer]
    classifier_w: np.ndarray
    classifier_b: np.ndarray
    arch: ArchitectureWeights

    @classmethod
    def initialize(cls, spec: SearchSpaceSpec, rng: Rng) -> "SuperNetwork":
        layers = []
        for l in range(spec.num_layers):
            in_dim, out_dim = spec.layer_dims(l)
            layers.append(
                FactoredLayer.initialize(
                    in_dim, out_dim, spec.d_left, spec.d_right, spec.n_max, rng.spawn("layer", l)
                )
            )
        h = spec.classifier_in_dim()
        w = rng.spawn("classifier").normal((spec.num_classes, h)) / np.sqrt(h)
        return cls(spec, layers, w, np.zeros(spec.num_classes), ArchitectureWeights.zeros(spec))

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for l, layer in enumerate(self.layers):
            params[f"layers.{l}.linear"] = layer.linear_blocks
            params[f"layers.{l}.affine"] = layer.affine_blocks
            params[f"layers.{l}.bias"] = layer.bias
        params["classifier.weight"] = self.classifier_w
        params["classifier.bias"] = self.classifier_b
        return params

    def arch_parameters(self) -> Dict[str, np.ndarray]:
        return {f"arch.{l}.{tag}": arr for l, tag, arr in self.arch.groups()}

    @classmethod
    def from_parameters(
        cls, spec: SearchSpaceSpec, params: Dict[str, np.ndarray], arch: ArchitectureWeights
    ) -> "SuperNetwork":
        layers = [
            FactoredLayer(
                params[f"layers.{l}.linear"], params[f"layers.{l}.affine"], params[f"layers.{l}.bias"]
            )
            for l in range(spec.num_layers)
        ]
        arch.check(spec)
        return cls(spec, layers, params["classifier.weight"], params["classifier.bias"], arch)

    def apply_semi_orthogonal(self) -> None:
        self.layers = [semi_orthogonal_step(layer) for layer in self.layers]


@dataclass
class SupernetGrads:
    params: Dict[str, np.ndarray]
    gates: List[GateVector]


def supernet_forward(
    net: SuperNetwork, gates: Sequence[GateVector], x: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    """Gated mixture forward; returns per-frame logits and the retained intermediates."""
    spec = net.spec
    if len(gates) != len(net.layers):
        raise ShapeError(f"{len(gates)} gate vectors for {len(net.layers)} layers")
    if x.shape[-1] != spec.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input dim {spec.input_dim}")

    h = x
    caches = []
    for layer, g in zip(net.layers, gates):
        if g.left.shape != (layer.d_left + 1,) or g.right.shape != (layer.d_right + 1,) or g.dim.shape != (layer.n_max,):
            raise ShapeError(
                f"gate shapes {g.left.shape}/{g.right.shape}/{g.dim.shape} do not match layer "
                f"({layer.d_left + 1},)/({layer.d_right + 1},)/({layer.n_max},)"
            )
        linear, affine = layer.gated_blocks(g)
        h, cache = factored_forward(h, linear, affine, g.dim, layer.bias, layer.final)
        caches.append(cache)

    logits = h @ net.classifier_w.T + net.classifier_b
    return logits, ForwardCache(list(gates), caches, h)


def supernet_backward(
    net: SuperNetwork,
    gates: Sequence[GateVector],
    cache: Optional[ForwardCache],
    dlogits: np.ndarray,
) -> SupernetGrads:
    if cache is None or len(cache.layers) != len(net.layers):
        raise StateError("backward needs the intermediates of a forward pass on this network")
    if len(gates) != len(cache.gates) or any(a is not b for a, b in zip(gates, cache.gates)):
        raise StateError("gates differ from the ones used in the forward pass")

    feats = cache.features
    grads: Dict[str, np.ndarray] = {
        "classifier.weight": dlogits.reshape(-1, dlogits.shape[-1]).T @ feats.reshape(-1, feats.shape[-1]),
        "classifier.bias": dlogits.reshape(-1, dlogits.shape[-1]).sum(axis=0),
    }
    dh = dlogits @ net.classifier_w
    gate_grads: List[GateVector] = [None] * len(net.layers)  # type: ignore[list-item]
    for l in reversed(range(len(net.layers))):
        kg = factored_backward(cache.layers[l], dh)
        grads[f"layers.{l}.linear"] = np.stack(kg.linear)
        grads[f"layers.{l}.affine"] = np.stack(kg.affine)
        grads[f"layers.{l}.bias"] = kg.bias
        gate_grads[l] = GateVector(kg.linear_gates, kg.affine_gates, kg.dim_gate)
        dh = kg.h
    return SupernetGrads(grads, gate_grads)


def supernet_forward_onehot(net: SuperNetwork, cand: CandidateArchitecture, x: np.ndarray) -> np.ndarray:
    """Single-path forward through the shared parameters (no gating arithmetic)."""
    cand.validate(net.spec)
    h = x
    for layer, ch in zip(net.layers, cand):
        h = layer_forward_onehot(layer, ch, net.spec.dim_choices, h)
    return h @ net.classifier_w.T + net.classifier_b


def sample_onehot_uniform(spec: SearchSpaceSpec, rng: Rng) -> CandidateArchitecture:
    choices = []
    for l in range(spec.num_layers):
        default = spec.default_choice(l)
        left = rng.integer(spec.d_left + 1) if spec.search_context else default.left
        right = rng.integer(spec.d_right + 1) if spec.search_context else default.right
        dim = rng.integer(len(spec.dim_choices)) if spec.search_dims else default.dim_index
        choices.append(LayerChoice(left, right, dim))
    return CandidateArchitecture(tuple(choices))


# ---------------------------------------------------------------------------
# Standalone candidates
# ---------------------------------------------------------------------------

@dataclass
class StandaloneCache:
    layers: List[KernelCache]
    features: np.ndarray


@dataclass
class StandaloneNetwork:
    spec: SearchSpaceSpec
    candidate: CandidateArchitecture
    layers: List[StandaloneLayer]
    classifier_w: np.ndarray
    classifier_b: np.ndarray

    @classmethod
    def initialize(cls, spec: SearchSpaceSpec, cand: CandidateArchitecture, rng: Rng) -> "StandaloneNetwork":
        cand.validate(spec)
        layers = []
        for l, ch in enumerate(cand):
            in_dim, out_dim = spec.layer_dims(l)
            layers.append(StandaloneLayer.initialize(in_dim, out_dim, ch, spec.dim_choices, rng.spawn("layer", l)))
        h = spec.classifier_in_dim()
        w = rng.spawn("classifier").normal((spec.num_classes, h)) / np.sqrt(h)
        return cls(spec, cand, layers, w, np.zeros(spec.num_classes))

    def forward_with_cache(self, x: np.ndarray) -> Tuple[np.ndarray, StandaloneCache]:
        h = x
        caches = []
        for layer in self.layers:
            h, c = layer.forward_with_cache(h)
            caches.append(c)
        return h @ self.classifier_w.T + self.classifier_b, StandaloneCache(caches, h)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for layer in self.layers:
            h = layer.forward(h)
        return h @ self.classifier_w.T + self.classifier_b

    def backward(self, cache: Optional[StandaloneCache], dlogits: np.ndarray) -> Dict[str, np.ndarray]:
        if cache is None:
            raise StateError("backward needs the intermediates of a forward pass")
        feats = cache.features
        grads: Dict[str, np.ndarray] = {
            "classifier.weight": dlogits.reshape(-1, dlogits.shape[-1]).T @ feats.reshape(-1, feats.shape[-1]),
            "classifier.bias": dlogits.reshape(-1, dlogits.shape[-1]).sum(axis=0),
        }
        dh = dlogits @ self.classifier_w
        for l in reversed(range(len(self.layers))):
            kg = factored_backward(cache.layers[l], dh)
            for k, g in enumerate(kg.linear):
                grads[f"layers.{l}.linear.{k}"] = g
            for k, g in enumerate(kg.affine):
                grads[f"layers.{l}.affine.{k}"] = g
            grads[f"layers.{l}.bias"] = kg.bias
            dh = kg.h
        return grads

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for l, layer in enumerate(self.layers):
            for k, (_, B) in enumerate(layer.linear):
                params[f"layers.{l}.linear.{k}"] = B
            for k, (_, A) in enumerate(layer.affine):
                params[f"layers.{l}.affine.{k}"] = A
            params[f"layers.{l}.bias"] = layer.bias
        params["classifier.weight"] = self.classifier_w
        params["classifier.bias"] = self.classifier_b
        return params

    @classmethod
    def from_parameters(
        cls, spec: SearchSpaceSpec, cand: CandidateArchitecture, params: Dict[str, np.ndarray]
    ) -> "StandaloneNetwork":
        shell = cls.initialize(spec, cand, Rng(0, STREAM_INIT))
        layers = []
        for l, layer in enumerate(shell.layers):
            linear = [(off, params[f"layers.{l}.linear.{k}"]) for k, (off, _) in enumerate(layer.linear)]
            affine = [(off, params[f"layers.{l}.affine.{k}"]) for k, (off, _) in enumerate(layer.affine)]
            layers.append(replace(layer, linear=linear, affine=affine, bias=params[f"layers.{l}.bias"]))
        return cls(spec, cand, layers, params["classifier.weight"], params["classifier.bias"])

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.layers) + self.classifier_w.size + self.classifier_b.size

    def apply_semi_orthogonal(self) -> None:
        self.layers = [layer.semi_orthogonal_step() for layer in self.layers]


def extract_network(net: SuperNetwork, cand: CandidateArchitecture) -> StandaloneNetwork:
    cand.validate(net.spec)
    layers = [extract_layer(layer, ch, net.spec.dim_choices) for layer, ch in zip(net.layers, cand)]
    return StandaloneNetwork(net.spec, cand, layers, net.classifier_w.copy(), net.classifier_b.copy())


def network_param_count(cand: CandidateArchitecture, spec: SearchSpaceSpec) -> int:
    cand.validate(spec)
    total = spec.num_classes * spec.classifier_in_dim() + spec.num_classes
    for l, ch in enumerate(cand):
        in_dim, out_dim = spec.layer_dims(l)
        total += param_count_for(in_dim, out_dim, ch, spec.dim_choices)
    return total
