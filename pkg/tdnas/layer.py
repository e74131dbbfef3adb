# tdnas/layer.py
"""
Factored TDNN layer.

A layer is two stages around a bottleneck of width n:
  z_t = sum over linear blocks  g_c * B_c h_{t+off_c}        (left context, off <= 0)
  y_t = sum over affine blocks  g_r * A_r z~_{t+off_r} + b   (right context, off >= 0)
with z~ = dim_gate * z. The super-network and the extracted candidates share
one forward/backward kernel; they only differ in which blocks and gates they
hand to it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateParameterError, ShapeError
from .numeric import Rng, relu

# (splice offset, gate, weight matrix)
Block = Tuple[int, float, np.ndarray]


@dataclass(frozen=True, order=True)
class LayerChoice:
    left: int
    right: int
    dim_index: int


def splice(h: np.ndarray, offset: int) -> np.ndarray:
    """Frame t of the output is frame clamp(t + offset, 0, T-1) of h."""
    T = h.shape[-2]
    idx = np.clip(np.arange(T) + int(offset), 0, T - 1)
    return h[..., idx, :]


def splice_adjoint(g: np.ndarray, offset: int) -> np.ndarray:
    """Transpose of `splice`: scatter-add frame gradients back to their sources."""
    T = g.shape[-2]
    idx = np.clip(np.arange(T) + int(offset), 0, T - 1)
    moved = np.moveaxis(g, -2, 0)
    out = np.zeros_like(moved)
    np.add.at(out, idx, moved)
    return np.moveaxis(out, 0, -2)


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


@dataclass
class KernelCache:
    h: np.ndarray
    linear: List[Block]
    affine: List[Block]
    dim_gate: Optional[np.ndarray]
    final: bool
    inputs: List[np.ndarray]
    linear_terms: List[np.ndarray]
    z: np.ndarray
    zt: np.ndarray
    shifted: List[np.ndarray]
    affine_terms: List[np.ndarray]
    y: np.ndarray


@dataclass
class KernelGrads:
    linear: List[np.ndarray]
    linear_gates: np.ndarray
    affine: List[np.ndarray]
    affine_gates: np.ndarray
    dim_gate: Optional[np.ndarray]
    bias: np.ndarray
    h: np.ndarray


def factored_forward(
    h: np.ndarray,
    linear: Sequence[Block],
    affine: Sequence[Block],
    dim_gate: Optional[np.ndarray],
    bias: np.ndarray,
    final: bool = False,
) -> Tuple[np.ndarray, KernelCache]:
    inputs = [splice(h, off) for off, _, _ in linear]
    linear_terms = [u @ B.T for u, (_, _, B) in zip(inputs, linear)]
    z = linear[0][1] * linear_terms[0]
    for (_, g, _), term in zip(linear[1:], linear_terms[1:]):
        z = z + g * term

    zt = z * dim_gate if dim_gate is not None else z

    shifted = [splice(zt, off) for off, _, _ in affine]
    affine_terms = [s @ A.T for s, (_, _, A) in zip(shifted, affine)]
    y = affine[0][1] * affine_terms[0]
    for (_, g, _), term in zip(affine[1:], affine_terms[1:]):
        y = y + g * term
    y = y + bias

    out = y if final else relu(y)
    cache = KernelCache(
        h=h,
        linear=list(linear),
        affine=list(affine),
        dim_gate=dim_gate,
        final=final,
        inputs=inputs,
        linear_terms=linear_terms,
        z=z,
        zt=zt,
        shifted=shifted,
        affine_terms=affine_terms,
        y=y,
    )
    return out, cache


def factored_backward(cache: KernelCache, dout: np.ndarray) -> KernelGrads:
    dy = dout if cache.final else dout * (cache.y > 0)
    dy_flat = _flat(dy)

    affine_grads = []
    affine_gates = np.zeros(len(cache.affine))
    dzt = np.zeros_like(cache.zt)
    for k, ((off, g, A), s, term) in enumerate(
        zip(cache.affine, cache.shifted, cache.affine_terms)
    ):
        affine_gates[k] = np.sum(dy * term)
        affine_grads.append(g * (dy_flat.T @ _flat(s)))
        dzt += splice_adjoint(g * (dy @ A), off)

    if cache.dim_gate is not None:
        ddim = _flat(dzt * cache.z).sum(axis=0)
        dz = dzt * cache.dim_gate
    else:
        ddim = None
        dz = dzt
    dz_flat = _flat(dz)

    linear_grads = []
    linear_gates = np.zeros(len(cache.linear))
    dh = np.zeros_like(cache.h)
    for k, ((off, g, B), u, term) in enumerate(
        zip(cache.linear, cache.inputs, cache.linear_terms)
    ):
        linear_gates[k] = np.sum(dz * term)
        linear_grads.append(g * (dz_flat.T @ _flat(u)))
        dh += splice_adjoint(g * (dz @ B), off)

    return KernelGrads(
        linear=linear_grads,
        linear_gates=linear_gates,
        affine=affine_grads,
        affine_gates=affine_gates,
        dim_gate=ddim,
        bias=dy_flat.sum(axis=0),
        h=dh,
    )


# ---------------------------------------------------------------------------
# Semi-orthogonal constraint
# ---------------------------------------------------------------------------

def _orth_scale(M: np.ndarray) -> Tuple[np.ndarray, float]:
    P = M @ M.T
    tr = float(np.trace(P))
    if tr == 0.0:
        raise DegenerateParameterError("semi-orthogonal step on all-zero linear blocks")
    return P, float(np.trace(P @ P.T)) / tr


def semi_orthogonal_residual(M: np.ndarray) -> float:
    """||M M^T - alpha I||_F with alpha = tr(P P^T) / tr(P)."""
    P, alpha = _orth_scale(M)
    return float(np.linalg.norm(P - alpha * np.eye(P.shape[0])))


def semi_orthogonal_update(M: np.ndarray) -> np.ndarray:
    """One floating-scale step: M <- M - 1/2 (P - alpha I) M / alpha."""
    P, alpha = _orth_scale(M)
    return M - 0.5 * ((P - alpha * np.eye(P.shape[0])) @ M) / alpha


# ---------------------------------------------------------------------------
# Parameter / multiply counts
# ---------------------------------------------------------------------------

def param_count_for(in_dim: int, out_dim: int, choice: LayerChoice, dims: Sequence[int]) -> int:
    n = int(dims[choice.dim_index])
    return (
        n * in_dim * (1 + (choice.left > 0))
        + out_dim * n * (1 + (choice.right > 0))
        + out_dim
    )


def flop_count_for(in_dim: int, out_dim: int, choice: LayerChoice, dims: Sequence[int]) -> int:
    """Multiplies per output frame."""
    n = int(dims[choice.dim_index])
    return n * in_dim * (1 + (choice.left > 0)) + out_dim * n * (1 + (choice.right > 0))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

@dataclass
class FactoredLayer:
    """
    Shared super-network parameters of one layer.

    linear_blocks[c] (n_max x D_in) reads frame t-c; affine_blocks[r]
    (D_out x n_max) reads bottleneck frame t+r.
    """

    linear_blocks: np.ndarray
    affine_blocks: np.ndarray
    bias: np.ndarray
    final: bool = False

    def __post_init__(self):
        lin = np.asarray(self.linear_blocks, dtype=np.float64)
        aff = np.asarray(self.affine_blocks, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if lin.ndim != 3 or aff.ndim != 3 or bias.ndim != 1:
            raise ShapeError(
                f"bad layer shapes: linear {lin.shape}, affine {aff.shape}, bias {bias.shape}"
            )
        if aff.shape[2] != lin.shape[1] or aff.shape[1] != bias.shape[0]:
            raise ShapeError(
                f"linear {lin.shape} / affine {aff.shape} / bias {bias.shape} do not agree"
            )
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(aff)) and np.all(np.isfinite(bias))):
            raise ValueError("layer parameters must be finite")
        self.linear_blocks = lin
        self.affine_blocks = aff
        self.bias = bias

    @classmethod
    def initialize(
        cls,
        in_dim: int,
        out_dim: int,
        d_left: int,
        d_right: int,
        n_max: int,
        rng: Rng,
        final: bool = False,
    ) -> "FactoredLayer":
        linear = rng.normal((d_left + 1, n_max, in_dim)) / np.sqrt(in_dim)
        affine = rng.normal((d_right + 1, out_dim, n_max)) / np.sqrt(n_max)
        return cls(linear, affine, np.zeros(out_dim), final=final)

    @property
    def d_left(self) -> int:
        return self.linear_blocks.shape[0] - 1

    @property
    def d_right(self) -> int:
        return self.affine_blocks.shape[0] - 1

    @property
    def n_max(self) -> int:
        return self.linear_blocks.shape[1]

    @property
    def in_dim(self) -> int:
        return self.linear_blocks.shape[2]

    @property
    def out_dim(self) -> int:
        return self.affine_blocks.shape[1]

    def check_choice(self, choice: LayerChoice, dims: Sequence[int]) -> None:
        if not (0 <= choice.left <= self.d_left):
            raise ValueError(f"left offset {choice.left} outside 0..{self.d_left}")
        if not (0 <= choice.right <= self.d_right):
            raise ValueError(f"right offset {choice.right} outside 0..{self.d_right}")
        if not (0 <= choice.dim_index < len(dims)):
            raise ValueError(f"dim index {choice.dim_index} outside 0..{len(dims) - 1}")
        if int(dims[choice.dim_index]) > self.n_max:
            raise ValueError(f"dim {dims[choice.dim_index]} exceeds n_max={self.n_max}")

    def stacked_linear(self) -> np.ndarray:
        """All linear blocks side by side: n_max x ((d_left+1) * D_in)."""
        return np.concatenate(list(self.linear_blocks), axis=1)

    def gated_blocks(self, gates) -> Tuple[List[Block], List[Block]]:
        linear = [(-c, float(gates.left[c]), self.linear_blocks[c]) for c in range(self.d_left + 1)]
        affine = [(r, float(gates.right[r]), self.affine_blocks[r]) for r in range(self.d_right + 1)]
        return linear, affine


@dataclass
class StandaloneLayer:
    """A single candidate cut out of a FactoredLayer (or trained from scratch)."""

    choice: LayerChoice
    dim: int
    linear: List[Tuple[int, np.ndarray]]
    affine: List[Tuple[int, np.ndarray]]
    bias: np.ndarray
    final: bool = False

    @classmethod
    def initialize(
        cls,
        in_dim: int,
        out_dim: int,
        choice: LayerChoice,
        dims: Sequence[int],
        rng: Rng,
        final: bool = False,
    ) -> "StandaloneLayer":
        n = int(dims[choice.dim_index])
        offsets_l = [0] + ([-choice.left] if choice.left > 0 else [])
        offsets_r = [0] + ([choice.right] if choice.right > 0 else [])
        linear = [(off, rng.normal((n, in_dim)) / np.sqrt(in_dim)) for off in offsets_l]
        affine = [(off, rng.normal((out_dim, n)) / np.sqrt(n)) for off in offsets_r]
        return cls(choice, n, linear, affine, np.zeros(out_dim), final=final)

    @property
    def in_dim(self) -> int:
        return self.linear[0][1].shape[1]

    @property
    def out_dim(self) -> int:
        return self.bias.shape[0]

    def blocks(self) -> Tuple[List[Block], List[Block]]:
        return (
            [(off, 1.0, B) for off, B in self.linear],
            [(off, 1.0, A) for off, A in self.affine],
        )

    def forward_with_cache(self, h: np.ndarray) -> Tuple[np.ndarray, KernelCache]:
        if h.shape[-1] != self.in_dim:
            raise ShapeError(f"input dim {h.shape[-1]} does not match layer input {self.in_dim}")
        linear, affine = self.blocks()
        return factored_forward(h, linear, affine, None, self.bias, self.final)

    def forward(self, h: np.ndarray) -> np.ndarray:
        return self.forward_with_cache(h)[0]

    def param_count(self) -> int:
        return (
            sum(B.size for _, B in self.linear)
            + sum(A.size for _, A in self.affine)
            + self.bias.size
        )

    def semi_orthogonal_step(self) -> "StandaloneLayer":
        M = np.concatenate([B for _, B in self.linear], axis=1)
        M = semi_orthogonal_update(M)
        parts = np.split(M, len(self.linear), axis=1)
        linear = [(off, part) for (off, _), part in zip(self.linear, parts)]
        return replace(self, linear=linear)


# ---------------------------------------------------------------------------
# Layer operations
# ---------------------------------------------------------------------------

def extract_layer(layer: FactoredLayer, choice: LayerChoice, dims: Sequence[int]) -> StandaloneLayer:
    """Copy the first n_i rows of B_0 / B_c and the first n_i columns of A_0 / A_r."""
    layer.check_choice(choice, dims)
    n = int(dims[choice.dim_index])

    linear = [(0, layer.linear_blocks[0, :n, :].copy())]
    if choice.left > 0:
        linear.append((-choice.left, layer.linear_blocks[choice.left, :n, :].copy()))

    affine = [(0, np.ascontiguousarray(layer.affine_blocks[0, :, :n]))]
    if choice.right > 0:
        affine.append((choice.right, np.ascontiguousarray(layer.affine_blocks[choice.right, :, :n])))

    return StandaloneLayer(choice, n, linear, affine, layer.bias.copy(), final=layer.final)


def layer_forward_onehot(
    layer: FactoredLayer,
    choice: LayerChoice,
    dims: Sequence[int],
    h: np.ndarray,
) -> np.ndarray:
    if h.shape[-1] != layer.in_dim:
        raise ShapeError(f"input shape {h.shape} does not match layer input dim {layer.in_dim}")
    return extract_layer(layer, choice, dims).forward(h)


def semi_orthogonal_step(layer: FactoredLayer) -> FactoredLayer:
    M = semi_orthogonal_update(layer.stacked_linear())
    blocks = M.reshape(layer.n_max, layer.d_left + 1, layer.in_dim).transpose(1, 0, 2)
    return replace(layer, linear_blocks=np.ascontiguousarray(blocks))


def candidate_param_count(layer: FactoredLayer, choice: LayerChoice, dims: Sequence[int]) -> int:
    layer.check_choice(choice, dims)
    return param_count_for(layer.in_dim, layer.out_dim, choice, dims)


def candidate_flop_count(layer: FactoredLayer, choice: LayerChoice, dims: Sequence[int]) -> int:
    layer.check_choice(choice, dims)
    return flop_count_for(layer.in_dim, layer.out_dim, choice, dims)
