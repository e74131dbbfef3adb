# tdnas/lattice.py
"""
NAS lattice: one weighted choice group per (layer, searched attribute).
Paths pick one choice per group; a path's probability is the product of its
arcs. Groups are independent, so the N best paths come from a best-first
walk over "advance one group to its next-best choice" successors.
"""
from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .layer import LayerChoice
from .numeric import stable_softmax
from .supernet import (
    ArchitectureWeights,
    CandidateArchitecture,
    GROUP_TAGS,
    SearchSpaceSpec,
    choice_index,
)

GROUP_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ChoiceGroup:
    layer: int
    tag: str
    values: Tuple[int, ...]
    probs: Tuple[float, ...]


@dataclass(frozen=True)
class NasLattice:
    spec: SearchSpaceSpec
    groups: Tuple[ChoiceGroup, ...]

    def __post_init__(self):
        for g in self.groups:
            if any(p < 0 for p in g.probs) or abs(math.fsum(g.probs) - 1.0) > GROUP_SUM_TOL:
                raise ValueError(f"layer {g.layer + 1} {g.tag}: probabilities do not sum to 1")

    def space_size(self) -> int:
        return math.prod(len(g.probs) for g in self.groups)


def _group_values(spec: SearchSpaceSpec, tag: str) -> Tuple[int, ...]:
    if tag == "dim":
        return spec.dim_choices
    return tuple(range(spec.group_size(tag)))


def build_lattice(weights: ArchitectureWeights, spec: SearchSpaceSpec) -> NasLattice:
    """Noise-free softmax probabilities per group, even for Gumbel-trained weights."""
    weights.check(spec)
    groups = []
    for l, tag, log_alpha in weights.groups():
        probs = stable_softmax(log_alpha)
        groups.append(ChoiceGroup(l, tag, _group_values(spec, tag), tuple(float(p) for p in probs)))
    return NasLattice(spec, tuple(groups))


def _candidate(lattice: NasLattice, indices: Sequence[int]) -> CandidateArchitecture:
    spec = lattice.spec
    picked: List[Dict[str, int]] = []
    for l in range(spec.num_layers):
        default = spec.default_choice(l)
        picked.append({tag: choice_index(default, tag) for tag in GROUP_TAGS})
    for g, idx in zip(lattice.groups, indices):
        picked[g.layer][g.tag] = int(idx)
    return CandidateArchitecture(tuple(LayerChoice(p["left"], p["right"], p["dim"]) for p in picked))


def _product(lattice: NasLattice, indices: Sequence[int]) -> float:
    p = 1.0
    for g, idx in zip(lattice.groups, indices):
        p *= g.probs[idx]
    return p


def candidate_indices(lattice: NasLattice, cand: CandidateArchitecture) -> Tuple[int, ...]:
    if len(cand) != lattice.spec.num_layers:
        raise ValueError(f"candidate has {len(cand)} layers, lattice has {lattice.spec.num_layers}")
    indices = []
    for g in lattice.groups:
        idx = choice_index(cand[g.layer], g.tag)
        if not (0 <= idx < len(g.probs)):
            raise ValueError(f"layer {g.layer + 1} {g.tag}: choice index {idx} out of range")
        indices.append(idx)
    return tuple(indices)


def path_probability(lattice: NasLattice, cand: CandidateArchitecture) -> float:
    return _product(lattice, candidate_indices(lattice, cand))


def k_best(lattice: NasLattice, n: int) -> List[Tuple[CandidateArchitecture, float]]:
    """
    Exact N highest-probability paths, descending; equal products are ordered
    by their choice indices (lexicographic, group order).
    """
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")

    # per group: choice indices sorted by probability desc, lower index first on ties
    orders = [sorted(range(len(g.probs)), key=lambda i, g=g: (-g.probs[i], i)) for g in lattice.groups]

    def entry(ranks: Tuple[int, ...]):
        indices = tuple(order[r] for order, r in zip(orders, ranks))
        return (-_product(lattice, indices), indices, ranks)

    start = tuple(0 for _ in orders)
    heap = [entry(start)]
    seen = {start}
    out: List[Tuple[CandidateArchitecture, float]] = []
    while heap and len(out) < n:
        neg_p, indices, ranks = heapq.heappop(heap)
        out.append((_candidate(lattice, indices), -neg_p))
        for g in range(len(ranks)):
            if ranks[g] + 1 < len(orders[g]):
                nxt = ranks[:g] + (ranks[g] + 1,) + ranks[g + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, entry(nxt))
    return out


# ---------------------------------------------------------------------------
# Text format: one line per layer, "L<l>: left=-c right=+r dim=<n>"
# ---------------------------------------------------------------------------

_LINE = re.compile(r"^L(\d+): left=-(\d+) right=\+(\d+) dim=(\d+)$")


def format_candidate(cand: CandidateArchitecture, spec: SearchSpaceSpec) -> str:
    return "\n".join(
        f"L{l + 1}: left=-{ch.left} right=+{ch.right} dim={spec.dim_choices[ch.dim_index]}"
        for l, ch in enumerate(cand)
    )


def parse_candidate(text: str, spec: SearchSpaceSpec) -> CandidateArchitecture:
    choices = []
    for lineno, line in enumerate(text.strip().splitlines(), start=1):
        m = _LINE.match(line.strip())
        if not m:
            raise ValueError(f"line {lineno}: not a candidate line: {line!r}")
        layer, left, right, dim = (int(v) for v in m.groups())
        if layer != len(choices) + 1:
            raise ValueError(f"line {lineno}: expected layer L{len(choices) + 1}, got L{layer}")
        if dim not in spec.dim_choices:
            raise ValueError(f"line {lineno}: dim {dim} is not one of {spec.dim_choices}")
        choices.append(LayerChoice(left, right, spec.dim_choices.index(dim)))
    cand = CandidateArchitecture(tuple(choices))
    cand.validate(spec)
    return cand


def format_kbest(results: Sequence[Tuple[CandidateArchitecture, float]], spec: SearchSpaceSpec) -> str:
    blocks = [
        f"# rank {k} prob={prob!r}\n{format_candidate(cand, spec)}\n"
        for k, (cand, prob) in enumerate(results, start=1)
    ]
    return "\n".join(blocks)


def parse_kbest(text: str, spec: SearchSpaceSpec) -> List[Tuple[CandidateArchitecture, float]]:
    out = []
    for block in text.strip().split("\n\n"):
        lines = block.strip().splitlines()
        if not lines or not lines[0].startswith("# rank "):
            raise ValueError(f"malformed top-N block: {block!r}")
        prob = float(lines[0].split("prob=", 1)[1])
        out.append((parse_candidate("\n".join(lines[1:]), spec), prob))
    return out
