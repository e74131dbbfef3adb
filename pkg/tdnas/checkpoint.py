# tdnas/checkpoint.py
"""
TDNF checkpoint file.

  char[4]  magic "TDNF"
  uint32   version (1)
  uint32   number of arrays
  per array:
    uint32   name length, then the UTF-8 name
    uint32   ndim, then ndim uint64 dims
    float64  data, row-major

All fields little-endian. Names: "meta/space", "meta/step", "meta/rng",
"meta/candidate" (standalone networks), "meta/pinned", "param/<name>",
"arch/<layer>/<group>", "momentum/<name>".
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .errors import FormatError
from .layer import LayerChoice
from .numeric import Rng
from .supernet import (
    ArchitectureWeights,
    CandidateArchitecture,
    SearchSpaceSpec,
    StandaloneNetwork,
    SuperNetwork,
)

MAGIC = b"TDNF"
VERSION = 1
HEADER_STRUCT = struct.Struct("<4sII")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def arrays_to_bytes(arrays: Dict[str, np.ndarray]) -> bytes:
    parts = [HEADER_STRUCT.pack(MAGIC, VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U64.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(parts)


def bytes_to_arrays(payload: bytes) -> Dict[str, np.ndarray]:
    if len(payload) < HEADER_STRUCT.size:
        raise FormatError(f"file too short for a TDNF header ({len(payload)} bytes)", len(payload))
    magic, version, count = HEADER_STRUCT.unpack_from(payload, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported TDNF version {version}", 4)

    def need(offset: int, size: int, what: str) -> None:
        if offset + size > len(payload):
            raise FormatError(f"truncated {what}", offset)

    arrays: Dict[str, np.ndarray] = {}
    offset = HEADER_STRUCT.size
    for _ in range(count):
        need(offset, 4, "name length")
        (name_len,) = _U32.unpack_from(payload, offset)
        offset += 4
        need(offset, name_len, "array name")
        try:
            name = payload[offset:offset + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("array name is not UTF-8", offset) from None
        if name in arrays:
            raise FormatError(f"duplicate array {name!r}", offset)
        offset += name_len

        need(offset, 4, f"{name}: ndim")
        (ndim,) = _U32.unpack_from(payload, offset)
        offset += 4
        need(offset, 8 * ndim, f"{name}: shape")
        shape = tuple(_U64.unpack_from(payload, offset + 8 * i)[0] for i in range(ndim))
        offset += 8 * ndim

        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        need(offset, 8 * size, f"{name}: data")
        if size == 0:
            arrays[name] = np.zeros(shape)
        else:
            data = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
            arrays[name] = data.astype(np.float64).reshape(shape)
        offset += 8 * size

    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes", offset)
    return arrays


# ---------------------------------------------------------------------------
# Search-space encoding
# ---------------------------------------------------------------------------

def encode_space(spec: SearchSpaceSpec) -> np.ndarray:
    head = [
        spec.num_layers,
        spec.input_dim,
        spec.hidden_dim,
        spec.num_classes,
        spec.d_left,
        spec.d_right,
        int(spec.search_context),
        int(spec.search_dims),
        spec.default_left,
        spec.default_right,
        -1 if spec.default_dim is None else spec.default_dim,
        len(spec.dim_choices),
    ]
    return np.array(head + list(spec.dim_choices), dtype=np.float64)


def decode_space(vec: np.ndarray, pinned: Optional[np.ndarray] = None) -> SearchSpaceSpec:
    v = [int(x) for x in np.asarray(vec).reshape(-1)]
    if len(v) < 12 or len(v) != 12 + v[11]:
        raise ValueError(f"meta/space has {len(v)} entries, which is not a valid encoding")
    pins = ()
    if pinned is not None and pinned.size:
        pins = tuple(LayerChoice(int(a), int(b), int(c)) for a, b, c in np.asarray(pinned).reshape(-1, 3))
    return SearchSpaceSpec(
        num_layers=v[0],
        input_dim=v[1],
        hidden_dim=v[2],
        num_classes=v[3],
        d_left=v[4],
        d_right=v[5],
        search_context=bool(v[6]),
        search_dims=bool(v[7]),
        default_left=v[8],
        default_right=v[9],
        default_dim=None if v[10] < 0 else v[10],
        dim_choices=tuple(v[12:]),
        pinned=pins,
    )


def _choices_array(choices) -> np.ndarray:
    return np.array([[c.left, c.right, c.dim_index] for c in choices], dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to resume a run: parameters, log alpha, momenta, step and generator state."""

    spec: SearchSpaceSpec
    params: Dict[str, np.ndarray]
    arch: Optional[ArchitectureWeights] = None
    candidate: Optional[CandidateArchitecture] = None
    momenta: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng_state: Optional[np.ndarray] = None
    version: int = VERSION

    @classmethod
    def of_supernet(cls, net: SuperNetwork, momenta=None, step: int = 0, rng: Optional[Rng] = None) -> "Checkpoint":
        return cls(
            net.spec,
            dict(net.parameters()),
            arch=net.arch,
            momenta=dict(momenta or {}),
            step=step,
            rng_state=None if rng is None else rng.get_state(),
        )

    @classmethod
    def of_standalone(cls, net: StandaloneNetwork, momenta=None, step: int = 0) -> "Checkpoint":
        return cls(net.spec, dict(net.parameters()), candidate=net.candidate, momenta=dict(momenta or {}), step=step)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {"meta/space": encode_space(self.spec)}
        if self.spec.pinned:
            arrays["meta/pinned"] = _choices_array(self.spec.pinned)
        arrays["meta/step"] = np.array([self.step], dtype=np.float64)
        if self.rng_state is not None:
            # raw bit pattern, never used arithmetically
            arrays["meta/rng"] = np.asarray(self.rng_state, dtype=np.uint64).view(np.float64)
        if self.candidate is not None:
            arrays["meta/candidate"] = _choices_array(self.candidate)
        for name, arr in self.params.items():
            arrays[f"param/{name}"] = arr
        if self.arch is not None:
            for l, tag, arr in self.arch.groups():
                arrays[f"arch/{l}/{tag}"] = arr
        for name in sorted(self.momenta):
            arrays[f"momentum/{name}"] = self.momenta[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "Checkpoint":
        if "meta/space" not in arrays or "meta/step" not in arrays:
            raise ValueError("checkpoint lacks meta/space or meta/step")
        spec = decode_space(arrays["meta/space"], arrays.get("meta/pinned"))
        step = int(arrays["meta/step"].reshape(-1)[0])
        rng_state = None
        if "meta/rng" in arrays:
            rng_state = np.ascontiguousarray(arrays["meta/rng"]).view(np.uint64).copy()

        candidate = None
        if "meta/candidate" in arrays:
            candidate = CandidateArchitecture(
                tuple(LayerChoice(int(a), int(b), int(c)) for a, b, c in arrays["meta/candidate"].reshape(-1, 3))
            )
            candidate.validate(spec)

        params, momenta = {}, {}
        arch_groups = [dict() for _ in range(spec.num_layers)]
        has_arch = False
        for name, arr in arrays.items():
            if name.startswith("param/"):
                params[name[len("param/"):]] = arr
            elif name.startswith("momentum/"):
                momenta[name[len("momentum/"):]] = arr
            elif name.startswith("arch/"):
                _, l, tag = name.split("/")
                arch_groups[int(l)][tag] = arr.reshape(-1)
                has_arch = True
        arch = None
        if candidate is None:
            arch = ArchitectureWeights(arch_groups) if has_arch else ArchitectureWeights.zeros(spec)
        return cls(spec, params, arch, candidate, momenta, step, rng_state)

    def rng(self) -> Rng:
        if self.rng_state is None:
            raise ValueError("checkpoint carries no generator state")
        return Rng.from_state(self.rng_state)

    def supernet(self) -> SuperNetwork:
        if self.candidate is not None:
            raise ValueError("checkpoint holds a standalone network, not a super-network")
        try:
            return SuperNetwork.from_parameters(self.spec, self.params, self.arch)
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks parameter {exc.args[0]!r}") from None

    def standalone(self) -> StandaloneNetwork:
        if self.candidate is None:
            raise ValueError("checkpoint holds a super-network, not a standalone network")
        try:
            return StandaloneNetwork.from_parameters(self.spec, self.candidate, self.params)
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks parameter {exc.args[0]!r}") from None


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(arrays_to_bytes(ckpt.to_arrays()))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    with open(path, "rb") as f:
        return Checkpoint.from_arrays(bytes_to_arrays(f.read()))
