# tdnas/numeric.py
"""
Dense float64 helpers, the seeded counter-based generator and the
central-difference gradient probe everything else is checked against.

Matrices and sequence tensors are plain numpy arrays:
  - Matrix: 2-D float64 array
  - SeqTensor: float64 array shaped (..., T, D), one row per frame
"""
from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np
from scipy.special import softmax

from .errors import ShapeError

UNIFORM_EPS = 1e-12

# Stream ids; each logical consumer of randomness owns one.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SPLIT = 3
STREAM_SEARCH = 4
STREAM_DATA = 5
STREAM_SAMPLE = 6

_U64 = (1 << 64) - 1


def derive_seed(*parts: int | str) -> int:
    """Stable 63-bit seed from any mix of ints and strings (platform independent)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") >> 1


class Rng:
    """
    Philox (counter-based) generator keyed by (seed, stream id).

    Identical (seed, stream, draw sequence) gives identical values on every
    platform. The full state round-trips through `get_state` / `set_state`.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _U64
        self.stream = int(stream) & _U64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bitgen)

    def spawn(self, *labels: int | str) -> "Rng":
        """Independent generator for a sub-task, derived from this one's identity."""
        return Rng(self.seed, derive_seed(self.stream, *labels))

    # -- draws ---------------------------------------------------------------
    def uniform(self) -> float:
        return float(np.clip(self._gen.random(), UNIFORM_EPS, 1.0 - UNIFORM_EPS))

    def uniforms(self, size: int) -> np.ndarray:
        return np.clip(self._gen.random(size), UNIFORM_EPS, 1.0 - UNIFORM_EPS)

    def gumbels(self, size: int) -> np.ndarray:
        return gumbel_from_uniform(self.uniforms(size))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integer(self, high: int) -> int:
        return int(self._gen.integers(0, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    # -- state ---------------------------------------------------------------
    def get_state(self) -> np.ndarray:
        """Whole generator state as uint64 words (identity first)."""
        st = self._bitgen.state
        words = [self.seed, self.stream]
        words.extend(int(v) for v in st["state"]["counter"])
        words.extend(int(v) for v in st["state"]["key"])
        words.extend(int(v) for v in st["buffer"])
        words.extend([int(st["buffer_pos"]), int(st["has_uint32"]), int(st["uinteger"])])
        return np.array(words, dtype=np.uint64)

    @classmethod
    def from_state(cls, words: np.ndarray) -> "Rng":
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (15,):
            raise ShapeError(f"rng state must have 15 words, got shape {words.shape}")
        rng = cls(int(words[0]), int(words[1]))
        rng._bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": words[2:6].copy(), "key": words[6:8].copy()},
            "buffer": words[8:12].copy(),
            "buffer_pos": int(words[12]),
            "has_uint32": int(words[13]),
            "uinteger": int(words[14]),
        }
        return rng


def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ValueError("matrix product produced non-finite entries")
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def stable_softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax needs a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"softmax input is not finite: {x}")
    return softmax(x)


def draw_uniform(rng: Rng) -> float:
    return rng.uniform()


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def draw_gumbel(rng: Rng) -> float:
    return float(gumbel_from_uniform(draw_uniform(rng)))


def central_difference(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    i: int,
    h: float,
) -> float:
    """(f(x + h e_i) - f(x - h e_i)) / 2h on a flat copy of x."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    base = np.array(x, dtype=np.float64)
    flat = base.reshape(-1)
    orig = flat[i]

    flat[i] = orig + h
    f_plus = float(f(base.copy()))
    flat[i] = orig - h
    f_minus = float(f(base.copy()))
    flat[i] = orig

    if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
        raise ValueError(f"function is not finite around index {i}")
    return (f_plus - f_minus) / (2.0 * h)


def relative_error(a, b, floor: float = 1e-8) -> float:
    a = float(a)
    b = float(b)
    return abs(a - b) / max(abs(a), abs(b), floor)
