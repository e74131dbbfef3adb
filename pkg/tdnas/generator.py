# tdnas/generator.py
"""
Synthetic frame-classification tasks with planted structure.

planted-context: labels depend only on frames t - k_L and t + k_R.
planted-rank:    label logits pass through a rank-r map of frame t.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.linear_model import LogisticRegression

from .dataset_schema import Dataset
from .layer import splice
from .numeric import Rng, STREAM_DATA

logger = logging.getLogger(__name__)

TASK_KINDS = ("planted-context", "planted-rank")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str = "planted-context"
    num_sequences: int = 200
    frames: int = 20
    feature_dim: int = 8
    num_classes: int = 4
    planted_left: int = 2
    planted_right: int = 3
    planted_rank: int = 2
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if min(self.num_sequences, self.frames, self.feature_dim, self.num_classes) < 1:
            raise ValueError("num_sequences, frames, feature_dim and num_classes must be >= 1")
        if self.planted_left < 0 or self.planted_right < 0:
            raise ValueError("planted offsets must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def gen_context_task(
    spec: SyntheticTaskSpec,
    rng: Optional[Rng] = None,
    d_left: Optional[int] = None,
    d_right: Optional[int] = None,
) -> Dataset:
    """Label = argmax of fixed random projections of [x_{t-k_L}; x_{t+k_R}]."""
    if d_left is not None and spec.planted_left > d_left:
        raise ValueError(f"planted left offset {spec.planted_left} exceeds search maximum {d_left}")
    if d_right is not None and spec.planted_right > d_right:
        raise ValueError(f"planted right offset {spec.planted_right} exceeds search maximum {d_right}")
    if rng is None:
        rng = Rng(spec.seed, STREAM_DATA)

    x = rng.normal((spec.num_sequences, spec.frames, spec.feature_dim))
    proj = rng.normal((spec.num_classes, 2 * spec.feature_dim))
    spliced = np.concatenate(
        [splice(x, -spec.planted_left), splice(x, spec.planted_right)], axis=-1
    )
    labels = np.argmax(spliced @ proj.T, axis=-1)
    logger.debug(
        "planted-context task: %d sequences, offsets -%d/+%d",
        spec.num_sequences, spec.planted_left, spec.planted_right,
    )
    return Dataset(x, labels, spec.num_classes)


def rank_task_arrays(
    spec: SyntheticTaskSpec, rng: Optional[Rng] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, noisy logits, labels) of the planted-rank task."""
    r = spec.planted_rank
    if not (1 <= r <= spec.feature_dim):
        raise ValueError(f"planted rank {r} must lie in 1..{spec.feature_dim}")
    if rng is None:
        rng = Rng(spec.seed, STREAM_DATA)

    x = rng.normal((spec.num_sequences, spec.frames, spec.feature_dim))
    down = rng.normal((r, spec.feature_dim)) / np.sqrt(spec.feature_dim)
    up = rng.normal((spec.num_classes, r))
    noise = rng.normal((spec.num_sequences, spec.frames, spec.num_classes))
    logits = (x @ down.T) @ up.T + spec.noise_sigma * noise
    return x, logits, np.argmax(logits, axis=-1)


def gen_rank_task(spec: SyntheticTaskSpec, rng: Optional[Rng] = None) -> Dataset:
    x, _, labels = rank_task_arrays(spec, rng)
    return Dataset(x, labels, spec.num_classes)


def generate_dataset(spec: SyntheticTaskSpec, rng: Optional[Rng] = None) -> Dataset:
    if spec.kind == "planted-context":
        return gen_context_task(spec, rng)
    return gen_rank_task(spec, rng)


def split_heldout(d: Dataset, fraction: float, rng: Rng) -> Tuple[Dataset, Dataset]:
    """Uniform random partition by sequence into (train, heldout)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"heldout fraction must lie in (0, 1), got {fraction}")
    n = len(d)
    n_held = int(np.floor(fraction * n + 0.5))
    if n_held < 1 or n_held >= n:
        raise ValueError(f"fraction {fraction} of {n} sequences leaves an empty part")
    perm = rng.permutation(n)
    held = np.sort(perm[:n_held])
    train = np.sort(perm[n_held:])
    return d.subset(train), d.subset(held)


def probe_accuracy(
    d: Dataset,
    offsets: Sequence[int],
    C: float = 1e4,
    max_iter: int = 5000,
) -> float:
    """
    In-sample frame accuracy of a logistic-regression probe fed the frames at
    the given offsets (0 = current frame), spliced with edge replication.
    """
    feats = np.concatenate([splice(d.features, off) for off in offsets], axis=-1)
    X = feats.reshape(-1, feats.shape[-1])
    y = d.labels.reshape(-1)
    clf = LogisticRegression(C=C, max_iter=max_iter)
    clf.fit(X, y)
    return float(clf.score(X, y))
