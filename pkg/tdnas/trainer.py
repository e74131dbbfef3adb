# tdnas/trainer.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .dataset_schema import Dataset
from .errors import ShapeError, TrainingError
from .numeric import Rng, STREAM_INIT, STREAM_SHUFFLE, derive_seed
from .supernet import CandidateArchitecture, SearchSpaceSpec, StandaloneNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    layer_lr: float = 0.05
    arch_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 3
    seed: int = 0
    orth_period: int = 4

    def __post_init__(self):
        if self.layer_lr <= 0 or self.arch_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.orth_period < 1:
            raise ValueError("orth_period must be >= 1")


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over frames of -log softmax(logits)[label]; gradient (softmax - onehot) / frames."""
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels outside [0, {k})")

    flat = logits.reshape(-1, k)
    lab = labels.reshape(-1)
    n = flat.shape[0]
    logp = log_softmax(flat, axis=-1)
    loss = -float(np.mean(logp[np.arange(n), lab]))

    grad = softmax(flat, axis=-1)
    grad[np.arange(n), lab] -= 1.0
    return loss, (grad / n).reshape(logits.shape)


def sgd_momentum_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    momenta: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> Dict[str, np.ndarray]:
    """m <- momentum * m + g; p <- p - lr * m. Updates params and momenta in place."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        m = momenta.get(name)
        if m is None:
            m = momenta[name] = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ShapeError(f"{name}: momentum {m.shape} does not match parameter {p.shape}")
        m *= momentum
        m += g
        p -= lr * m
    return params


def num_batches(num_items: int, batch_size: int) -> int:
    return math.ceil(num_items / batch_size)


def batch_indices(num_items: int, batch_size: int, seed: int, epoch: int, index: int, label: str = "train") -> np.ndarray:
    """Minibatch `index` of `epoch`; order is a pure function of (seed, label, epoch)."""
    perm = Rng(seed, derive_seed(STREAM_SHUFFLE, label, epoch)).permutation(num_items)
    return np.sort(perm[index * batch_size:(index + 1) * batch_size])


def evaluate(network, data: Dataset) -> Tuple[float, float]:
    """(mean frame loss, frame accuracy); forward only, summed in sequence order."""
    logits = network.forward(data.features)
    logp = log_softmax(logits, axis=-1)
    picked = np.take_along_axis(logp, data.labels[..., None], axis=-1)[..., 0]
    per_seq = -picked.sum(axis=-1)
    correct = (np.argmax(logits, axis=-1) == data.labels).sum(axis=-1)
    total = 0.0
    hits = 0
    for loss, c in zip(per_seq, correct):
        total += float(loss)
        hits += int(c)
    frames = data.labels.size
    return total / frames, hits / frames


@dataclass
class RetrainResult:
    network: StandaloneNetwork
    loss: float
    accuracy: float
    train_losses: List[float] = field(default_factory=list)
    momenta: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


def retrain_candidate(
    cand: CandidateArchitecture,
    spec: SearchSpaceSpec,
    train_data: Dataset,
    valid_data: Dataset,
    cfg: TrainConfig,
) -> RetrainResult:
    """Train `cand` from a fresh seeded initialization and score it on `valid_data`."""
    if len(train_data) == 0:
        raise TrainingError("no training sequences", 0)
    net = StandaloneNetwork.initialize(spec, cand, Rng(cfg.seed, STREAM_INIT))
    momenta: Dict[str, np.ndarray] = {}
    losses: List[float] = []
    bpe = num_batches(len(train_data), cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for b in range(bpe):
            idx = batch_indices(len(train_data), cfg.batch_size, cfg.seed, epoch, b)
            logits, cache = net.forward_with_cache(train_data.features[idx])
            loss, dlogits = cross_entropy_loss(logits, train_data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss", step)
            sgd_momentum_step(net.parameters(), net.backward(cache, dlogits), momenta, cfg.layer_lr, cfg.momentum)
            step += 1
            if step % cfg.orth_period == 0:
                net.apply_semi_orthogonal()
            epoch_loss += loss
        losses.append(epoch_loss / bpe)
        logger.debug("retrain epoch %d: loss %.4f", epoch + 1, losses[-1])

    val_loss, val_acc = evaluate(net, valid_data)
    if not np.isfinite(val_loss):
        raise TrainingError("non-finite validation loss", step)
    return RetrainResult(net, val_loss, val_acc, losses, momenta, step)
