# tdnas/search.py
"""
Differentiable architecture search over a SuperNetwork.

Methods:
  softmax       joint updates of layer parameters and log alpha, lambda = softmax(log alpha)
  gumbel        joint updates, lambda = softmax((log alpha + G) / T), T annealed
  pipe-softmax  stage 1: layer parameters on uniformly sampled one-hot paths (train split)
                stage 2: log alpha only on the held-out split, softmax weights
  pipe-gumbel   as pipe-softmax, Gumbel-Softmax weights in stage 2
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint import Checkpoint
from .dataset_schema import Dataset
from .errors import ShapeError, TrainingError
from .generator import split_heldout
from .lattice import build_lattice, format_candidate, k_best
from .layer import LayerChoice, flop_count_for, param_count_for
from .numeric import Rng, STREAM_SAMPLE, STREAM_SPLIT, derive_seed, stable_softmax
from .supernet import (
    ArchitectureWeights,
    CandidateArchitecture,
    GateVector,
    SearchSpaceSpec,
    SuperNetwork,
    gates_for_candidate,
    gates_from_lambda,
    lambda_sensitivities,
    network_param_count,
    sample_onehot_uniform,
    supernet_backward,
    supernet_forward,
)
from .trainer import (
    TrainConfig,
    batch_indices,
    cross_entropy_loss,
    num_batches,
    retrain_candidate,
    sgd_momentum_step,
)

logger = logging.getLogger(__name__)

METHODS = ("softmax", "gumbel", "pipe-softmax", "pipe-gumbel")
COST_KINDS = ("params", "flops")


@dataclass(frozen=True)
class NasConfig:
    method: str = "pipe-gumbel"
    gumbel_samples: int = 1
    temp_start: float = 1.0
    temp_end: float = 0.03
    eta: float = 0.0
    cost: str = "params"
    heldout_fraction: float = 0.05
    search_epochs: int = 3
    stage2_epochs: int = 3
    retrain_epochs: int = 3
    top_n: int = 3
    random_samples: int = 6
    two_stage: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.cost not in COST_KINDS:
            raise ValueError(f"unknown cost {self.cost!r}; expected one of {COST_KINDS}")
        if self.gumbel_samples < 1:
            raise ValueError("gumbel_samples must be >= 1")
        if self.temp_start <= 0 or self.temp_end <= 0:
            raise ValueError("temperatures must be positive")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not (0.0 < self.heldout_fraction < 1.0):
            raise ValueError("heldout_fraction must lie in (0, 1)")
        if min(self.search_epochs, self.stage2_epochs, self.retrain_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.top_n < 1 or self.random_samples < 1:
            raise ValueError("top_n and random_samples must be >= 1")

    @property
    def pipelined(self) -> bool:
        return self.method.startswith("pipe-")

    @property
    def uses_gumbel(self) -> bool:
        return self.method.endswith("gumbel")


# ---------------------------------------------------------------------------
# Architecture-weight parameterizations
# ---------------------------------------------------------------------------

def softmax_lambda(log_alpha: np.ndarray) -> np.ndarray:
    return stable_softmax(log_alpha)


def softmax_arch_grad(lam: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d loss / d log alpha_k = lambda_k (v_k - sum_i lambda_i v_i)."""
    lam = np.asarray(lam, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if lam.shape != v.shape:
        raise ShapeError(f"lambda {lam.shape} and sensitivities {v.shape} differ")
    return lam * (v - lam @ v)


def gumbel_lambda(
    log_alpha: np.ndarray,
    temperature: float,
    rng: Optional[Rng] = None,
    gumbels: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """lambda_i proportional to exp((log alpha_i + G_i) / T); G is returned for the gradient pass."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    log_alpha = np.asarray(log_alpha, dtype=np.float64)
    if gumbels is None:
        if rng is None:
            raise ValueError("either an rng or pinned gumbel draws are required")
        gumbels = rng.gumbels(log_alpha.size)
    gumbels = np.asarray(gumbels, dtype=np.float64)
    if gumbels.shape != log_alpha.shape:
        raise ShapeError(f"gumbel draws {gumbels.shape} do not match log alpha {log_alpha.shape}")
    return stable_softmax((log_alpha + gumbels) / temperature), gumbels


def gumbel_arch_grad(samples: Sequence[Tuple[np.ndarray, np.ndarray]], temperature: float) -> np.ndarray:
    """Average over J samples of lambda^j_k (v^j_k - sum_i lambda^j_i v^j_i) / T."""
    if len(samples) == 0:
        raise ValueError("at least one gumbel sample is required")
    total = None
    for lam, v in samples:
        g = softmax_arch_grad(lam, v) / temperature
        total = g if total is None else total + g
    return total / len(samples)


@dataclass(frozen=True)
class TemperatureSchedule:
    start: float = 1.0
    end: float = 0.03

    def at(self, step: int, total_steps: int) -> float:
        return anneal_temperature(step, total_steps, self.start, self.end)


def anneal_temperature(step: int, total_steps: int, start: float = 1.0, end: float = 0.03) -> float:
    """Linear from `start` at step 0 to `end` at step == total_steps."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside 0..{total_steps}")
    frac = step / total_steps
    return start * (1.0 - frac) + end * frac


# ---------------------------------------------------------------------------
# Complexity penalty
# ---------------------------------------------------------------------------

@dataclass
class PenaltyTable:
    """costs[l][tag][i]: size of the layer when group `tag` takes choice i, others at their argmax."""

    costs: List[Dict[str, np.ndarray]]
    conditioning: Tuple[LayerChoice, ...] = ()


def penalty_table(
    spec: SearchSpaceSpec,
    weights: ArchitectureWeights,
    cost: str = "params",
    previous: Optional[PenaltyTable] = None,
) -> PenaltyTable:
    conditioning = tuple(weights.argmax_choice(spec, l) for l in range(spec.num_layers))
    if previous is not None and previous.conditioning == conditioning:
        return previous
    count = param_count_for if cost == "params" else flop_count_for

    costs = []
    for l, base in enumerate(conditioning):
        in_dim, out_dim = spec.layer_dims(l)
        layer_costs = {}
        for tag in spec.searched_tags():
            values = []
            for i in range(spec.group_size(tag)):
                ch = LayerChoice(
                    i if tag == "left" else base.left,
                    i if tag == "right" else base.right,
                    i if tag == "dim" else base.dim_index,
                )
                values.append(count(in_dim, out_dim, ch, spec.dim_choices))
            layer_costs[tag] = np.array(values, dtype=np.float64)
        costs.append(layer_costs)
    return PenaltyTable(costs, conditioning)


def penalized_loss(
    task_loss: float,
    lambdas: Sequence[Dict[str, np.ndarray]],
    penalties: PenaltyTable,
    eta: float,
    frames: int = 1,
) -> float:
    """
    task_loss + eta * sum over layers, groups and choices of lambda * C / frames.

    `task_loss` is the per-frame mean over a minibatch of `frames` frames. The
    penalty is charged once per minibatch against the summed frame loss, so
    dividing both by `frames` keeps the mean-loss gradient scale.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    if eta == 0:
        return task_loss
    total = 0.0
    for lam_groups, cost_groups in zip(lambdas, penalties.costs):
        for tag, lam in lam_groups.items():
            total += float(np.dot(lam, cost_groups[tag]))
    return task_loss + eta * total / frames


# ---------------------------------------------------------------------------
# Search sessions
# ---------------------------------------------------------------------------

@dataclass
class SearchResult:
    weights: ArchitectureWeights
    trajectory: List[Tuple[int, int, str, np.ndarray]]
    losses: List[float]
    steps: int


def snapshot(weights: ArchitectureWeights, step: int) -> List[Tuple[int, int, str, np.ndarray]]:
    return [(step, l, tag, softmax_lambda(a)) for l, tag, a in weights.groups()]


def _gates(net: SuperNetwork, lambdas: List[Dict[str, np.ndarray]]) -> List[GateVector]:
    return [
        gates_from_lambda(lam.get("left"), lam.get("right"), lam.get("dim"), net.spec, l)
        for l, lam in enumerate(lambdas)
    ]


class SearchSession:
    """
    Step-indexed search run. Minibatch order depends only on (seed, epoch), and
    every random draw comes from `rng`, so saving (net, momenta, step, rng)
    and resuming reproduces an uninterrupted run exactly.
    """

    def __init__(
        self,
        net: SuperNetwork,
        data: Dataset,
        nas: NasConfig,
        train: TrainConfig,
        rng: Rng,
        heldout: Optional[Dataset] = None,
        step: int = 0,
        momenta: Optional[Dict[str, np.ndarray]] = None,
    ):
        if len(data) == 0:
            raise TrainingError("no training sequences", step)
        self.net = net
        self.nas = nas
        self.train = train
        self.rng = rng
        if nas.pipelined and heldout is None:
            data, heldout = split_heldout(data, nas.heldout_fraction, Rng(train.seed, STREAM_SPLIT))
        self.train_data = data
        self.heldout = heldout
        self.momenta: Dict[str, np.ndarray] = momenta if momenta is not None else {}
        self.step = step
        self.trajectory: List[Tuple[int, int, str, np.ndarray]] = snapshot(net.arch, step)
        self.losses: List[float] = []
        self._penalties: Optional[PenaltyTable] = None
        self._temperature = TemperatureSchedule(nas.temp_start, nas.temp_end)

        self.train_batches = num_batches(len(self.train_data), train.batch_size)
        self.stage1_steps = nas.search_epochs * self.train_batches
        if nas.pipelined:
            if heldout is None or len(heldout) == 0:
                raise TrainingError("no held-out sequences for stage 2", step)
            self.heldout_batches = num_batches(len(heldout), train.batch_size)
            self.stage2_steps = nas.stage2_epochs * self.heldout_batches
        else:
            self.heldout_batches = 0
            self.stage2_steps = 0

    @property
    def total_steps(self) -> int:
        return self.stage1_steps + self.stage2_steps

    @property
    def finished(self) -> bool:
        return self.step >= self.total_steps

    def advance(self, num_steps: Optional[int] = None) -> None:
        target = self.total_steps if num_steps is None else min(self.total_steps, self.step + num_steps)
        while self.step < target:
            s = self.step
            if s < self.stage1_steps:
                epoch, b = divmod(s, self.train_batches)
                idx = batch_indices(len(self.train_data), self.train.batch_size, self.train.seed, epoch, b)
                x, y = self.train_data.features[idx], self.train_data.labels[idx]
                if self.nas.pipelined:
                    loss = self._stage1_step(x, y)
                else:
                    loss = self._joint_step(x, y, s)
            else:
                s2 = s - self.stage1_steps
                epoch, b = divmod(s2, self.heldout_batches)
                idx = batch_indices(len(self.heldout), self.train.batch_size, self.train.seed, epoch, b, "heldout")
                loss = self._stage2_step(self.heldout.features[idx], self.heldout.labels[idx], s2)

            if not np.isfinite(loss):
                raise TrainingError("non-finite search loss", s)
            self.losses.append(loss)
            self.step += 1
            if s + 1 == self.stage1_steps or (s + 1) % max(self.train_batches, 1) == 0:
                logger.debug("search step %d/%d: loss %.4f", self.step, self.total_steps, loss)

    def run(self) -> SearchResult:
        self.advance()
        logger.info(
            "%s search finished after %d steps; final loss %.4f",
            self.nas.method, self.step, self.losses[-1] if self.losses else float("nan"),
        )
        return self.result()

    def result(self) -> SearchResult:
        return SearchResult(self.net.arch, self.trajectory, self.losses, self.step)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.of_supernet(self.net, self.momenta, self.step, self.rng)

    @classmethod
    def resume(
        cls,
        ckpt: Checkpoint,
        data: Dataset,
        nas: NasConfig,
        train: TrainConfig,
        heldout: Optional[Dataset] = None,
    ) -> "SearchSession":
        return cls(ckpt.supernet(), data, nas, train, ckpt.rng(), heldout, ckpt.step, dict(ckpt.momenta))

    # -- pieces --------------------------------------------------------------
    def _update_layers(self, grads: Dict[str, np.ndarray], step: int) -> None:
        sgd_momentum_step(self.net.parameters(), grads, self.momenta, self.train.layer_lr, self.train.momentum)
        if (step + 1) % self.train.orth_period == 0:
            self.net.apply_semi_orthogonal()

    def _penalty(self) -> Optional[PenaltyTable]:
        if self.nas.eta == 0:
            return None
        self._penalties = penalty_table(self.net.spec, self.net.arch, self.nas.cost, self._penalties)
        return self._penalties

    def _sample_lambdas(self, temperature: Optional[float]):
        """Per group (lambda, G); softmax when temperature is None."""
        lambdas, draws = [], []
        for groups in self.net.arch.log_alpha:
            lam_l, g_l = {}, {}
            for tag, a in groups.items():
                if temperature is None:
                    lam_l[tag] = softmax_lambda(a)
                else:
                    lam_l[tag], g_l[tag] = gumbel_lambda(a, temperature, self.rng)
            lambdas.append(lam_l)
            draws.append(g_l)
        return lambdas, draws

    def _arch_pass(self, x, y, temperature: Optional[float]):
        """
        Forward/backward for J weight samples (1 for softmax). Returns mean
        penalized loss, mean layer-parameter gradients and the log alpha gradients.
        """
        spec = self.net.spec
        penalties = self._penalty()
        samples = 1 if temperature is None else self.nas.gumbel_samples
        param_grads: Dict[str, np.ndarray] = {}
        per_group: Dict[Tuple[int, str], List[Tuple[np.ndarray, np.ndarray]]] = {}
        total_loss = 0.0
        for _ in range(samples):
            lambdas, _draws = self._sample_lambdas(temperature)
            gates = _gates(self.net, lambdas)
            logits, cache = supernet_forward(self.net, gates, x)
            task_loss, dlogits = cross_entropy_loss(logits, y)
            grads = supernet_backward(self.net, gates, cache, dlogits)
            total_loss += penalized_loss(task_loss, lambdas, penalties, self.nas.eta, y.size) if penalties else task_loss
            for name, g in grads.params.items():
                param_grads[name] = g / samples if name not in param_grads else param_grads[name] + g / samples
            for l, lam_groups in enumerate(lambdas):
                v_all = lambda_sensitivities(grads.gates[l], spec)
                for tag, lam in lam_groups.items():
                    v = v_all[tag]
                    if penalties is not None:
                        v = v + self.nas.eta * penalties.costs[l][tag] / y.size
                    per_group.setdefault((l, tag), []).append((lam, v))

        arch_grads = {}
        for (l, tag), pairs in per_group.items():
            if temperature is None:
                arch_grads[(l, tag)] = softmax_arch_grad(*pairs[0])
            else:
                arch_grads[(l, tag)] = gumbel_arch_grad(pairs, temperature)
        return total_loss / samples, param_grads, arch_grads

    def _update_arch(self, arch_grads) -> None:
        for (l, tag), g in arch_grads.items():
            self.net.arch.log_alpha[l][tag] -= self.train.arch_lr * g

    def _joint_step(self, x, y, step: int) -> float:
        temperature = None
        if self.nas.uses_gumbel:
            temperature = self._temperature.at(step, max(self.stage1_steps - 1, 1))
        loss, param_grads, arch_grads = self._arch_pass(x, y, temperature)
        self._update_layers(param_grads, step)
        self._update_arch(arch_grads)
        self.trajectory.extend(snapshot(self.net.arch, step + 1))
        return loss

    def _stage1_step(self, x, y) -> float:
        cand = sample_onehot_uniform(self.net.spec, self.rng)
        gates = gates_for_candidate(self.net.spec, cand)
        logits, cache = supernet_forward(self.net, gates, x)
        loss, dlogits = cross_entropy_loss(logits, y)
        grads = supernet_backward(self.net, gates, cache, dlogits)
        self._update_layers(grads.params, self.step)
        return loss

    def _stage2_step(self, x, y, stage_step: int) -> float:
        temperature = None
        if self.nas.uses_gumbel:
            temperature = self._temperature.at(stage_step, max(self.stage2_steps - 1, 1))
        loss, _param_grads, arch_grads = self._arch_pass(x, y, temperature)
        self._update_arch(arch_grads)
        self.trajectory.extend(snapshot(self.net.arch, self.step + 1))
        return loss


def run_search(
    net: SuperNetwork,
    data: Dataset,
    nas: NasConfig,
    train: TrainConfig,
    rng: Rng,
    heldout: Optional[Dataset] = None,
) -> SearchResult:
    """Train `net` (and its architecture weights) in place with the configured method."""
    return SearchSession(net, data, nas, train, rng, heldout=heldout).run()


def top_candidate(weights: ArchitectureWeights, spec: SearchSpaceSpec) -> CandidateArchitecture:
    return k_best(build_lattice(weights, spec), 1)[0][0]


def run_penalty_sweep(
    net: SuperNetwork,
    data: Dataset,
    etas: Sequence[float],
    nas: NasConfig,
    train: TrainConfig,
    rng: Rng,
    heldout: Optional[Dataset] = None,
) -> Dict[float, SearchResult]:
    """
    Pipelined only: train the shared parameters once (stage 1), then re-run
    stage 2 from fresh architecture weights for every eta.
    """
    if not nas.pipelined:
        raise ValueError(f"penalty sweeps need a pipelined method, got {nas.method!r}")
    base = SearchSession(net, data, replace(nas, stage2_epochs=0), train, rng, heldout=heldout)
    base.run()

    results: Dict[float, SearchResult] = {}
    for k, eta in enumerate(etas):
        swept = copy.deepcopy(net)
        swept.arch = ArchitectureWeights.zeros(net.spec)
        session = SearchSession(
            swept,
            base.train_data,
            replace(nas, eta=float(eta)),
            train,
            rng.spawn("sweep", k),
            heldout=base.heldout,
            step=base.stage1_steps,
        )
        results[float(eta)] = session.run()
        logger.info("eta=%g selects %s", eta, format_candidate(top_candidate(swept.arch, net.spec), net.spec).replace("\n", "; "))
    return results


@dataclass
class TwoStageResult:
    candidate: CandidateArchitecture
    context_search: SearchResult
    dim_search: SearchResult
    context_spec: SearchSpaceSpec
    dim_spec: SearchSpaceSpec


NetFactory = Callable[[SearchSpaceSpec, Rng], SuperNetwork]


def run_two_stage_search(
    net_factory: NetFactory,
    spec: SearchSpaceSpec,
    data: Dataset,
    nas: NasConfig,
    train: TrainConfig,
    rng: Rng,
    heldout: Optional[Dataset] = None,
) -> TwoStageResult:
    """Contexts first (dims pinned to the default), then dims with the chosen contexts pinned."""
    if not (spec.search_context and spec.search_dims):
        raise ValueError("two-stage search needs both context and dim groups enabled")

    context_spec = replace(spec, search_dims=False)
    net_a = net_factory(context_spec, rng.spawn("context-net"))
    res_a = run_search(net_a, data, nas, train, rng.spawn("context-search"), heldout)
    contexts = top_candidate(res_a.weights, context_spec)

    pinned = tuple(
        LayerChoice(ch.left, ch.right, spec.default_choice(l).dim_index) for l, ch in enumerate(contexts)
    )
    dim_spec = replace(spec, search_context=False, pinned=pinned)
    net_b = net_factory(dim_spec, rng.spawn("dim-net"))
    res_b = run_search(net_b, data, nas, train, rng.spawn("dim-search"), heldout)
    dims = top_candidate(res_b.weights, dim_spec)

    combined = CandidateArchitecture(
        tuple(LayerChoice(c.left, c.right, d.dim_index) for c, d in zip(contexts, dims))
    )
    return TwoStageResult(combined, res_a, res_b, context_spec, dim_spec)


@dataclass
class BaselineResult:
    best: CandidateArchitecture
    table: pd.DataFrame


def random_search_baseline(
    spec: SearchSpaceSpec,
    train_data: Dataset,
    valid_data: Dataset,
    k: int,
    train: TrainConfig,
    rng: Rng,
) -> BaselineResult:
    """Retrain k uniform samples; lowest held-out loss wins, then fewer parameters, then sample order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sampler = rng.spawn(STREAM_SAMPLE)
    rows = []
    for i in range(k):
        cand = sample_onehot_uniform(spec, sampler)
        res = retrain_candidate(cand, spec, train_data, valid_data, replace(train, seed=derive_seed(train.seed, "random", i)))
        rows.append(
            {
                "sample": i,
                "candidate": format_candidate(cand, spec).replace("\n", "; "),
                "loss": res.loss,
                "accuracy": res.accuracy,
                "params": network_param_count(cand, spec),
                "_cand": cand,
            }
        )
    table = pd.DataFrame(rows)
    order = table.sort_values(["loss", "params", "sample"], kind="mergesort")
    best_row = order.index[0]
    table["selected"] = table.index == best_row
    best = table.loc[best_row, "_cand"]
    return BaselineResult(best, table.drop(columns="_cand"))
