# tdnas/oracle.py
"""
Brute-force ground truth for tiny search spaces: retrain every candidate
from scratch and check how well the NAS path probabilities rank them.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import kendalltau, rankdata, spearmanr

from .config import ORACLE_CAP, WORKERS
from .dataset_schema import Dataset
from .errors import CapacityError
from .lattice import build_lattice, k_best, path_probability
from .layer import LayerChoice
from .numeric import derive_seed
from .supernet import ArchitectureWeights, CandidateArchitecture, SearchSpaceSpec, network_param_count
from .trainer import TrainConfig, retrain_candidate

logger = logging.getLogger(__name__)

ORACLE_COLUMNS = ["candidate", "loss", "params", "nas_prob", "oracle_rank", "nas_rank"]


def space_size(spec: SearchSpaceSpec) -> int:
    per_layer = math.prod(spec.group_size(tag) for tag in spec.searched_tags())
    return per_layer ** spec.num_layers


def enumerate_candidates(spec: SearchSpaceSpec, cap: int = ORACLE_CAP) -> List[CandidateArchitecture]:
    """Every candidate, lexicographic in (layer 1 left, right, dim, layer 2 left, ...)."""
    size = space_size(spec)
    if size > cap:
        raise CapacityError(f"oracle cap is {cap}", size)

    per_layer = []
    for l in range(spec.num_layers):
        default = spec.default_choice(l)
        lefts = range(spec.d_left + 1) if spec.search_context else [default.left]
        rights = range(spec.d_right + 1) if spec.search_context else [default.right]
        dims = range(len(spec.dim_choices)) if spec.search_dims else [default.dim_index]
        per_layer.append([LayerChoice(a, b, c) for a, b, c in itertools.product(lefts, rights, dims)])
    return [CandidateArchitecture(tuple(combo)) for combo in itertools.product(*per_layer)]


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"rankings differ in length: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("rank correlation needs at least 2 items")
    return a, b


def spearman(rank_a: Sequence[float], rank_b: Sequence[float]) -> float:
    """Spearman rho with average ranks for ties; 0 when either side is constant."""
    a, b = _check_pair(rank_a, rank_b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    rho = spearmanr(a, b)[0]
    return float(np.clip(rho, -1.0, 1.0))


def kendall(rank_a: Sequence[float], rank_b: Sequence[float]) -> float:
    a, b = _check_pair(rank_a, rank_b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return float(np.clip(kendalltau(a, b)[0], -1.0, 1.0))


@dataclass
class OracleReport:
    spec: SearchSpaceSpec
    candidates: List[CandidateArchitecture]
    table: pd.DataFrame
    spearman: Optional[float] = None
    kendall: Optional[float] = None
    nas_top1_oracle_rank: Optional[int] = None

    def summary_line(self) -> str:
        def fmt(v):
            return "nan" if v is None else repr(v)

        return (
            f"# spearman={fmt(self.spearman)} kendall={fmt(self.kendall)} "
            f"nas_top1_oracle_rank={fmt(self.nas_top1_oracle_rank)}"
        )


def _train_one(cand, spec, train_data, valid_data, cfg, cand_id):
    seeded = replace(cfg, seed=derive_seed(cfg.seed, "oracle", cand_id))
    return cand_id, retrain_candidate(cand, spec, train_data, valid_data, seeded).loss


def brute_force_rank(
    spec: SearchSpaceSpec,
    train_data: Dataset,
    valid_data: Dataset,
    cfg: TrainConfig,
    workers: int = WORKERS,
    cap: int = ORACLE_CAP,
) -> OracleReport:
    """Retrain every candidate with a seed derived from (master seed, candidate id)."""
    candidates = enumerate_candidates(spec, cap)
    logger.info("oracle: retraining %d candidates on %d worker(s)", len(candidates), workers)

    results = Parallel(n_jobs=workers)(
        delayed(_train_one)(cand, spec, train_data, valid_data, cfg, i) for i, cand in enumerate(candidates)
    )
    losses = dict(results)

    table = pd.DataFrame(
        {
            "candidate": np.arange(len(candidates)),
            "loss": [losses[i] for i in range(len(candidates))],
            "params": [network_param_count(c, spec) for c in candidates],
        }
    )
    table["oracle_rank"] = rankdata(table["loss"].to_numpy(), method="average")
    return OracleReport(spec, candidates, table)


def compare_nas_to_oracle(
    weights: ArchitectureWeights,
    report: OracleReport,
    spec: Optional[SearchSpaceSpec] = None,
) -> OracleReport:
    """Fill NAS probabilities, ranks and correlations; higher probability = better rank."""
    spec = report.spec if spec is None else spec
    if spec != report.spec:
        raise ValueError("architecture weights and oracle report describe different search spaces")
    lattice = build_lattice(weights, spec)
    if lattice.space_size() != len(report.candidates):
        raise ValueError(
            f"lattice has {lattice.space_size()} paths, report has {len(report.candidates)} candidates"
        )

    table = report.table.copy()
    probs = np.array([path_probability(lattice, c) for c in report.candidates])
    table["nas_prob"] = probs
    table["nas_rank"] = rankdata(-probs, method="average")
    table = table[ORACLE_COLUMNS]

    top1 = k_best(lattice, 1)[0][0]
    idx = report.candidates.index(top1)
    losses = table["loss"].to_numpy()
    top1_rank = 1 + int(np.sum(losses < losses[idx]))

    rho = spearman(table["oracle_rank"], table["nas_rank"]) if len(table) >= 2 else None
    tau = kendall(table["oracle_rank"], table["nas_rank"]) if len(table) >= 2 else None
    logger.info("NAS vs oracle: spearman %s, kendall %s, NAS top-1 at oracle rank %d", rho, tau, top1_rank)
    return OracleReport(spec, report.candidates, table, rho, tau, top1_rank)
