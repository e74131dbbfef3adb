# tdnas/pipeline.py
"""
Run steps shared by the command-line entry point. Every step reads and
writes artifacts under the run's output directory, so steps can be run one
at a time or chained by `run_pipeline`.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from . import config
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset_schema import Dataset, load_dataset, save_dataset
from .errors import ShapeError
from .generator import generate_dataset, split_heldout
from .lattice import build_lattice, format_candidate, format_kbest, k_best, parse_kbest
from .numeric import Rng, STREAM_INIT, STREAM_SEARCH, STREAM_SPLIT
from .oracle import brute_force_rank, compare_nas_to_oracle, space_size
from .report import (
    RunSummary,
    emit_lambda_trajectory,
    format_report,
    read_oracle_csv,
    write_oracle_csv,
    write_report_pdf,
    write_table,
    write_text,
)
from .run_config import RunConfig
from .search import SearchSession, random_search_baseline, run_two_stage_search
from .supernet import CandidateArchitecture, SuperNetwork, network_param_count
from .trainer import retrain_candidate

logger = logging.getLogger(__name__)


def _load_data(cfg: RunConfig) -> Dataset:
    data = load_dataset(cfg.paths.dataset_path)
    if data.feature_dim != cfg.space.input_dim or data.num_classes != cfg.space.num_classes:
        raise ShapeError(
            f"dataset has D={data.feature_dim} K={data.num_classes}, "
            f"config expects D={cfg.space.input_dim} K={cfg.space.num_classes}"
        )
    return data


def _split(cfg: RunConfig, data: Dataset) -> Tuple[Dataset, Dataset]:
    """Same train / held-out partition the pipelined search uses."""
    return split_heldout(data, cfg.nas.heldout_fraction, Rng(cfg.train.seed, STREAM_SPLIT))


def step_gen_data(cfg: RunConfig) -> Path:
    data = generate_dataset(cfg.data)
    path = save_dataset(data, cfg.paths.dataset_path)
    logger.info("wrote %d %s sequences to %s", len(data), cfg.data.kind, path)
    return path


def step_search(cfg: RunConfig, resume: bool = False) -> Dict[str, Any]:
    data = _load_data(cfg)
    ckpt_path = cfg.paths.checkpoint_path

    if resume and ckpt_path.exists():
        session = SearchSession.resume(load_checkpoint(ckpt_path), data, cfg.nas, cfg.train)
        logger.info("resuming search at step %d of %d", session.step, session.total_steps)
    else:
        net = SuperNetwork.initialize(cfg.space, Rng(cfg.train.seed, STREAM_INIT))
        session = SearchSession(net, data, cfg.nas, cfg.train, Rng(cfg.train.seed, STREAM_SEARCH))
    result = session.run()

    save_checkpoint(session.checkpoint(), ckpt_path)
    traj_path = emit_lambda_trajectory(result.trajectory, cfg.paths.artifact(config.TRAJECTORY_FILE))

    top_cand, top_prob = k_best(build_lattice(result.weights, cfg.space), 1)[0]
    summary: Dict[str, Any] = {
        "method": cfg.nas.method,
        "steps": result.steps,
        "final_loss": result.losses[-1] if result.losses else None,
        "checkpoint": str(ckpt_path),
        "trajectory": str(traj_path),
        "top1": format_candidate(top_cand, cfg.space),
        "top1_prob": top_prob,
    }

    if cfg.nas.two_stage:
        two = run_two_stage_search(
            SuperNetwork.initialize,
            cfg.space,
            data,
            cfg.nas,
            cfg.train,
            Rng(cfg.train.seed, STREAM_SEARCH).spawn("two-stage"),
        )
        text = format_candidate(two.candidate, cfg.space) + "\n"
        summary["two_stage"] = str(write_text(text, cfg.paths.artifact(config.TWO_STAGE_FILE)))
    return summary


def step_extract(cfg: RunConfig) -> List[Tuple[CandidateArchitecture, float]]:
    ckpt = load_checkpoint(cfg.paths.checkpoint_path)
    if ckpt.spec != cfg.space:
        raise ValueError("checkpoint search space differs from the configured one")
    lattice = build_lattice(ckpt.supernet().arch, cfg.space)
    best = k_best(lattice, cfg.nas.top_n)
    write_text(format_kbest(best, cfg.space), cfg.paths.artifact(config.TOPN_FILE))
    return best


def _read_topn(cfg: RunConfig) -> List[Tuple[CandidateArchitecture, float]]:
    with open(cfg.paths.artifact(config.TOPN_FILE), "r", encoding="utf-8") as f:
        return parse_kbest(f.read(), cfg.space)


def step_retrain(cfg: RunConfig) -> pd.DataFrame:
    train_data, valid_data = _split(cfg, _load_data(cfg))
    rows = []
    for k, (cand, prob) in enumerate(_read_topn(cfg), start=1):
        res = retrain_candidate(cand, cfg.space, train_data, valid_data, cfg.retrain)
        save_checkpoint(
            Checkpoint.of_standalone(res.network, res.momenta, res.steps),
            cfg.paths.artifact(config.retrain_file(k)),
        )
        rows.append(
            {
                "k": k,
                "candidate": format_candidate(cand, cfg.space).replace("\n", "; "),
                "loss": res.loss,
                "accuracy": res.accuracy,
                "params": network_param_count(cand, cfg.space),
            }
        )
        logger.info("retrained #%d: loss %.4f, accuracy %.3f", k, res.loss, res.accuracy)
    table = pd.DataFrame(rows, columns=["k", "candidate", "loss", "accuracy", "params"])
    write_table(table, cfg.paths.artifact(config.RETRAIN_TABLE))
    return table


def step_oracle(cfg: RunConfig, workers: int = config.WORKERS):
    train_data, valid_data = _split(cfg, _load_data(cfg))
    ckpt = load_checkpoint(cfg.paths.checkpoint_path)
    report = brute_force_rank(cfg.space, train_data, valid_data, cfg.retrain, workers=workers, cap=cfg.oracle_cap)
    report = compare_nas_to_oracle(ckpt.supernet().arch, report, cfg.space)
    write_oracle_csv(report, cfg.paths.artifact(config.ORACLE_FILE))
    return report


def step_baseline(cfg: RunConfig):
    train_data, valid_data = _split(cfg, _load_data(cfg))
    result = random_search_baseline(
        cfg.space,
        train_data,
        valid_data,
        cfg.nas.random_samples,
        cfg.retrain,
        Rng(cfg.train.seed, STREAM_SEARCH).spawn("baseline"),
    )
    write_table(result.table, cfg.paths.artifact(config.BASELINE_TABLE))
    write_text(format_candidate(result.best, cfg.space) + "\n", cfg.paths.artifact(config.BASELINE_FILE))
    return result


def _read_optional(path: Path) -> Optional[str]:
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def step_report(cfg: RunConfig) -> str:
    ckpt = load_checkpoint(cfg.paths.checkpoint_path)
    lattice = build_lattice(ckpt.supernet().arch, cfg.space)
    top_path = cfg.paths.artifact(config.TOPN_FILE)
    best = _read_topn(cfg) if top_path.exists() else k_best(lattice, cfg.nas.top_n)
    selected, prob = best[0]

    summary = RunSummary(
        method=cfg.nas.method,
        selected=format_candidate(selected, cfg.space),
        selected_prob=prob,
        params=network_param_count(selected, cfg.space),
        top_n=[(format_candidate(c, cfg.space), p) for c, p in best],
        baseline=_read_optional(cfg.paths.artifact(config.BASELINE_FILE)),
        two_stage=_read_optional(cfg.paths.artifact(config.TWO_STAGE_FILE)),
    )
    retrain_path = cfg.paths.artifact(config.RETRAIN_TABLE)
    if retrain_path.exists():
        summary.retrain = pd.read_csv(retrain_path)
    oracle_path = cfg.paths.artifact(config.ORACLE_FILE)
    if oracle_path.exists():
        _, fields = read_oracle_csv(oracle_path)
        summary.spearman = fields.get("spearman")
        summary.kendall = fields.get("kendall")
        summary.nas_top1_oracle_rank = fields.get("nas_top1_oracle_rank")

    text = format_report(summary)
    write_text(text, cfg.paths.artifact(config.REPORT_FILE))
    write_report_pdf(summary, cfg.paths.artifact(config.REPORT_PDF))
    return text


def run_pipeline(cfg: RunConfig, workers: int = config.WORKERS) -> str:
    """gen-data -> search -> extract -> retrain -> oracle (when enumerable) -> report."""
    step_gen_data(cfg)
    step_search(cfg)
    step_extract(cfg)
    step_retrain(cfg)
    size = space_size(cfg.space)
    if size <= cfg.oracle_cap:
        step_oracle(cfg, workers=workers)
    else:
        logger.info("skipping oracle: %d candidates exceed the cap of %d", size, cfg.oracle_cap)
    return step_report(cfg)
