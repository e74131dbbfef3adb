# tdnas/report.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from textwrap import wrap
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas

from .oracle import ORACLE_COLUMNS, OracleReport

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["step", "layer", "group", "choice", "lambda"]


def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def trajectory_frame(log: Sequence[Tuple[int, int, str, np.ndarray]]) -> pd.DataFrame:
    rows = []
    for step, layer, group, lam in log:
        for choice, value in enumerate(np.asarray(lam, dtype=np.float64)):
            rows.append((int(step), int(layer), group, choice, float(value)))
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def emit_lambda_trajectory(log: Sequence[Tuple[int, int, str, np.ndarray]], path: Path) -> Path:
    """One row per (snapshot, choice): step,layer,group,choice,lambda."""
    if len(log) == 0:
        raise ValueError("empty lambda trajectory")
    path = _ensure_parent(path)
    trajectory_frame(log).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_lambda_trajectory(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


def write_oracle_csv(report: OracleReport, path: Path) -> Path:
    """CSV with candidate,loss,params,nas_prob,oracle_rank,nas_rank plus a '# ...' summary line."""
    path = _ensure_parent(path)
    table = report.table
    for col in ORACLE_COLUMNS:
        if col not in table:
            table = table.assign(**{col: np.nan})
    text = table[ORACLE_COLUMNS].to_csv(index=False, float_format="%.17g", lineterminator="\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
        f.write(report.summary_line() + "\n")
    return path


def read_oracle_csv(path: Path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """(table, summary fields) of an oracle.csv."""
    summary: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                for item in line[1:].split():
                    key, _, value = item.partition("=")
                    summary[key] = value
    return pd.read_csv(path, comment="#"), summary


def write_table(table: pd.DataFrame, path: Path) -> Path:
    path = _ensure_parent(path)
    table.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def write_text(text: str, path: Path) -> Path:
    path = _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


# ---------------------------------------------------------------------------
# Run report
# ---------------------------------------------------------------------------

@dataclass
class RunSummary:
    method: str
    selected: str
    selected_prob: float
    params: int
    top_n: List[Tuple[str, float]] = field(default_factory=list)
    retrain: Optional[pd.DataFrame] = None
    spearman: Optional[str] = None
    kendall: Optional[str] = None
    nas_top1_oracle_rank: Optional[str] = None
    baseline: Optional[str] = None
    two_stage: Optional[str] = None


def format_report(summary: RunSummary) -> str:
    lines = [
        "Architecture search report",
        "",
        f"method: {summary.method}",
        "selected architecture:",
    ]
    lines.extend(f"  {ln}" for ln in summary.selected.splitlines())
    lines.append(f"path probability: {summary.selected_prob:.6f}")
    lines.append(f"parameter count: {summary.params}")

    if summary.top_n:
        lines.append("")
        lines.append(f"top {len(summary.top_n)} candidates:")
        for k, (text, prob) in enumerate(summary.top_n, start=1):
            lines.append(f"  #{k} prob={prob:.6f}  {text.replace(chr(10), '; ')}")

    if summary.retrain is not None and len(summary.retrain):
        lines.append("")
        lines.append("retrained from scratch:")
        for row in summary.retrain.itertuples(index=False):
            lines.append(f"  #{row.k} loss={row.loss:.6f} accuracy={row.accuracy:.4f} params={row.params}")

    lines.append("")
    if summary.spearman is None:
        lines.append("oracle: not run")
    else:
        lines.append(f"oracle spearman: {summary.spearman}")
        lines.append(f"oracle kendall: {summary.kendall}")
        lines.append(f"NAS top-1 oracle rank: {summary.nas_top1_oracle_rank}")

    if summary.baseline:
        lines.append("")
        lines.append("random-search baseline:")
        lines.extend(f"  {ln}" for ln in summary.baseline.splitlines())
    if summary.two_stage:
        lines.append("")
        lines.append("two-stage search:")
        lines.extend(f"  {ln}" for ln in summary.two_stage.splitlines())
    return "\n".join(lines) + "\n"


def _draw_wrapped_text(
    c: canvas.Canvas,
    text: str,
    x: float,
    y: float,
    max_width: int,
    line_height: int,
) -> float:
    """Draw wrapped text and return the final y position."""
    lines = []
    for line in text.splitlines():
        if not line.strip():
            lines.append("")
            continue
        lines.extend(wrap(line, max_width, subsequent_indent="    "))

    for line in lines:
        if y < 60:
            c.showPage()
            y = c._pagesize[1] - 50
            c.setFont("Courier", 9)
        if line:
            c.drawString(x, y, line)
        y -= line_height
    return y


def write_report_pdf(summary: RunSummary, pdf_path: Path) -> Path:
    """PDF rendering of the report text; invariant mode keeps re-runs byte-identical."""
    pdf_path = _ensure_parent(pdf_path)
    c = canvas.Canvas(str(pdf_path), pagesize=A4, invariant=1)
    width, height = A4
    margin = 50
    y = height - margin

    c.setFont("Helvetica-Bold", 16)
    c.drawString(margin, y, "Architecture Search Report")
    y -= 26

    c.setFont("Helvetica", 10)
    c.drawString(margin, y, f"Method: {summary.method}")
    y -= 15
    c.drawString(margin, y, f"Parameter count of the selected architecture: {summary.params}")
    y -= 22

    c.setFont("Courier", 9)
    body = format_report(summary).split("\n", 2)[-1]
    _draw_wrapped_text(c, body, margin, y, max_width=90, line_height=12)

    c.showPage()
    c.save()
    return pdf_path
