# tdnas/run_config.py
"""
Run configuration file.

    # comment
    [space]
    num_layers = 2
    dim_choices = 2, 4, 8    # comma-separated list
    [search]
    method = "pipe-gumbel"
    eta = 0.3

Values are integers, decimals, booleans (true/false), quoted strings or
comma-separated lists. Unknown sections and keys are rejected by name.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from . import config
from .errors import ConfigError
from .generator import SyntheticTaskSpec
from .search import NasConfig
from .supernet import SearchSpaceSpec
from .trainer import TrainConfig

_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")

# key -> expected type: int, float, bool, str, list[int]
SCHEMA: Dict[str, Dict[str, str]] = {
    "space": {
        "num_layers": "int",
        "d_left": "int",
        "d_right": "int",
        "dim_choices": "list[int]",
        "search_context": "bool",
        "search_dims": "bool",
        "hidden_dim": "int",
        "default_left": "int",
        "default_right": "int",
        "default_dim": "int",
    },
    "search": {
        "method": "str",
        "gumbel_samples": "int",
        "temp_start": "float",
        "temp_end": "float",
        "eta": "float",
        "cost": "str",
        "heldout_fraction": "float",
        "search_epochs": "int",
        "stage2_epochs": "int",
        "retrain_epochs": "int",
        "top_n": "int",
        "two_stage": "bool",
        "random_samples": "int",
        "oracle_cap": "int",
    },
    "train": {
        "layer_lr": "float",
        "arch_lr": "float",
        "momentum": "float",
        "batch_size": "int",
        "seed": "int",
        "orth_period": "int",
    },
    "data": {
        "kind": "str",
        "num_sequences": "int",
        "frames": "int",
        "feature_dim": "int",
        "num_classes": "int",
        "planted_left": "int",
        "planted_right": "int",
        "planted_rank": "int",
        "noise_sigma": "float",
        "seed": "int",
    },
    "paths": {
        "dataset": "str",
        "checkpoint": "str",
        "out_dir": "str",
    },
}

_TYPE_NAMES = {
    "int": "an integer",
    "float": "a decimal",
    "bool": "a boolean (true/false)",
    "str": "a string",
    "list[int]": "a comma-separated list of integers",
}


@dataclass(frozen=True)
class RunPaths:
    out_dir: Path = config.OUT_DIR
    dataset: Optional[Path] = None
    checkpoint: Optional[Path] = None

    @property
    def dataset_path(self) -> Path:
        return self.dataset if self.dataset is not None else self.out_dir / config.DATASET_FILE

    @property
    def checkpoint_path(self) -> Path:
        return self.checkpoint if self.checkpoint is not None else self.out_dir / config.SUPERNET_FILE

    def artifact(self, name: str) -> Path:
        return self.out_dir / name


@dataclass(frozen=True)
class RunConfig:
    space: SearchSpaceSpec = field(default_factory=SearchSpaceSpec)
    nas: NasConfig = field(default_factory=NasConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    paths: RunPaths = field(default_factory=RunPaths)
    oracle_cap: int = config.ORACLE_CAP

    @property
    def retrain(self) -> TrainConfig:
        """Training settings for from-scratch candidate retraining."""
        return replace(self.train, epochs=self.nas.retrain_epochs)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        out: Optional[Union[str, Path]] = None,
        top: Optional[int] = None,
        method: Optional[str] = None,
        eta: Optional[float] = None,
    ) -> "RunConfig":
        cfg = self
        try:
            if seed is not None:
                cfg = replace(cfg, train=replace(cfg.train, seed=seed), data=replace(cfg.data, seed=seed))
            nas_changes: Dict[str, Any] = {}
            if top is not None:
                nas_changes["top_n"] = top
            if method is not None:
                nas_changes["method"] = method
            if eta is not None:
                nas_changes["eta"] = eta
            if nas_changes:
                cfg = replace(cfg, nas=replace(cfg.nas, **nas_changes))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if out is not None:
            cfg = replace(cfg, paths=replace(cfg.paths, out_dir=Path(out)))
        return cfg


def parse_value(raw: str) -> Union[int, float, bool, str, List[Any]]:
    """Literal value of one `key = value` right-hand side."""
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    if "," in text:
        return [parse_value(part) for part in text.split(",")]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    return text


def _coerce(value: Any, kind: str) -> Any:
    """Value converted to `kind`, or None when it has the wrong type."""
    if kind == "bool":
        return value if isinstance(value, bool) else None
    if kind == "int":
        return value if isinstance(value, int) and not isinstance(value, bool) else None
    if kind == "float":
        if isinstance(value, bool):
            return None
        return float(value) if isinstance(value, (int, float)) else None
    if kind == "str":
        return value if isinstance(value, str) else None
    if kind == "list[int]":
        items = value if isinstance(value, list) else [value]
        if all(isinstance(v, int) and not isinstance(v, bool) for v in items):
            return tuple(items)
        return None
    raise ValueError(f"unknown config type {kind}")


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _clean(text: str) -> str:
    """Drop comments and reject what configparser would otherwise accept quietly.

    Line numbers are preserved so errors still point into the original text.
    """
    out: List[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line).rstrip()
        if not body.strip():
            out.append("")
            continue
        if body[0].isspace():
            raise ConfigError(f"syntax error: indented line {body.strip()!r}", lineno)
        if body.startswith("["):
            name = body.strip()[1:-1].strip() if body.strip().endswith("]") else None
            if name is not None and name not in SCHEMA:
                raise ConfigError(f"unknown section [{name}]", lineno)
        out.append(body)
    return "\n".join(out) + "\n"


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    lines: Dict[Tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            lines.setdefault((section, ""), lineno)
        elif "=" in stripped and section is not None:
            lines.setdefault((section, stripped.split("=", 1)[0].strip().lower()), lineno)
    return lines


def _read(text: str, source: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        strict=True,
        interpolation=None,
        delimiters=("=",),
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
        empty_lines_in_values=False,
    )
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"key outside any section: {exc.line.strip()!r}", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"syntax error: {line.strip()!r}", lineno) from None
    return parser


def parse_config_text(text: str, base_dir: Optional[Path] = None, source: str = "<config>") -> RunConfig:
    text = _clean(text)
    parser = _read(text, source)
    key_lines = _key_lines(text)
    values: Dict[str, Dict[str, Any]] = {name: {} for name in SCHEMA}

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", key_lines.get((section, ""), None))
        for key, raw in parser.items(section):
            line = key_lines.get((section, key))
            kind = SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            if raw is None or raw.strip() == "":
                raise ConfigError(f"{key}: missing value", line)
            value = _coerce(parse_value(raw), kind)
            if value is None:
                raise ConfigError(f"{key}: expected {_TYPE_NAMES[kind]}, got {raw.strip()!r}", line)
            values[section][key] = value

    search = dict(values["search"])
    oracle_cap = search.pop("oracle_cap", config.ORACLE_CAP)
    try:
        data = SyntheticTaskSpec(**values["data"])
        space = SearchSpaceSpec(input_dim=data.feature_dim, num_classes=data.num_classes, **values["space"])
        nas = NasConfig(**search)
        train = TrainConfig(**values["train"])
        train = replace(train, epochs=nas.retrain_epochs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if oracle_cap < 1:
        raise ConfigError("oracle_cap must be >= 1", key_lines.get(("search", "oracle_cap")))

    base = base_dir or Path.cwd()

    def resolve(p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else base / path

    p = values["paths"]
    paths = RunPaths(
        out_dir=resolve(p.get("out_dir")) or config.OUT_DIR,
        dataset=resolve(p.get("dataset")),
        checkpoint=resolve(p.get("checkpoint")),
    )
    return RunConfig(space, nas, train, data, paths, oracle_cap)


def parse_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_config_text(text, base_dir=path.resolve().parent, source=str(path))


def config_fields() -> List[str]:
    """Every `section.key` the parser accepts."""
    return [f"{section}.{key}" for section, keys in SCHEMA.items() for key in keys]
