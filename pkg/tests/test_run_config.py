# tests/test_run_config.py
from pathlib import Path

import pytest

from tdnas import config
from tdnas.errors import ConfigError
from tdnas.run_config import (
    RunConfig,
    config_fields,
    parse_config,
    parse_config_text,
    parse_value,
)
from tdnas.search import NasConfig
from tdnas.supernet import SearchSpaceSpec


@pytest.mark.parametrize(
    "raw, value",
    [
        ("3", 3),
        ("-2", -2),
        ("0.3", 0.3),
        ("1e-3", 1e-3),
        ("true", True),
        ("False", False),
        ('"pipe-gumbel"', "pipe-gumbel"),
        ("2, 4, 8", [2, 4, 8]),
    ],
)
def test_parse_value(raw, value):
    assert parse_value(raw) == value


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config_text("[search]\neta = 0.3\n", base_dir=tmp_path)
    assert cfg.nas == NasConfig(eta=0.3)
    assert cfg.space == SearchSpaceSpec()
    assert cfg.train.epochs == cfg.nas.retrain_epochs
    assert cfg.paths.out_dir == config.OUT_DIR
    assert cfg.oracle_cap == config.ORACLE_CAP


def test_full_config(tmp_path):
    text = """
# desk-scale run
[space]
num_layers = 3
dim_choices = 2, 4, 8    # bottleneck widths
search_context = false

[search]
method = "softmax"
eta = 0.05
cost = "flops"
oracle_cap = 50

[train]
seed = 11
batch_size = 4

[data]
kind = "planted-rank"
feature_dim = 6
num_classes = 5

[paths]
out_dir = "runs/a"
dataset = "/abs/data.synd"
"""
    cfg = parse_config_text(text, base_dir=tmp_path)
    assert cfg.space.num_layers == 3
    assert cfg.space.dim_choices == (2, 4, 8)
    assert not cfg.space.search_context
    assert (cfg.space.input_dim, cfg.space.num_classes) == (6, 5)
    assert cfg.nas.method == "softmax" and cfg.nas.cost == "flops"
    assert cfg.oracle_cap == 50
    assert (cfg.train.seed, cfg.train.batch_size) == (11, 4)
    assert cfg.data.kind == "planted-rank"
    assert cfg.paths.out_dir == tmp_path / "runs" / "a"
    assert cfg.paths.dataset_path == Path("/abs/data.synd")
    assert cfg.paths.checkpoint_path == tmp_path / "runs" / "a" / config.SUPERNET_FILE


def test_duplicate_key_names_the_line():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[search]\neta = 0.1\n\neta = 0.2\n")
    assert err.value.line == 4
    assert "line 4" in str(err.value)


def test_unknown_key_and_section():
    with pytest.raises(ConfigError, match="'beta'") as err:
        parse_config_text("[search]\nbeta = 1\n")
    assert err.value.line == 2
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[model]\nx = 1\n")


@pytest.mark.parametrize(
    "text, expected",
    [
        ("[search]\neta = fast\n", "a decimal"),
        ("[space]\nnum_layers = 2.5\n", "an integer"),
        ("[space]\nsearch_dims = 1\n", "a boolean"),
        ("[space]\ndim_choices = 2, x\n", "a comma-separated list of integers"),
        ("[search]\nmethod = 3\n", "a string"),
    ],
)
def test_type_mismatch_names_the_expected_type(text, expected):
    with pytest.raises(ConfigError, match=expected) as err:
        parse_config_text(text)
    assert err.value.line == 2


def test_syntax_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as err:
        parse_config_text("eta = 0.1\n")
    assert err.value.line == 1
    with pytest.raises(ConfigError) as err:
        parse_config_text("[search]\neta 0.1\n")
    assert err.value.line == 2


def test_comments_need_no_leading_space():
    cfg = parse_config_text('[search]\neta = 0.1#fast\n[paths]\nout_dir = "runs/#1" # quoted\n', base_dir=Path("/w"))
    assert cfg.nas.eta == 0.1
    assert cfg.paths.out_dir.name == "#1"


def test_indented_lines_are_rejected():
    with pytest.raises(ConfigError, match="indented") as err:
        parse_config_text("[search]\neta = 0.1\n  top_n = 3\n")
    assert err.value.line == 3


def test_default_section_is_rejected():
    with pytest.raises(ConfigError, match=r"unknown section \[DEFAULT\]") as err:
        parse_config_text("# defaults\n[DEFAULT]\neta = 1\n")
    assert err.value.line == 2


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError):
        parse_config_text('[search]\nmethod = "adam"\n')
    with pytest.raises(ConfigError):
        parse_config_text("[search]\noracle_cap = 0\n")


def test_overrides(tmp_path):
    cfg = RunConfig().with_overrides(seed=5, out=tmp_path, top=7, method="gumbel", eta=0.2)
    assert cfg.train.seed == cfg.data.seed == 5
    assert cfg.paths.out_dir == tmp_path
    assert (cfg.nas.top_n, cfg.nas.method, cfg.nas.eta) == (7, "gumbel", 0.2)
    assert cfg.retrain.epochs == cfg.nas.retrain_epochs
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(method="adam")


def test_parse_config_resolves_paths_next_to_the_file(tmp_path):
    path = tmp_path / "conf" / "run.cfg"
    path.parent.mkdir()
    path.write_text('[paths]\ncheckpoint = "net.tdnf"\n', encoding="utf-8")
    assert parse_config(path).paths.checkpoint_path == path.parent.resolve() / "net.tdnf"


def test_config_fields_cover_every_section():
    fields = config_fields()
    assert "search.eta" in fields and "space.dim_choices" in fields and "paths.out_dir" in fields
