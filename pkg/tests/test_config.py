import math
from pathlib import Path

import pytest

from adjopt.config import (PROBLEMS, ConfigError, default_config, load_config, parse_config)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_validate_for_every_problem():
    for problem in PROBLEMS:
        assert default_config(problem).validate().problem == problem


def test_parsing_types_and_comments():
    cfg = parse_config("""
        # comment line
        n = 12          # trailing comment
        lower = none
        upper = 0.25
        checkpoint = yes
        snaps_disk = 0
        T = 0.5
        dt = 0.1
    """, "transient-control")
    assert cfg.n == 12 and cfg.lower == -math.inf and cfg.upper == 0.25
    assert cfg.checkpoint is True and cfg.snaps_disk == 0 and cfg.steps == 5


def test_levels_list():
    assert parse_config("levels = 4, 8 16", "mms-smooth").levels == (4, 8, 16)


@pytest.mark.parametrize("text,problem,match", [
    ("bogus = 1", "heat-control", "unknown key"),
    ("levels = 4 8", "heat-control", "unknown key"),
    ("n = many", "heat-control", "bad value"),
    ("lower = 1\nupper = 0", "heat-control", "exceeds"),
    ("gtol = 0", "heat-control", "positive"),
    ("levels = 8", "mms-smooth", "two levels"),
    ("T = 1.05\ndt = 0.1", "transient-control", "whole number"),
    ("checkpoint = maybe", "transient-control", "bad value"),
    ("checkpoint = yes\nsnaps_ram = 0\nsnaps_disk = 0", "transient-control", "snapshot"),
    ("alpha0 = 0", "mpec", "alpha0"),
    ("method = newton", "heat-control", "method"),
    ("problem = mpec", "heat-control", "not"),
])
def test_invalid_configs(text, problem, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text, problem)


def test_unknown_problem_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        default_config("wave")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.cfg", "heat-control")


@pytest.mark.parametrize("name,problem", [
    ("heat-bounded.cfg", "heat-control"), ("heat-unbounded.cfg", "heat-control"),
    ("mms-smooth.cfg", "mms-smooth"), ("mms-bangbang.cfg", "mms-bangbang"),
    ("transient.cfg", "transient-control"), ("mpec.cfg", "mpec"),
])
def test_shipped_configs_load(name, problem):
    assert load_config(CONFIGS / name, problem).problem == problem
