# tests/test_config.py
import pathlib

import pytest

from backend.lib.avgctl_core.config import (TEST1_CONFIG, TEST2_CONFIG, atom_count, builtin_config, dump_config,
                                            parse_config, with_overrides)
from backend.lib.avgctl_core.errors import ConfigError

CONFIGS = pathlib.Path(__file__).parent.parent / "configs"


def parse_error(text, path="bad.ini", overrides=()):
    with pytest.raises(ConfigError) as info:
        parse_config(text, path, overrides)
    return info.value


@pytest.mark.parametrize("config", [TEST1_CONFIG, TEST2_CONFIG])
def test_dump_then_parse_gives_equal_config(config):
    assert parse_config(dump_config(config)) == config


@pytest.mark.parametrize("name", ["test1", "test2"])
def test_shipped_configs_match_builtins(name):
    text = (CONFIGS / f"{name}.ini").read_text()
    assert text == dump_config(builtin_config(name))
    assert parse_config(text, f"{name}.ini") == builtin_config(name)


def test_defaults_fill_missing_keys():
    config = parse_config("# minimal\n[experiment]\nname = tiny\n[output]\ncheck_bound = false\n")
    assert config.experiment.name == "tiny"
    assert config.problem.intervals == 100
    assert config.solver.restarts == 5
    assert config.schedule.n_max == 8
    assert atom_count(config) == 5


def test_lists_and_booleans():
    text = "\n".join([
        "[problem]",
        "state_dim = 2",
        "control_dim = 1",
        "control_lo = 0.0",
        "control_hi = 6.5",
        "periodic = true",
        "[dynamics]",
        "kind = affine",
        "matrices = 1, 0, 0, 1,  0.5, 0, 0, 2",
        "control_map = polar",
        "[grid]",
        "lo = -1, -1",
        "hi = 1, 1",
        "counts = 5",
        "[box]",
        "state_lo = -3, -3",
        "state_hi = 3, 3",
        "control_lo = 0",
        "control_hi = 6.5",
        "[output]",
        "trajectory_x0 = 0.1, 0.2",
        "check_bound = no",
    ])
    config = parse_config(text)
    assert config.problem.periodic == (True,)
    assert config.dynamics.matrices == (1.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.0, 2.0)
    assert config.grid.counts == (5,)
    assert config.output.check_bound is False
    assert atom_count(config) == 2


def test_weights_must_sum_to_one():
    text = "[experiment]\nname = bad\n[schedule]\nrule = constant\nweights = 0.5, 0.1, 0.1, 0.1, 0.1\n"
    err = parse_error(text)
    assert "sum to 1" in err.message
    assert err.lineno == 5
    assert str(err).startswith("bad.ini:5:")


def test_weights_need_one_entry_per_atom():
    err = parse_error("[schedule]\nrule = constant\nweights = 0.5, 0.5\n")
    assert "5 entries" in err.message
    assert err.lineno == 3


def test_horizon_requires_s_before_T():
    err = parse_error("[problem]\ns = 1.0\nT = 1.0\n")
    assert "s < T" in err.message
    assert err.lineno == 3


def test_unknown_key_and_section():
    err = parse_error("[solver]\nrestart = 5\n")
    assert "unknown key 'restart'" in err.message
    assert err.lineno == 2
    err = parse_error("[experiment]\nname = x\n\n[plots]\nstyle = dark\n")
    assert "unknown section [plots]" in err.message
    assert err.lineno == 4


def test_type_errors_name_the_key():
    err = parse_error("[solver]\nrestarts = five\n")
    assert "restarts" in err.message and "expected an integer" in err.message
    assert err.lineno == 2
    assert "expected a number" in parse_error("[problem]\nT = soon\n").message
    assert "expected true or false" in parse_error("[solver]\nspectral = maybe\n").message
    assert "finite" in parse_error("[problem]\nT = inf\n").message


def test_syntax_error_names_file_and_line():
    err = parse_error("seed = 1\n[experiment]\n", path="broken.ini")
    assert err.lineno == 1
    assert str(err).startswith("broken.ini:1:")


def test_dimension_consistency():
    assert "state_dim" in parse_error("[grid]\nlo = -1, -1\n").message
    err = parse_error("[dynamics]\nkind = builtin_test2\n")
    assert "builtin_test2" in err.message
    assert "true_index" in parse_error("[dynamics]\ntrue_index = 5\n").message
    assert "n_min" in parse_error("[schedule]\nn_min = 4\nn_max = 2\n").message


def test_overrides_apply_on_top():
    config = builtin_config("test1", ["schedule.n_max = 3", "experiment.seed=7", "grid.counts=5"])
    assert config.schedule.n_max == 3
    assert config.experiment.seed == 7
    assert config.grid.counts == (5,)
    assert config.problem == TEST1_CONFIG.problem
    assert with_overrides(TEST1_CONFIG, []) is TEST1_CONFIG


def test_bad_overrides():
    with pytest.raises(ConfigError, match="section.key=value"):
        builtin_config("test1", ["n_max=3"])
    with pytest.raises(ConfigError, match="unknown key"):
        builtin_config("test1", ["schedule.n_maximum=3"])
    with pytest.raises(ConfigError, match="s < T"):
        builtin_config("test2", ["problem.s=2.0"])


def test_bound_check_needs_declared_constants():
    err = parse_error("[problem]\nintervals = 10\nlipschitz_h = 1\n[output]\ncheck_bound = true\n")
    assert "lipschitz_l" in err.message
    assert err.lineno == 5
    err = parse_error("[experiment]\nname = x\n[problem]\nintervals = 10\n")
    assert "check_bound" in err.message
    assert err.lineno == 3
    config = parse_config("[problem]\nlipschitz_l = 0\nlipschitz_h = 1\n")
    assert config.output.check_bound


def test_geometric_schedule_needs_two_atoms():
    text = "[dynamics]\nkind = scalar_lambda_sin\nlambdas = 0\n[schedule]\nrule = geometric\n[output]\ncheck_bound = no\n"
    err = parse_error(text)
    assert "at least 2 atoms" in err.message
    assert err.lineno == 5
    single = text.replace("rule = geometric", "rule = constant\nweights = 1")
    assert atom_count(parse_config(single)) == 1
