from pathlib import Path

import numpy as np
import pytest

from core.errors import ConfigError
from core.monotone_ops import check_monotone, random_pairs
from core.oracles import stationary_heat
from core.runner import run_workflow
from core.scenarios import (
    build_parabolic_scenario,
    builtin_names,
    builtin_scenario,
    load_scenario,
    load_scenario_text,
    parse_config_text,
    resolve_scenario,
)

MINIMAL = """\
# minimal scalar convex problem
name = "minimal"
workflow = "convex"
time.b = 1
time.n_steps = 1000
op.kind = "scalar_linear"
op.a = 1
multimap.control.shape = "interval"
seed = 1
"""


def test_parse_nested_keys_and_comments():
    tree, lines = parse_config_text('name = "a#b"  # trailing\n\ntime.b = 2.5\nrelaxation.delta_divisors = [10, 20]\n')
    assert tree == {"name": "a#b", "time": {"b": 2.5}, "relaxation": {"delta_divisors": [10, 20]}}
    assert lines == {"name": 1, "time.b": 3, "relaxation.delta_divisors": 4}


@pytest.mark.parametrize(
    "text, line",
    [
        ("time.b = 1\ntime.b = 2\n", 2),
        ("time = 1\ntime.b = 2\n", 2),
        ("time.b = 2\ntime = 1\n", 2),
        ("name = \"x\"\ntime.b 1\n", 2),
        ("time.b = one\n", 1),
        ("9lives = 1\n", 1),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.line == line


def test_minimal_config_is_valid():
    scn = load_scenario_text(MINIMAL)
    assert scn.workflow == "convex"
    assert scn.grid.n_steps == 1000
    assert scn.F.control.shape == "interval"
    assert scn.phi.kind == "zero"
    echoed = scn.effective_config()
    assert echoed["solver"]["inner_tol"] == 1e-10
    assert echoed["relaxation"]["delta_divisors"] == [10, 20, 40, 80]


def test_p_below_two_names_field():
    text = MINIMAL.replace('op.kind = "scalar_linear"', 'op.kind = "scalar_power"\nop.p = 1.5')
    with pytest.raises(ConfigError) as err:
        load_scenario_text(text)
    assert err.value.field == "op.p"
    assert err.value.line == 7


def test_box_control_without_gain_is_rejected():
    text = MINIMAL.replace('"interval"', '"box"')
    with pytest.raises(ConfigError) as err:
        load_scenario_text(text)
    assert err.value.field == "multimap"
    assert "gain" in str(err.value)
    assert err.value.line == 8


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError) as err:
        load_scenario_text(MINIMAL + "op.stiffness = 2\n")
    assert err.value.field == "op.stiffness"
    with pytest.raises(ConfigError) as err:
        load_scenario_text(MINIMAL + "plot.color = \"red\"\n")
    assert err.value.field == "plot"


def test_workflow_needs_multimap():
    text = "\n".join(line for line in MINIMAL.splitlines() if not line.startswith("multimap"))
    with pytest.raises(ConfigError) as err:
        load_scenario_text(text)
    assert "multimap" in str(err.value)


def test_gradient_operator_needs_space():
    text = MINIMAL.replace('op.kind = "scalar_linear"', 'op.kind = "discrete_p_laplacian"')
    with pytest.raises(ConfigError):
        load_scenario_text(text)


def test_initial_values_must_match_space():
    with pytest.raises(ConfigError) as err:
        load_scenario_text(MINIMAL + 'initial.kind = "values"\ninitial.values = [1, 2]\n')
    assert err.value.field == "initial.values"


def test_near_target_selection_builds_target():
    scn = load_scenario_text(MINIMAL + 'selection.mode = "near_target"\nselection.target = 0.25\n')
    assert scn.selection.mode == "near_target"
    assert np.all(scn.selection.target.values == 0.25)


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "minimal.cfg"
    path.write_text(MINIMAL + '# résumé of defaults\n', encoding="utf-8")
    scn = load_scenario(path)
    assert scn.name == "minimal"
    assert resolve_scenario(str(path)).name == "minimal"
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.cfg")


def test_builtin_catalog_builds():
    for name in builtin_names():
        scn = resolve_scenario(f"builtin:{name}")
        assert scn.name == name
    with pytest.raises(ConfigError):
        builtin_scenario("does_not_exist")


def test_parabolic_heat_matches_stationary_solve():
    scn = builtin_scenario("parabolic_heat")
    assert scn.space.size == 49
    result = run_workflow(scn)
    oracle = stationary_heat(49)
    assert np.max(np.abs(result.trajectory.states - oracle[None, :])) <= 1e-4


def test_parabolic_without_data_is_zero():
    scn = build_parabolic_scenario(n_steps=20)
    result = run_workflow(scn)
    assert np.all(result.trajectory.states == 0.0)


def test_parabolic_p_four_is_monotone(rng):
    scn = builtin_scenario("parabolic_plap4")
    assert scn.op.kind == "discrete_p_laplacian"
    assert scn.op.p == 4.0
    assert scn.workflow == "regularized_path"
    assert check_monotone(scn.op, random_pairs(scn.space, 20, rng), scn.space).passed


def test_parabolic_builder_validates():
    with pytest.raises(ConfigError) as err:
        build_parabolic_scenario(p=1.5)
    assert err.value.field == "op.p"
    with pytest.raises(ConfigError):
        build_parabolic_scenario(beta="quadratic")
    two_d = build_parabolic_scenario(nodes=(5, 4), n_steps=10)
    assert two_d.space.dim == 2
    assert two_d.space.size == 20


def test_example_files_validate():
    folder = Path(__file__).resolve().parent.parent / "scenarios"
    paths = sorted(folder.glob("*.cfg"))
    assert len(paths) == 3
    for path in paths:
        scn = load_scenario(path)
        assert scn.config.seed is not None


def test_sampled_diagnostics_need_a_seed():
    text = MINIMAL.replace("seed = 1\n", "")
    with pytest.raises(ConfigError) as err:
        load_scenario_text(text)
    assert err.value.field == "seed"
    assert err.value.line == 3
    with pytest.raises(ConfigError) as err:
        load_scenario_text(text + "diagnostics.sampled = true\n")
    assert err.value.line == 9
    scn = load_scenario_text(text + "diagnostics.sampled = false\n")
    assert scn.config.seed is None
