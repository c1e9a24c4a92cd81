import math

import numpy as np
import pytest

from core.cauchy_solver import StepConfig
from core.errors import ParameterError
from core.grid_core import ForcingPath, SpaceGrid, TimeGrid, sup_distance
from core.monotone_ops import OperatorSpec, PhiSpec
from core.oracles import contraction_rate, cos_periodic
from core.periodic_solver import (
    apriori_check,
    ball_invariance_check,
    contraction_probe,
    find_periodic,
    gronwall_radius,
    solve_convex,
    solve_extremal,
    solve_nonconvex,
    solve_regularized_path,
)
from core.scenarios import builtin_scenario
from core.set_valued import MultimapSpec, Selection

LINEAR = OperatorSpec(kind="scalar_linear", a=1.0, strong_monotonicity_c0=1.0)
ZERO_PHI = PhiSpec()
CFG = StepConfig()
INTERVAL = MultimapSpec(control={"shape": "interval", "lo": -1.0, "hi": 1.0})


def test_contraction_rate_of_poincare_map(scalar_space):
    grid = TimeGrid(1.0, 2000)
    h = ForcingPath.zeros(grid, scalar_space)
    ratios = contraction_probe(LINEAR, ZERO_PHI, CFG, grid, h, 20, np.random.default_rng(0))
    assert len(ratios) == 20
    for r in ratios:
        assert abs(r - math.exp(-1.0)) <= 0.01


def test_contraction_probe_is_deterministic_across_workers(scalar_space):
    grid = TimeGrid(1.0, 100)
    h = ForcingPath.constant(grid, scalar_space, 0.5)
    serial = contraction_probe(LINEAR, ZERO_PHI, CFG, grid, h, 6, np.random.default_rng(5))
    threaded = contraction_probe(LINEAR, ZERO_PHI, CFG, grid, h, 6, np.random.default_rng(5), jobs=3)
    assert serial == threaded


def test_cos_forcing_periodic_oracle(scalar_space):
    grid = TimeGrid(2.0 * math.pi, 4000)
    h = ForcingPath.from_function(grid, scalar_space, lambda t, _: -math.cos(t))
    traj, report = find_periodic(LINEAR, ZERO_PHI, CFG, grid, h)
    exact = np.array([cos_periodic(t) for t in grid.times()])
    assert np.max(np.abs(traj.states[:, 0] - exact)) <= 5e-3
    assert report.periodicity_residual <= 1e-8
    assert apriori_check(traj, h, ZERO_PHI, 1.0) >= 0.0
    rates = contraction_rate(1.0, grid.b)
    assert report.contraction_rate_bound == pytest.approx(rates["verified"])
    assert report.stated_contraction_rate == pytest.approx(rates["stated"])
    assert all(r <= rates["verified"] + 0.05 for r in report.contraction_estimates)


def test_periodic_solve_needs_strong_monotonicity(scalar_space, unit_grid):
    op = OperatorSpec(kind="scalar_power", p=4.0)
    with pytest.raises(ParameterError):
        find_periodic(op, ZERO_PHI, CFG, unit_grid, ForcingPath.zeros(unit_grid, scalar_space))


def test_gronwall_radius_closed_form(scalar_space):
    radius = gronwall_radius(INTERVAL, ZERO_PHI, 1.0, TimeGrid(1.0, 10), scalar_space)
    assert radius == pytest.approx(1.1 * math.e)


def test_convex_fixed_point_on_interval(scalar_space, unit_grid):
    sol = solve_convex(LINEAR, ZERO_PHI, CFG, unit_grid, scalar_space, INTERVAL)
    assert np.max(np.abs(sol.trajectory.states)) <= 1e-8
    assert sol.report.forcing_fixpoint_gap <= 1e-8
    assert sol.report.outer_iterations <= 50
    assert sol.report.membership_defect <= 1e-10
    assert sol.report.workflow == "convex"


@pytest.mark.parametrize(
    "selection",
    [
        Selection("minimal_norm"),
        Selection("centroid"),
        Selection("extremal_vertex", schedule=("+",)),
        Selection("extremal_vertex", schedule=("+", "-"), schedule_dt=0.5),
        None,
    ],
)
def test_hartman_ball_is_invariant(scalar_space, unit_grid, selection):
    F = MultimapSpec(
        drift={"kind": "linear", "coefficient": 1.0},
        control={"shape": "interval", "lo": -0.5, "hi": 0.5},
        hartman_radius=1.0,
    )
    if selection is None:
        selection = Selection("near_target", target=ForcingPath.constant(unit_grid, scalar_space, 0.3), eps=1e-3)
    sol = solve_convex(LINEAR, ZERO_PHI, CFG, unit_grid, scalar_space, F, selection, outer_tol=1e-6)
    norms = np.abs(sol.trajectory.states[:, 0])
    assert np.max(norms) <= 1.01
    assert sol.report.ball_margin >= -0.01
    assert sol.report.truncation_radius == 1.0


def test_nonconvex_finite_control_set(scalar_space, unit_grid):
    F = MultimapSpec(control={"shape": "finite_set", "points": [-1.0, 0.5, 1.0]})
    sol = solve_nonconvex(LINEAR, ZERO_PHI, CFG, unit_grid, scalar_space, F)
    assert np.allclose(sol.forcing.values, 0.5)
    assert np.allclose(sol.trajectory.states, -0.5, atol=1e-7)
    assert sol.report.membership_defect == 0.0
    assert sol.report.workflow == "nonconvex"


def test_extremal_forcing_uses_vertices(scalar_space, unit_grid):
    sol = solve_extremal(LINEAR, ZERO_PHI, CFG, unit_grid, scalar_space, INTERVAL, delta=0.05)
    values = sol.forcing.values[:, 0]
    assert np.all(np.abs(np.abs(values) - 1.0) <= 1e-12)
    assert sol.report.extremal is True
    assert sol.report.inclusion_defect <= 10 * CFG.inner_tol / unit_grid.tau


def test_regularized_path_on_cubic_drift():
    scn = builtin_scenario("cubic_regularized")
    sol = solve_regularized_path(
        scn.op, scn.phi, scn.step, scn.grid, scn.space, scn.F, eps_schedule=(1e-1, 1e-2, 1e-3, 1e-4)
    )
    distances = sol.report.consecutive_sup_distances
    assert len(distances) == 3
    assert all(b < a for a, b in zip(distances, distances[1:]))
    assert sol.report.inclusion_defect <= 10 * scn.step.inner_tol / scn.grid.tau
    assert sol.report.workflow == "regularized_path"
    assert sol.report.eps_schedule == [1e-1, 1e-2, 1e-3, 1e-4]


def test_regularized_path_validates_schedule(scalar_space, unit_grid):
    op = OperatorSpec(kind="scalar_power", p=4.0)
    with pytest.raises(ParameterError):
        solve_regularized_path(op, ZERO_PHI, CFG, unit_grid, scalar_space, INTERVAL, eps_schedule=(1e-2, 1e-1))
    with pytest.raises(ParameterError):
        solve_regularized_path(op, ZERO_PHI, CFG, unit_grid, scalar_space, INTERVAL, eps_schedule=(1e-3, 1e-7))
    with pytest.raises(ParameterError):
        solve_regularized_path(op, ZERO_PHI, CFG, unit_grid, scalar_space, INTERVAL, stage="extremal")


def test_report_serializes(scalar_space, unit_grid):
    sol = solve_convex(LINEAR, ZERO_PHI, CFG, unit_grid, scalar_space, INTERVAL)
    data = sol.report.to_dict()
    assert data["workflow"] == "convex"
    assert data["stated_contraction_rate"] == pytest.approx(math.exp(-2.0))


def test_constant_forcing_gives_stationary_solution(scalar_space, unit_grid):
    h = ForcingPath.constant(unit_grid, scalar_space, -1.0)
    traj, report = find_periodic(LINEAR, ZERO_PHI, CFG, unit_grid, h)
    assert np.max(np.abs(traj.states - 1.0)) <= 1e-7
    assert ball_invariance_check(traj, 2.0) == pytest.approx(1.0, abs=1e-7)
    assert report.poincare_iterations >= 2


def test_periodic_solution_independent_of_start(scalar_space):
    grid = TimeGrid(2.0 * math.pi, 400)
    h = ForcingPath.from_function(grid, scalar_space, lambda t, _: -math.cos(t))
    a, _ = find_periodic(LINEAR, ZERO_PHI, CFG, grid, h, x_init=np.zeros(1))
    b, _ = find_periodic(LINEAR, ZERO_PHI, CFG, grid, h, x_init=np.full(1, 5.0))
    assert sup_distance(a, b) <= 1e-7


def test_oscillating_forcings_converge(scalar_space):
    grid = TimeGrid(1.0, 2000)
    h = ForcingPath.constant(grid, scalar_space, -0.5)
    base, _ = find_periodic(LINEAR, ZERO_PHI, CFG, grid, h)
    gaps = []
    for n in (4, 16, 64):
        wiggle = ForcingPath.from_function(grid, scalar_space, lambda t, _, n=n: math.sin(n * math.pi * t))
        traj, _ = find_periodic(LINEAR, ZERO_PHI, CFG, grid, h + wiggle)
        gaps.append(sup_distance(traj, base))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 0.01


def test_apriori_check_needs_positive_constant(scalar_space, unit_grid):
    h = ForcingPath.zeros(unit_grid, scalar_space)
    traj, _ = find_periodic(LINEAR, ZERO_PHI, CFG, unit_grid, h)
    with pytest.raises(ParameterError):
        apriori_check(traj, h, ZERO_PHI, 0.0)


def _spot_selections(grid, space):
    fixed = [
        Selection("minimal_norm"),
        Selection("centroid"),
        Selection("extremal_vertex", schedule=("+",)),
        Selection("extremal_vertex", schedule=("-",)),
        Selection("extremal_vertex", schedule=("+", "-"), schedule_dt=0.5),
    ]
    targets = [
        Selection(
            "near_target",
            target=ForcingPath(grid, space, np.random.default_rng(seed).uniform(-1.0, 1.0, (grid.n_steps, 1))),
            eps=1e-3,
        )
        for seed in range(5)
    ]
    return fixed + targets


def test_solutions_share_ball_and_derivative_bound(scalar_space, unit_grid):
    F = MultimapSpec(
        drift={"kind": "linear", "coefficient": 1.0},
        control={"shape": "interval", "lo": -0.5, "hi": 0.5},
        hartman_radius=1.0,
    )
    slopes = []
    for selection in _spot_selections(unit_grid, scalar_space):
        sol = solve_convex(LINEAR, ZERO_PHI, CFG, unit_grid, scalar_space, F, selection, outer_tol=1e-6)
        states = sol.trajectory.states[:, 0]
        assert np.max(np.abs(states)) <= 1.01
        slopes.append(float(np.max(np.abs(np.diff(states))) / unit_grid.tau))
    # |u'| <= |A u| + |h| <= 1 + (1 + 0.5) on the unit ball
    assert max(slopes) <= 2.5 + 0.05


def test_convex_solve_with_dissipative_drift_and_box(scalar_space):
    grid = TimeGrid(1.0, 400)
    F = MultimapSpec(
        drift={"kind": "linear", "coefficient": -0.5},
        control={"shape": "box", "radius": 1.0, "channels": 1},
        gain={"values": [1.0]},
        sign=-1,
    )
    target = ForcingPath.from_function(grid, scalar_space, lambda t, _: 1.5 * math.cos(2.0 * math.pi * t))
    selection = Selection("near_target", target=target, eps=1e-3)
    sol = solve_convex(LINEAR, ZERO_PHI, CFG, grid, scalar_space, F, selection, theta=1.0, outer_tol=1e-7)
    report = sol.report
    assert report.forcing_fixpoint_gap <= 1e-7
    assert report.periodicity_residual <= 1e-7
    assert report.membership_defect <= 1e-10
    assert report.inclusion_defect <= 10 * CFG.inner_tol / grid.tau
    assert np.max(np.abs(sol.trajectory.states)) > 0.05
    # the target leaves the images where |1.5 cos| exceeds the box, so some steps are clipped
    assert np.max(np.abs(sol.forcing.values - target.values)) > 0.1
