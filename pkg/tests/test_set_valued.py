import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import ConfigError, ParameterError
from core.grid_core import ForcingPath, SpaceGrid, TimeGrid, Trajectory, h_norm
from core.set_valued import (
    MultimapSpec,
    Selection,
    bracket,
    controls_are_extremal,
    eta_hat,
    growth_modulus,
    hartman_check,
    image_bounds,
    lipschitz_check,
    membership,
    radial_retraction,
    select,
    select_path,
    sphere_samples,
    truncate_multimap,
    vertex_controls,
)
from core.monotone_ops import random_pairs


def _interval(lo=-1.0, hi=1.0, **extra) -> MultimapSpec:
    return MultimapSpec(control={"shape": "interval", "lo": lo, "hi": hi}, **extra)


def test_box_control_needs_gain():
    with pytest.raises(ValidationError):
        MultimapSpec(control={"shape": "box", "radius": 1.0})
    with pytest.raises(ValidationError):
        MultimapSpec(control={"shape": "box", "channels": 2}, gain={"values": [1.0]})


def test_finite_set_points_are_validated():
    with pytest.raises(ValidationError):
        MultimapSpec(control={"shape": "finite_set", "points": []})
    F = MultimapSpec(control={"shape": "finite_set", "points": [-1.0, 0.5, 2.0]})
    assert F.control.points == ((-1.0,), (0.5,), (2.0,))


def test_image_bounds_and_sign(scalar_space):
    x = np.array([0.3])
    lo, hi = image_bounds(_interval(drift={"kind": "constant", "coefficient": 2.0}), 0.0, x, scalar_space)
    assert (lo[0], hi[0]) == (1.0, 3.0)
    lo, hi = image_bounds(_interval(drift={"kind": "constant", "coefficient": 2.0}, sign=-1), 0.0, x, scalar_space)
    assert (lo[0], hi[0]) == (-3.0, -1.0)


def test_minimal_norm_selection(scalar_space):
    u = np.array([0.0])
    assert select(_interval(), Selection("minimal_norm"), 0.0, u, scalar_space)[0] == 0.0
    assert select(_interval(0.5, 1.0), Selection("minimal_norm"), 0.0, u, scalar_space)[0] == 0.5
    assert select(_interval(-2.0, -1.0), Selection("minimal_norm"), 0.0, u, scalar_space)[0] == -1.0


def test_centroid_of_finite_set_is_nearest_point_to_mean(scalar_space):
    F = MultimapSpec(control={"shape": "finite_set", "points": [-1.0, 0.2, 3.0]})
    # mean is 0.7333..., nearest listed point is 0.2
    assert select(F, Selection("centroid"), 0.0, np.zeros(1), scalar_space)[0] == pytest.approx(0.2)


def test_extremal_vertex_schedule(scalar_space):
    grid = TimeGrid(1.0, 4)
    traj = Trajectory(grid, scalar_space, np.zeros((5, 1)))
    sel = Selection("extremal_vertex", schedule=("+", "-"), schedule_dt=0.5)
    path = select_path(_interval(), sel, traj)
    # right endpoints 0.25, 0.5, 0.75, 1.0 fall in slots 0, 1, 1, 2
    assert list(path.values[:, 0]) == [1.0, -1.0, -1.0, 1.0]
    assert controls_are_extremal(_interval(), path.controls)


def test_bad_vertex_code_is_a_config_error(scalar_space):
    F = MultimapSpec(control={"shape": "box", "channels": 2}, gain={"values": [1.0, 1.0]})
    with pytest.raises(ConfigError) as err:
        select(F, Selection("extremal_vertex", schedule=("+-+",)), 0.0, np.zeros(1), scalar_space)
    assert err.value.field == "selection.schedule"


def test_selection_validation():
    with pytest.raises(ParameterError):
        Selection("near_target")
    with pytest.raises(ParameterError):
        Selection("extremal_vertex", schedule=())


def test_near_target_projects_onto_images(scalar_space):
    grid = TimeGrid(1.0, 4)
    traj = Trajectory(grid, scalar_space, np.zeros((5, 1)))
    target = ForcingPath(grid, scalar_space, np.array([[-3.0], [0.25], [0.9], [5.0]]))
    path = select_path(_interval(), Selection("near_target", target=target, eps=1e-3), traj)
    assert list(path.values[:, 0]) == [-1.0, 0.25, 0.9, 1.0]


def test_membership(scalar_space):
    F = _interval()
    assert membership(F, 0.0, np.zeros(1), np.array([0.9]), 0.0, scalar_space)
    assert not membership(F, 0.0, np.zeros(1), np.array([1.2]), 0.1, scalar_space)
    assert membership(F, 0.0, np.zeros(1), np.array([1.2]), 0.2 + 1e-12, scalar_space)


def test_bracket_on_finite_set(scalar_space):
    F = MultimapSpec(control={"shape": "finite_set", "points": [-1.0, 0.0, 2.0]})
    lo, hi, lo_v, hi_v = bracket(F, 0.0, np.zeros(1), np.array([0.5]), scalar_space)
    assert (lo[0], hi[0]) == (0.0, 2.0)
    assert (lo_v[0][0], hi_v[0][0]) == (0.0, 2.0)


def test_vertex_controls_of_box():
    F = MultimapSpec(control={"shape": "box", "radius": 2.0, "channels": 2}, gain={"values": [1.0, -1.0]})
    vertices = {tuple(v) for v in vertex_controls(F)}
    assert vertices == {(2.0, 2.0), (2.0, -2.0), (-2.0, 2.0), (-2.0, -2.0)}


def test_box_selection_uses_gain_signs(scalar_space):
    F = MultimapSpec(control={"shape": "box", "radius": 1.0, "channels": 2}, gain={"values": [1.0, -2.0]})
    lo, hi = image_bounds(F, 0.0, np.zeros(1), scalar_space)
    assert (lo[0], hi[0]) == (-3.0, 3.0)


def test_radial_retraction(scalar_space):
    assert radial_retraction(np.array([3.0]), 1.0, scalar_space)[0] == 1.0
    assert radial_retraction(np.array([-0.5]), 1.0, scalar_space)[0] == -0.5
    with pytest.raises(ParameterError):
        radial_retraction(np.array([1.0]), 0.0, scalar_space)


def test_truncation_caps_linear_drift(scalar_space):
    F = truncate_multimap(_interval(drift={"kind": "linear", "coefficient": 1.0}), 2.0)
    lo, hi = image_bounds(F, 0.0, np.array([10.0]), scalar_space)
    assert (lo[0], hi[0]) == (1.0, 3.0)
    assert eta_hat(F, 0.0, scalar_space) == pytest.approx(3.0)


def test_eta_hat_needs_radius(scalar_space):
    with pytest.raises(ParameterError):
        eta_hat(_interval(), 0.0, scalar_space)


def test_growth_modulus(scalar_space):
    F = _interval(drift={"kind": "capped_growth", "coefficient": 0.5})
    assert growth_modulus(F, scalar_space) == pytest.approx(1.5)


def test_hartman_condition(scalar_space, rng):
    good = _interval(-0.5, 0.5, drift={"kind": "linear", "coefficient": 1.0}, hartman_radius=1.0)
    samples = sphere_samples(scalar_space, 1.0, 8, rng)
    assert hartman_check(good, 1.0, scalar_space, samples).passed
    bad = _interval(-0.5, 0.5)
    report = hartman_check(bad, 1.0, scalar_space, samples)
    assert not report.passed
    assert report.min_inner == pytest.approx(-0.5)


def test_hartman_condition_in_one_dimension(rng):
    space = SpaceGrid.interval(1.0, 5)
    F = _interval(-0.1, 0.1, drift={"kind": "linear", "coefficient": 1.0})
    samples = sphere_samples(space, 2.0, 10, rng)
    report = hartman_check(F, 2.0, space, samples, times=(0.0, 0.5))
    assert report.n_samples == 2 * (10 + 10)
    assert report.passed


def test_lipschitz_check(scalar_space, rng):
    F = _interval(drift={"kind": "linear", "coefficient": 2.0})
    report = lipschitz_check(F, random_pairs(scalar_space, 20, rng), 0.0, scalar_space)
    assert report.max_ratio == pytest.approx(2.0)
    assert report.passed
    understated = _interval(drift={"kind": "linear", "coefficient": 2.0}, lipschitz_declared=1.0)
    assert not lipschitz_check(understated, random_pairs(scalar_space, 20, rng), 0.0, scalar_space).passed


def test_radial_retraction_is_nonexpansive(rng):
    space = SpaceGrid.interval(1.0, 5)
    for _ in range(200):
        x = 3.0 * rng.standard_normal(5)
        y = 3.0 * rng.standard_normal(5)
        rx = radial_retraction(x, 1.0, space)
        ry = radial_retraction(y, 1.0, space)
        assert h_norm(rx, space) <= 1.0 + 1e-12
        assert h_norm(rx - ry, space) <= h_norm(x - y, space) + 1e-12


@pytest.mark.parametrize(
    "F",
    [
        _interval(-0.5, 1.0, drift={"kind": "linear", "coefficient": 0.5}),
        MultimapSpec(
            drift={"kind": "sine", "coefficient": 1.0},
            control={"shape": "box", "radius": 0.5, "channels": 2},
            gain={"values": [1.0, 0.5]},
        ),
    ],
    ids=["interval", "box"],
)
def test_minimal_norm_beats_other_selections(F, rng):
    space = SpaceGrid.interval(1.0, 5)
    others = [
        Selection("centroid"),
        Selection("extremal_vertex", schedule=("+",)),
        Selection("extremal_vertex", schedule=("-",)),
    ]
    for _ in range(30):
        t = float(rng.uniform(0.0, 1.0))
        u = 2.0 * rng.standard_normal(5)
        smallest = h_norm(select(F, Selection("minimal_norm"), t, u, space), space)
        for sel in others:
            assert smallest <= h_norm(select(F, sel, t, u, space), space) + 1e-12
