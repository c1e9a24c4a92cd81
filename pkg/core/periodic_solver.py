"""Poincare map iteration and the forcing fixed-point workflows for u(0) = u(b)."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from core.cauchy_solver import StepConfig, inclusion_defect, solve_cauchy
from core.errors import NonConvergenceError, ParameterError
from core.grid_core import ForcingPath, SpaceGrid, TimeGrid, Trajectory, h_norm, l1_norm, lp_norm, pointwise_norms, sup_distance
from core.monotone_ops import OperatorSpec, PhiSpec, regularize, subdifferential_at_zero_norm
from core.set_valued import (
    MultimapSpec,
    Selection,
    controls_are_extremal,
    growth_modulus,
    path_membership_defect,
    select_path,
    truncate_multimap,
)

logger = logging.getLogger(__name__)


@dataclass
class PeriodicReport:
    workflow: str = "periodic_fixed_h"
    periodicity_residual: float = 0.0
    contraction_estimates: list[float] = field(default_factory=list)
    contraction_rate_bound: Optional[float] = None
    stated_contraction_rate: Optional[float] = None
    poincare_iterations: int = 0
    apriori_margin: Optional[float] = None
    ball_margin: Optional[float] = None
    truncation_radius: Optional[float] = None
    outer_iterations: int = 0
    forcing_fixpoint_gap: Optional[float] = None
    forcing_gap_history: list[float] = field(default_factory=list)
    membership_defect: Optional[float] = None
    inclusion_defect: Optional[float] = None
    extremal: Optional[bool] = None
    eps_schedule: list[float] = field(default_factory=list)
    consecutive_sup_distances: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PeriodicSolution:
    trajectory: Trajectory
    forcing: ForcingPath
    report: PeriodicReport


def strong_monotonicity_constant(op: OperatorSpec, phi: PhiSpec) -> float:
    m_min = op.modulation.m_min if op.modulation else 1.0
    return op.strong_monotonicity_c0 * m_min + phi.strong_monotonicity_c0


def poincare(
    op: OperatorSpec, phi: PhiSpec, cfg: StepConfig, grid: TimeGrid, x0: np.ndarray, h: ForcingPath
) -> np.ndarray:
    return solve_cauchy(op, phi, cfg, grid, x0, h).final


def find_periodic(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    h: ForcingPath,
    x_init: Optional[np.ndarray] = None,
    outer_tol: float = 1e-8,
    outer_max: int = 200,
) -> tuple[Trajectory, PeriodicReport]:
    """Picard iteration x <- K(x) on the Poincare map."""
    c = strong_monotonicity_constant(op, phi)
    if not c > 0:
        raise ParameterError("periodic solve needs a strongly monotone operator (declared c > 0); regularize first")
    space = h.space
    x = space.zeros() if x_init is None else np.asarray(x_init, dtype=float)
    ratio_floor = max(1e3 * cfg.inner_tol, 1e-12)
    residuals: list[float] = []
    ratios: list[float] = []
    for j in range(1, outer_max + 1):
        traj = solve_cauchy(op, phi, cfg, grid, x, h)
        res = h_norm(traj.final - x, space)
        if residuals and residuals[-1] > ratio_floor:
            ratios.append(res / residuals[-1])
        residuals.append(res)
        logger.debug("Poincare iteration %d: residual %.3e", j, res)
        if res <= outer_tol:
            report = PeriodicReport(
                periodicity_residual=res,
                contraction_estimates=ratios,
                contraction_rate_bound=math.exp(-c * grid.b),
                stated_contraction_rate=math.exp(-2.0 * c * grid.b),
                poincare_iterations=j,
            )
            return traj, report
        x = traj.final
    raise NonConvergenceError(
        f"Poincare iteration did not reach {outer_tol:g} in {outer_max} iterations",
        residuals[-1],
        ratios[-20:],
    )


def contraction_probe(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    h: ForcingPath,
    n_pairs: int,
    rng: np.random.Generator,
    scale: float = 1.0,
    jobs: int = 1,
) -> list[float]:
    """|K(x) - K(y)| / |x - y| over random pairs."""
    space = h.space
    pairs = [(scale * rng.standard_normal(space.size), scale * rng.standard_normal(space.size)) for _ in range(n_pairs)]

    def ratio(pair: tuple[np.ndarray, np.ndarray]) -> float:
        x, y = pair
        kx = poincare(op, phi, cfg, grid, x, h)
        ky = poincare(op, phi, cfg, grid, y, h)
        return h_norm(kx - ky, space) / h_norm(x - y, space)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(ratio, pairs))
    return [ratio(p) for p in pairs]


def apriori_check(traj: Trajectory, h: ForcingPath, phi: PhiSpec, c4: float) -> float:
    """min over t of c_hat + int_0^t |h| - |u(t)|."""
    if not c4 > 0:
        raise ParameterError(f"c4 must be > 0, got {c4}")
    b = traj.grid.b
    beta0 = subdifferential_at_zero_norm(phi, traj.space)
    growth = math.exp(c4 * b)
    c_hat = growth / (growth - 1.0) * (beta0 * b + l1_norm(h)) + beta0 * b
    running = np.concatenate([[0.0], np.cumsum(pointwise_norms(h) * traj.grid.tau)])
    norms = np.sqrt(traj.space.cell_volume * np.sum(traj.states**2, axis=1))
    return float(np.min(c_hat + running - norms))


def gronwall_radius(F: MultimapSpec, phi: PhiSpec, c4: float, grid: TimeGrid, space: SpaceGrid) -> float:
    """A priori radius under linear growth |F(t,x)| <= k (1 + |x|), with 10% over-cover."""
    if not c4 > 0:
        raise ParameterError(f"c4 must be > 0, got {c4}")
    b = grid.b
    beta0 = subdifferential_at_zero_norm(phi, space)
    growth = math.exp(c4 * b)
    c_hat = growth / (growth - 1.0) * beta0 * b + beta0 * b
    k_l1 = growth_modulus(F, space) * b
    radius = 1.1 * (c_hat + k_l1) * math.exp(k_l1)
    return max(radius, 1e-12)


def ball_invariance_check(traj: Trajectory, M: float) -> float:
    norms = np.sqrt(traj.space.cell_volume * np.sum(traj.states**2, axis=1))
    return float(M - np.max(norms))


def _prepare_multimap(F: MultimapSpec, phi: PhiSpec, c: float, grid: TimeGrid, space: SpaceGrid) -> MultimapSpec:
    if F.truncation_radius is not None:
        return F
    radius = F.hartman_radius if F.hartman_radius is not None else gronwall_radius(F, phi, c, grid, space)
    logger.info("Truncating multimap at radius %.6g", radius)
    return truncate_multimap(F, radius)


def _finish_report(
    report: PeriodicReport,
    op: OperatorSpec,
    phi: PhiSpec,
    F: MultimapSpec,
    traj: Trajectory,
    h: ForcingPath,
    c: float,
) -> PeriodicReport:
    report.truncation_radius = F.truncation_radius
    report.membership_defect = path_membership_defect(F, h, traj)
    report.inclusion_defect = inclusion_defect(op, phi, traj, h)
    report.apriori_margin = apriori_check(traj, h, phi, c)
    if F.hartman_radius is not None:
        report.ball_margin = ball_invariance_check(traj, F.hartman_radius)
    if h.controls is not None:
        report.extremal = controls_are_extremal(F, h.controls)
    return report


def _dual_exponent(op: OperatorSpec) -> float:
    return op.p / (op.p - 1.0)


def solve_convex(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    space: SpaceGrid,
    F: MultimapSpec,
    selection: Optional[Selection] = None,
    theta: float = 0.5,
    outer_tol: float = 1e-8,
    outer_max: int = 50,
    h_init: Optional[ForcingPath] = None,
    x_init: Optional[np.ndarray] = None,
) -> PeriodicSolution:
    """Averaged forcing iteration h <- (1-theta) h + theta * select(F, xi(h))."""
    if not 0 < theta <= 1:
        raise ParameterError(f"relaxation damping must be in (0, 1], got {theta}")
    selection = selection or Selection("minimal_norm")
    c = strong_monotonicity_constant(op, phi)
    F = _prepare_multimap(F, phi, c, grid, space)
    h = h_init or ForcingPath.zeros(grid, space)
    x = x_init
    gaps: list[float] = []
    for j in range(1, outer_max + 1):
        try:
            traj, report = find_periodic(op, phi, cfg, grid, h, x, outer_tol=outer_tol)
        except NonConvergenceError as exc:
            raise exc.tagged(outer_iteration=j) from exc
        selected = select_path(F, selection, traj)
        new_h = (1.0 - theta) * h + theta * selected
        gap = lp_norm(new_h - h, _dual_exponent(op))
        gaps.append(gap)
        logger.debug("convex loop %d: forcing gap %.3e", j, gap)
        if gap <= outer_tol:
            driving = selected if theta == 1.0 or gap == 0.0 else h
            report.workflow = "convex"
            report.outer_iterations = j
            report.forcing_fixpoint_gap = gap
            report.forcing_gap_history = gaps
            logger.info("convex workflow converged in %d outer iterations (gap %.3e)", j, gap)
            return PeriodicSolution(traj, driving, _finish_report(report, op, phi, F, traj, driving, c))
        h = new_h
        x = traj.final
    raise NonConvergenceError(f"convex forcing loop did not reach {outer_tol:g} in {outer_max} iterations", gaps[-1], gaps)


def solve_nonconvex(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    space: SpaceGrid,
    F: MultimapSpec,
    outer_tol: float = 1e-8,
    outer_max: int = 50,
    h_init: Optional[ForcingPath] = None,
    x_init: Optional[np.ndarray] = None,
) -> PeriodicSolution:
    """Undamped feedback loop: the next forcing is the projection of the current one onto F(t, u(t))."""
    c = strong_monotonicity_constant(op, phi)
    F = _prepare_multimap(F, phi, c, grid, space)
    x = x_init
    if h_init is None:
        traj, _ = find_periodic(op, phi, cfg, grid, ForcingPath.zeros(grid, space), x, outer_tol=outer_tol)
        h = select_path(F, Selection("minimal_norm"), traj)
        x = traj.final
    else:
        h = h_init
    gaps: list[float] = []
    for j in range(1, outer_max + 1):
        try:
            traj, report = find_periodic(op, phi, cfg, grid, h, x, outer_tol=outer_tol)
        except NonConvergenceError as exc:
            raise exc.tagged(outer_iteration=j) from exc
        new_h = select_path(F, Selection("near_target", target=h, eps=outer_tol), traj)
        gap = lp_norm(new_h - h, _dual_exponent(op))
        gaps.append(gap)
        if gap <= outer_tol:
            report.workflow = "nonconvex"
            report.outer_iterations = j
            report.forcing_fixpoint_gap = gap
            report.forcing_gap_history = gaps
            logger.info("nonconvex workflow converged in %d outer iterations", j)
            return PeriodicSolution(traj, h, _finish_report(report, op, phi, F, traj, h, c))
        h = new_h
        x = traj.final
    raise NonConvergenceError(f"nonconvex feedback loop did not reach {outer_tol:g} in {outer_max} iterations", gaps[-1], gaps)


def solve_extremal(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    space: SpaceGrid,
    F: MultimapSpec,
    delta: float,
    outer_tol: float = 1e-8,
    outer_max: int = 50,
    h_init: Optional[ForcingPath] = None,
    x_init: Optional[np.ndarray] = None,
) -> PeriodicSolution:
    """Forcing loop whose selection chatters between extreme points around the minimal-norm selection."""
    from core.relaxation_lab import chatter

    c = strong_monotonicity_constant(op, phi)
    F = _prepare_multimap(F, phi, c, grid, space)
    h = h_init or ForcingPath.zeros(grid, space)
    x = x_init
    gaps: list[float] = []
    for j in range(1, outer_max + 1):
        try:
            traj, report = find_periodic(op, phi, cfg, grid, h, x, outer_tol=outer_tol)
        except NonConvergenceError as exc:
            raise exc.tagged(outer_iteration=j) from exc
        target = select_path(F, Selection("minimal_norm"), traj)
        new_h = chatter(F, traj, target, delta)
        gap = lp_norm(new_h - h, _dual_exponent(op))
        gaps.append(gap)
        if gap <= outer_tol and h.controls is not None:
            report.workflow = "extremal"
            report.outer_iterations = j
            report.forcing_fixpoint_gap = gap
            report.forcing_gap_history = gaps
            logger.info("extremal workflow converged in %d outer iterations", j)
            return PeriodicSolution(traj, h, _finish_report(report, op, phi, F, traj, h, c))
        h = new_h
        x = traj.final
    raise NonConvergenceError(f"extremal forcing loop did not reach {outer_tol:g} in {outer_max} iterations", gaps[-1], gaps)


def solve_regularized_path(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    space: SpaceGrid,
    F: MultimapSpec,
    eps_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4),
    stage: Literal["convex", "nonconvex", "extremal"] = "convex",
    selection: Optional[Selection] = None,
    outer_tol: float = 1e-8,
    outer_max: int = 50,
    delta: Optional[float] = None,
) -> PeriodicSolution:
    """Solve with A + eps I along a decreasing eps schedule, warm-starting each stage."""
    eps_schedule = tuple(float(e) for e in eps_schedule)
    if not eps_schedule:
        raise ParameterError("eps schedule must be nonempty")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ParameterError(f"eps schedule must be strictly decreasing, got {eps_schedule}")
    if eps_schedule[-1] < 1e-6:
        raise ParameterError(f"last eps must be >= 1e-6, got {eps_schedule[-1]}")
    if stage == "extremal" and delta is None:
        raise ParameterError("extremal stage needs a chattering period delta")

    previous: Optional[PeriodicSolution] = None
    distances: list[float] = []
    for eps in eps_schedule:
        op_eps = regularize(op, eps)
        warm = {}
        if previous is not None:
            warm = {"h_init": previous.forcing, "x_init": previous.trajectory.initial}
        try:
            if stage == "convex":
                sol = solve_convex(op_eps, phi, cfg, grid, space, F, selection, outer_tol=outer_tol, outer_max=outer_max, **warm)
            elif stage == "nonconvex":
                sol = solve_nonconvex(op_eps, phi, cfg, grid, space, F, outer_tol=outer_tol, outer_max=outer_max, **warm)
            else:
                sol = solve_extremal(op_eps, phi, cfg, grid, space, F, delta, outer_tol=outer_tol, outer_max=outer_max, **warm)
        except NonConvergenceError as exc:
            raise exc.tagged(eps=eps) from exc
        if previous is not None:
            distances.append(sup_distance(sol.trajectory, previous.trajectory))
        logger.info("regularized stage eps=%g done (%d outer iterations)", eps, sol.report.outer_iterations)
        previous = sol

    previous.report.workflow = "regularized_path"
    previous.report.eps_schedule = list(eps_schedule)
    previous.report.consecutive_sup_distances = distances
    return previous
