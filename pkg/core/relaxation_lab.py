"""Chattering between extreme points of F and the sup-norm approximation experiment built on it."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.cauchy_solver import StepConfig, solve_cauchy
from core.errors import NonConvergenceError, ParameterError
from core.grid_core import ForcingPath, TimeGrid, Trajectory, sup_distance, weak_norm
from core.monotone_ops import OperatorSpec, PhiSpec
from core.set_valued import MultimapSpec, Selection, bracket, eta_hat, path_membership_defect, select_path

logger = logging.getLogger(__name__)

_VERTEX_TOL = 1e-12


def _window_length(grid: TimeGrid, delta: float) -> int:
    m = int(round(delta / grid.tau))
    if m < 1 or abs(m * grid.tau - delta) > 1e-9 * max(1.0, delta):
        raise ParameterError(f"chattering period {delta} is not a positive multiple of tau={grid.tau}")
    return m


def chatter(F: MultimapSpec, u: Trajectory, target: ForcingPath, delta: float) -> ForcingPath:
    """Extreme-point forcing whose integral over each delta-window tracks the target's.

    Steps where the target already sits at an extreme point keep it. The remaining
    steps of a window switch between the two extreme points bracketing the target,
    upper point first, until the window integral is matched; the rounding remainder
    carries into the next window.
    """
    grid = u.grid
    m = _window_length(grid, delta)
    space = u.space
    times = grid.times()
    n = grid.n_steps
    lo = np.empty((n, space.size))
    hi = np.empty_like(lo)
    lo_v = []
    hi_v = []
    for k in range(n):
        a, b, va, vb = bracket(F, float(times[k + 1]), u.states[k + 1], target.values[k], space)
        lo[k], hi[k] = a, b
        lo_v.append(va)
        hi_v.append(vb)
    lo_v = np.array(lo_v)
    hi_v = np.array(hi_v)

    y = np.clip(target.values, lo, hi)
    width = hi - lo
    frac = np.divide(y - lo, width, out=np.zeros_like(y), where=width > 0)
    at_lo = (width <= _VERTEX_TOL) | (frac <= _VERTEX_TOL)
    at_hi = ~at_lo & (frac >= 1.0 - _VERTEX_TOL)
    free = ~(at_lo | at_hi)

    upper = at_hi.copy()
    carry = np.zeros(space.size)
    for start in range(0, n, m):
        window = slice(start, min(start + m, n))
        needed = np.sum(np.where(free[window], frac[window] * width[window], 0.0), axis=0) + carry
        assigned = np.zeros(space.size)
        for k in range(window.start, window.stop):
            take = free[k] & (assigned + 0.5 * width[k] <= needed)
            upper[k] |= take
            assigned += np.where(take, width[k], 0.0)
        carry = needed - assigned

    values = np.where(upper, hi, lo)
    controls = np.where(upper[:, :, None], hi_v, lo_v)
    return ForcingPath(grid, space, values, controls)


@dataclass
class RelaxationStep:
    delta: float
    eps_n: float
    trajectory: Trajectory
    forcing: ForcingPath
    target: ForcingPath
    weak_gap: float
    sup_gap: float
    refresh_residual: float
    gap_total_variation: float


@dataclass
class RelaxationRun:
    convex_solution: Trajectory
    convex_forcing: ForcingPath
    lipschitz: float
    eta_hat_max: float
    radius: float
    target_membership_defect: float
    steps: list[RelaxationStep] = field(default_factory=list)

    def weak_gap_certificate(self, step: RelaxationStep) -> float:
        return step.delta * 2.0 * self.eta_hat_max


def _relax_one(op, phi, cfg, F, u, h, delta, eps_n, radius) -> RelaxationStep:
    grid = u.grid
    near = Selection("near_target", target=h, eps=eps_n)
    gamma = select_path(F, near, u)
    beta = chatter(F, u, gamma, delta)
    first = solve_cauchy(op, phi, cfg, grid, u.initial, beta)
    # one feedback refresh against the produced trajectory
    gamma = select_path(F, near, first)
    beta = chatter(F, first, gamma, delta)
    v = solve_cauchy(op, phi, cfg, grid, u.initial, beta)
    gap = v.states - u.states
    norms = np.sqrt(u.space.cell_volume * np.sum(np.diff(gap, axis=0) ** 2, axis=1))
    return RelaxationStep(
        delta=delta,
        eps_n=eps_n,
        trajectory=v,
        forcing=beta,
        target=gamma,
        weak_gap=weak_norm(beta - gamma),
        sup_gap=sup_distance(v, u),
        refresh_residual=sup_distance(v, first),
        gap_total_variation=float(np.sum(norms)),
    )


def relax_approximate(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    F: MultimapSpec,
    u: Trajectory,
    h: ForcingPath,
    delta_schedule: tuple[float, ...],
    eps_schedule: Optional[tuple[float, ...]] = None,
    jobs: int = 1,
) -> RelaxationRun:
    """Extremal Cauchy trajectories from u(0) driven by chattered forcings, one per delta."""
    deltas = tuple(float(d) for d in delta_schedule)
    if not deltas:
        raise ParameterError("delta schedule must be nonempty")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ParameterError(f"delta schedule must be strictly decreasing, got {deltas}")
    if u.grid != grid or h.grid != grid:
        raise ParameterError("convex solution and forcing must live on the relaxation grid")
    for d in deltas:
        _window_length(grid, d)
    eps = tuple(eps_schedule) if eps_schedule else tuple(1.0 / n for n in range(1, len(deltas) + 1))
    if len(eps) != len(deltas):
        raise ParameterError("eps schedule and delta schedule differ in length")

    norms = np.sqrt(u.space.cell_volume * np.sum(u.states**2, axis=1))
    radius = F.truncation_radius or F.hartman_radius or max(float(np.max(norms)), 1.0)
    times = grid.times()[1:]
    eta_max = max(eta_hat(F, float(t), u.space, radius) for t in times)

    def work(i: int) -> RelaxationStep:
        try:
            step = _relax_one(op, phi, cfg, F, u, h, deltas[i], eps[i], radius)
        except NonConvergenceError as exc:
            raise exc.tagged(delta=deltas[i]) from exc
        logger.info("relaxation delta=%g: weak gap %.3e, sup gap %.3e", step.delta, step.weak_gap, step.sup_gap)
        return step

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            steps = list(pool.map(work, range(len(deltas))))
    else:
        steps = [work(i) for i in range(len(deltas))]
    return RelaxationRun(
        convex_solution=u,
        convex_forcing=h,
        lipschitz=F.lipschitz,
        eta_hat_max=eta_max,
        radius=radius,
        target_membership_defect=path_membership_defect(F, h, u) * math.sqrt(u.space.volume),
        steps=steps,
    )


def gronwall_gap_bound(run: RelaxationRun, index: int = -1) -> float:
    """Discrete Gronwall bound on sup |u_n - u| for one completed delta.

    |e_k|^2 <= C + 2 l tau sum_{j<=k} |e_j|^2 with
    C = 2 w (E + TV(e)) + 2 b E (l r + d) + eps E / M, closed as C (1 - 2 tau l)^-N.
    w is the weak gap, E the sup gap, r the refresh residual and d the membership
    defect of the convex forcing.
    """
    if not run.steps:
        raise ParameterError("relaxation run has no completed steps")
    step = run.steps[index]
    grid = run.convex_solution.grid
    l = run.lipschitz
    E = step.sup_gap
    pairing = 2.0 * step.weak_gap * (E + step.gap_total_variation)
    drift = 2.0 * grid.b * E * (l * step.refresh_residual + run.target_membership_defect)
    tolerance = step.eps_n * E / run.radius
    c = pairing + drift + tolerance
    if c == 0.0:
        return 0.0
    if 2.0 * grid.tau * l >= 1.0:
        return math.inf
    return math.sqrt(c * (1.0 - 2.0 * grid.tau * l) ** (-grid.n_steps))


def relaxation_rows(run: RelaxationRun) -> list[dict]:
    return [
        {
            "delta": step.delta,
            "weak_gap": step.weak_gap,
            "sup_gap": step.sup_gap,
            "gronwall_bound": gronwall_gap_bound(run, i),
        }
        for i, step in enumerate(run.steps)
    ]
