"""Backward Euler for -u' in A(t,u) + d(phi)(u) + h, u(0) = x0."""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.linalg import spsolve

from core.errors import DimensionError, NonConvergenceError, NumericOverflowError, ParameterError
from core.grid_core import ForcingPath, SpaceGrid, TimeGrid, Trajectory, as_state, h_norm, sup_distance
from core.monotone_ops import OperatorSpec, PhiSpec, apply_A, beta_distance, operator_jacobian, prox_derivative, prox_phi

logger = logging.getLogger(__name__)


class StepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    inner_max_iter: int = Field(default=500, ge=1)
    inner_tol: float = Field(default=1e-10, gt=0.0)
    inner_method: Literal["fixed_point_prox", "damped_newton_on_smooth_part"] = "fixed_point_prox"
    damping: float = Field(default=1.0, gt=0.0, le=1.0)
    max_halvings: int = Field(default=6, ge=0)


# a fixed-point step is abandoned after this many successive residual ratios >= 1
_CONTRACTION_WINDOW = 3


@dataclass
class StepResult:
    state: np.ndarray
    iterations: int
    residual: float
    inclusion_residual: float


def _fixed_point(op, phi, cfg, t, tau, r, u, space) -> tuple[np.ndarray, int, float, list[float]]:
    history: list[float] = []
    for j in range(1, cfg.inner_max_iter + 1):
        candidate = prox_phi(phi, tau, r - tau * apply_A(op, t, u, space))
        u_next = u + cfg.damping * (candidate - u)
        res = h_norm(u_next - u, space)
        history.append(res)
        u = u_next
        if res <= cfg.inner_tol:
            return u, j, res, history
        recent = history[-_CONTRACTION_WINDOW - 1 :]
        if len(recent) > _CONTRACTION_WINDOW and all(b >= a for a, b in zip(recent, recent[1:])):
            raise NonConvergenceError(
                f"fixed-point iteration not contracting over {_CONTRACTION_WINDOW} iterations", res, history[-10:]
            )
    raise NonConvergenceError(
        f"inner iteration did not reach tol {cfg.inner_tol:g} in {cfg.inner_max_iter} iterations",
        history[-1],
        history[-10:],
    )


def _newton(op, phi, cfg, t, tau, r, u, space) -> tuple[np.ndarray, int, float, list[float]]:
    # semismooth Newton on G(u) = u - prox(r - tau A(u))
    def residual_map(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = r - tau * apply_A(op, t, v, space)
        return v - prox_phi(phi, tau, w), w

    g, w = residual_map(u)
    res = h_norm(g, space)
    history = [res]
    eye = sp.identity(space.size, format="csr")
    for j in range(1, cfg.inner_max_iter + 1):
        if res <= cfg.inner_tol:
            return u, j - 1, res, history
        jac = eye + tau * sp.diags(prox_derivative(phi, tau, w)) @ operator_jacobian(op, t, u, space)
        step = np.atleast_1d(spsolve(jac.tocsc(), -g))
        lam = cfg.damping
        while True:
            trial = u + lam * step
            g_trial, w_trial = residual_map(trial)
            res_trial = h_norm(g_trial, space)
            if res_trial <= (1.0 - 1e-4 * lam) * res or res_trial <= cfg.inner_tol:
                break
            lam *= 0.5
            if lam < 1e-10:
                raise NonConvergenceError("Newton line search stalled", res, history[-10:])
        u, g, w, res = trial, g_trial, w_trial, res_trial
        history.append(res)
    if res <= cfg.inner_tol:
        return u, cfg.inner_max_iter, res, history
    raise NonConvergenceError(
        f"Newton iteration did not reach tol {cfg.inner_tol:g} in {cfg.inner_max_iter} iterations", res, history[-10:]
    )


def implicit_step(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    t: float,
    tau: float,
    u_prev: np.ndarray,
    h_k: np.ndarray,
    space: SpaceGrid,
    warm_start: Optional[np.ndarray] = None,
) -> StepResult:
    """One step (u_next - u_prev)/tau + A(t,u_next) + g + h_k = 0, g in beta(u_next)."""
    if not tau > 0:
        raise ParameterError(f"step size must be > 0, got {tau}")
    r = u_prev - tau * h_k
    u0 = u_prev.copy() if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    solver = _newton if cfg.inner_method == "damped_newton_on_smooth_part" else _fixed_point
    try:
        u, iterations, res, _ = solver(op, phi, cfg, t, tau, r, u0, space)
        # final prox pass so u_next sits exactly in dom(beta) with g read off the resolvent
        state = prox_phi(phi, tau, r - tau * apply_A(op, t, u, space))
    except (NumericOverflowError, FloatingPointError) as exc:
        raise NonConvergenceError(f"inner iteration overflowed: {exc}") from exc
    if not np.all(np.isfinite(state)):
        raise NonConvergenceError("inner iteration produced non-finite state")
    return StepResult(state=state, iterations=iterations, residual=res, inclusion_residual=res / tau)


def _advance(op, phi, cfg, t, tau, u, h_k, space, warm, depth) -> np.ndarray:
    try:
        return implicit_step(op, phi, cfg, t, tau, u, h_k, space, warm).state
    except NonConvergenceError as exc:
        if depth >= cfg.max_halvings:
            raise
        logger.warning("Halving step at t=%.6g (tau=%.3g): %s", t, tau, exc)
        half = 0.5 * tau
        mid = _advance(op, phi, cfg, t - half, half, u, h_k, space, None, depth + 1)
        return _advance(op, phi, cfg, t, half, mid, h_k, space, None, depth + 1)


def solve_cauchy(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    x0: np.ndarray,
    h: ForcingPath,
    rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    if h.grid != grid:
        raise DimensionError(f"forcing lives on {h.grid}, solver grid is {grid}")
    space = h.space
    states = np.empty((grid.n_steps + 1, space.size))
    states[0] = as_state(x0, space)
    times = grid.times()
    for k in range(grid.n_steps):
        u = states[k]
        warm = None
        if rng is not None:
            warm = u + 0.1 * (1.0 + np.abs(u)) * rng.standard_normal(space.size)
        try:
            states[k + 1] = _advance(op, phi, cfg, float(times[k + 1]), grid.tau, u, h.values[k], space, warm, 0)
        except NonConvergenceError as exc:
            raise exc.tagged(step=k) from exc
    return Trajectory(grid, space, states)


@dataclass
class UniquenessReport:
    n_restarts: int
    max_pairwise_distance: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_pairwise_distance <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "n_restarts": self.n_restarts,
            "max_pairwise_distance": self.max_pairwise_distance,
            "tolerance": self.tolerance,
            "status": "pass" if self.passed else "fail",
        }


def verify_uniqueness(
    op: OperatorSpec,
    phi: PhiSpec,
    cfg: StepConfig,
    grid: TimeGrid,
    x0: np.ndarray,
    h: ForcingPath,
    n_restarts: int,
    seed: int = 0,
) -> UniquenessReport:
    if n_restarts < 2:
        raise ParameterError(f"n_restarts must be >= 2, got {n_restarts}")
    rng = np.random.default_rng(seed)
    runs = [solve_cauchy(op, phi, cfg, grid, x0, h)]
    runs += [solve_cauchy(op, phi, cfg, grid, x0, h, rng=rng) for _ in range(n_restarts - 1)]
    worst = max(sup_distance(a, b) for a, b in combinations(runs, 2))
    return UniquenessReport(n_restarts=n_restarts, max_pairwise_distance=worst, tolerance=10.0 * cfg.inner_tol)


def inclusion_defects(op: OperatorSpec, phi: PhiSpec, traj: Trajectory, h: ForcingPath) -> np.ndarray:
    """Per step, |dist((u_k - u_{k+1})/tau - A(t_{k+1}, u_{k+1}) - h_k, beta(u_{k+1}))| in H."""
    tau = traj.grid.tau
    times = traj.grid.times()
    out = np.empty(traj.grid.n_steps)
    for k in range(traj.grid.n_steps):
        u_next = traj.states[k + 1]
        g = (traj.states[k] - u_next) / tau - apply_A(op, float(times[k + 1]), u_next, traj.space) - h.values[k]
        out[k] = h_norm(beta_distance(phi, u_next, g), traj.space)
    return out


def inclusion_defect(op: OperatorSpec, phi: PhiSpec, traj: Trajectory, h: ForcingPath) -> float:
    return float(np.max(inclusion_defects(op, phi, traj, h)))
