import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.errors import NumericOverflowError, ParameterError
from core.grid_core import SpaceGrid, gradient_matrices, h_norm, inner, x_norm

logger = logging.getLogger(__name__)

OperatorKind = Literal[
    "scalar_linear", "scalar_power", "discrete_p_laplacian", "p_laplacian_plus_laplacian", "custom_table"
]
BetaKind = Literal["zero", "linear", "absolute_value_subdifferential", "indicator_interval", "custom"]


class TimeModulation(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant", "cosine"] = "constant"
    amplitude: float = Field(default=0.0, ge=0.0, lt=1.0)
    frequency: float = 1.0

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return 1.0
        return 1.0 + self.amplitude * math.cos(self.frequency * t)

    @property
    def m_min(self) -> float:
        return 1.0 if self.kind == "constant" else 1.0 - self.amplitude


def _check_table(xs: tuple[float, ...], ys: tuple[float, ...]) -> None:
    if len(xs) < 2 or len(xs) != len(ys):
        raise ValueError("table needs at least two breakpoints with matching x/y lengths")
    if any(b < a for a, b in zip(ys, ys[1:])):
        raise ValueError("table values must be nondecreasing")


class OperatorSpec(BaseModel):
    """Declarative A(t, x). Declared constants are verification targets only."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: OperatorKind
    a: float = Field(default=1.0, ge=0.0)
    p: float = 2.0
    table_x: tuple[float, ...] = ()
    table_y: tuple[float, ...] = ()
    modulation: Optional[TimeModulation] = None
    strong_monotonicity_c0: float = Field(default=0.0, ge=0.0)
    coercivity_c0: float = Field(default=1.0, gt=0.0)
    a1_bound: float = Field(default=0.0, ge=0.0)
    c1: float = Field(default=1.0, ge=0.0)
    eps: float = Field(default=0.0, ge=0.0)

    @field_validator("p")
    @classmethod
    def _p_at_least_two(cls, v: float) -> float:
        if not v >= 2:
            raise ValueError(f"p must be >= 2, got {v}")
        return v

    @model_validator(mode="after")
    def _table_shape(self) -> "OperatorSpec":
        if self.kind == "custom_table":
            _check_table(self.table_x, self.table_y)
            if any(b <= a for a, b in zip(self.table_x, self.table_x[1:])):
                raise ValueError("table_x must be strictly increasing")
            at_zero, _ = _table_eval(self.table_x, self.table_y, np.zeros(1))
            if abs(float(at_zero[0])) > 1e-12:
                raise ValueError("custom table must pass through the origin")
        return self

    def modulation_at(self, t: float) -> float:
        return 1.0 if self.modulation is None else self.modulation(t)


class PhiSpec(BaseModel):
    """Convex potential acting nodewise through a scalar maximal monotone graph beta."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: BetaKind = "zero"
    slope: float = Field(default=0.0, ge=0.0)
    weight: float = Field(default=1.0, ge=0.0)
    interval_lo: float = 0.0
    interval_hi: float = 0.0
    table_x: tuple[float, ...] = ()
    table_y: tuple[float, ...] = ()
    strong_monotonicity_c0: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _graph_shape(self) -> "PhiSpec":
        if self.kind == "indicator_interval" and not self.interval_lo <= 0.0 <= self.interval_hi:
            raise ValueError("indicator interval must contain 0")
        if self.kind == "custom":
            _check_table(self.table_x, self.table_y)
            if any(b < a for a, b in zip(self.table_x, self.table_x[1:])):
                raise ValueError("table_x must be nondecreasing")
            for i in range(len(self.table_x) - 1):
                if self.table_x[i] == self.table_x[i + 1] and self.table_y[i] == self.table_y[i + 1]:
                    raise ValueError("repeated breakpoint in beta table")
        return self


# --- operator A -------------------------------------------------------------


def _p_laplacian(u: np.ndarray, space: SpaceGrid, p: float) -> np.ndarray:
    if space.dim == 0:
        raise ParameterError("gradient operators need a spatial grid (dim 1 or 2)")
    out = np.zeros(space.size)
    for g in gradient_matrices(space):
        du = g @ u
        out += g.T @ (np.abs(du) ** (p - 2.0) * du)
    return out


def _table_eval(xs: tuple[float, ...], ys: tuple[float, ...], u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs)
    y = np.asarray(ys)
    slopes = np.diff(y) / np.diff(x)
    j = np.clip(np.searchsorted(x, u, side="right") - 1, 0, len(x) - 2)
    return y[j] + slopes[j] * (u - x[j]), slopes[j]


def apply_A(op: OperatorSpec, t: float, u: np.ndarray, space: SpaceGrid) -> np.ndarray:
    if op.kind == "scalar_linear":
        base = op.a * u
    elif op.kind == "scalar_power":
        base = op.a * np.abs(u) ** (op.p - 2.0) * u
    elif op.kind == "discrete_p_laplacian":
        base = _p_laplacian(u, space, op.p)
    elif op.kind == "p_laplacian_plus_laplacian":
        base = _p_laplacian(u, space, op.p) + _p_laplacian(u, space, 2.0)
    else:
        base, _ = _table_eval(op.table_x, op.table_y, u)
    out = op.modulation_at(t) * base
    if op.eps:
        out = out + op.eps * u
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"A({op.kind}) produced non-finite values at t={t}")
    return out


def _p_laplacian_jacobian(u: np.ndarray, space: SpaceGrid, p: float) -> sp.csr_matrix:
    jac = sp.csr_matrix((space.size, space.size))
    for g in gradient_matrices(space):
        w = (p - 1.0) * np.abs(g @ u) ** (p - 2.0)
        jac = jac + g.T @ sp.diags(w) @ g
    return jac


def operator_jacobian(op: OperatorSpec, t: float, u: np.ndarray, space: SpaceGrid) -> sp.csr_matrix:
    n = space.size
    if op.kind == "scalar_linear":
        jac = sp.identity(n, format="csr") * op.a
    elif op.kind == "scalar_power":
        jac = sp.diags(op.a * (op.p - 1.0) * np.abs(u) ** (op.p - 2.0)).tocsr()
    elif op.kind == "discrete_p_laplacian":
        jac = _p_laplacian_jacobian(u, space, op.p)
    elif op.kind == "p_laplacian_plus_laplacian":
        jac = _p_laplacian_jacobian(u, space, op.p) + _p_laplacian_jacobian(u, space, 2.0)
    else:
        _, slopes = _table_eval(op.table_x, op.table_y, u)
        jac = sp.diags(slopes).tocsr()
    jac = jac * op.modulation_at(t)
    if op.eps:
        jac = jac + op.eps * sp.identity(n, format="csr")
    return jac.tocsr()


def regularize(op: OperatorSpec, eps: float) -> OperatorSpec:
    if eps < 0:
        raise ParameterError(f"regularization eps must be >= 0, got {eps}")
    return op.model_copy(
        update={"eps": op.eps + eps, "strong_monotonicity_c0": op.strong_monotonicity_c0 + eps}
    )


def dirichlet_min_eigenvalue(space: SpaceGrid) -> float:
    """Smallest eigenvalue of the discrete Dirichlet Laplacian on the grid."""
    if space.dim == 0:
        raise ParameterError("no Laplacian on a dim-0 grid")
    return float(sum(4.0 / hk**2 * math.sin(math.pi * hk / (2.0 * L)) ** 2 for hk, L in zip(space.h, space.extent)))


# --- potential phi ----------------------------------------------------------


def _custom_resolvent_nodes(phi: PhiSpec, tau: float) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(phi.table_x, dtype=float)
    ss = xs + tau * np.asarray(phi.table_y, dtype=float)
    return ss, xs


def prox_phi(phi: PhiSpec, tau: float, x: np.ndarray) -> np.ndarray:
    """Nodewise resolvent (I + tau*beta)^-1."""
    if not tau > 0:
        raise ParameterError(f"resolvent step tau must be > 0, got {tau}")
    x = np.asarray(x, dtype=float)
    if phi.kind == "zero":
        return x.copy()
    if phi.kind == "linear":
        return x / (1.0 + tau * phi.slope)
    if phi.kind == "absolute_value_subdifferential":
        return np.sign(x) * np.maximum(np.abs(x) - tau * phi.weight, 0.0)
    if phi.kind == "indicator_interval":
        return np.clip(x, phi.interval_lo, phi.interval_hi)
    ss, xs = _custom_resolvent_nodes(phi, tau)
    out = np.interp(x, ss, xs)
    below = x < ss[0]
    above = x > ss[-1]
    out[below] = x[below] - tau * phi.table_y[0]
    out[above] = x[above] - tau * phi.table_y[-1]
    return out


def prox_derivative(phi: PhiSpec, tau: float, x: np.ndarray) -> np.ndarray:
    """Generalized derivative of the resolvent, nodewise."""
    x = np.asarray(x, dtype=float)
    if phi.kind == "zero":
        return np.ones_like(x)
    if phi.kind == "linear":
        return np.full_like(x, 1.0 / (1.0 + tau * phi.slope))
    if phi.kind == "absolute_value_subdifferential":
        return (np.abs(x) > tau * phi.weight).astype(float)
    if phi.kind == "indicator_interval":
        return ((x > phi.interval_lo) & (x < phi.interval_hi)).astype(float)
    ss, xs = _custom_resolvent_nodes(phi, tau)
    slopes = np.diff(xs) / np.diff(ss)
    j = np.clip(np.searchsorted(ss, x, side="right") - 1, 0, len(ss) - 2)
    out = slopes[j]
    out[(x < ss[0]) | (x > ss[-1])] = 1.0
    return out


def _custom_graph_interval(phi: PhiSpec, y: np.ndarray, atol: float) -> tuple[np.ndarray, np.ndarray]:
    xs = phi.table_x
    ys = phi.table_y
    lo = np.full(y.shape, np.inf)
    hi = np.full(y.shape, -np.inf)
    for j in range(len(xs) - 1):
        x0, x1, y0, y1 = xs[j], xs[j + 1], ys[j], ys[j + 1]
        mask = (y >= x0 - atol) & (y <= x1 + atol)
        if x1 == x0:
            val_lo, val_hi = np.full(y.shape, y0), np.full(y.shape, y1)
        else:
            val = y0 + (y1 - y0) * (np.clip(y, x0, x1) - x0) / (x1 - x0)
            val_lo = val_hi = val
        lo = np.where(mask, np.minimum(lo, val_lo), lo)
        hi = np.where(mask, np.maximum(hi, val_hi), hi)
    left = y <= xs[0] + atol
    right = y >= xs[-1] - atol
    lo = np.where(left, np.minimum(lo, ys[0]), lo)
    hi = np.where(left, np.maximum(hi, ys[0]), hi)
    lo = np.where(right, np.minimum(lo, ys[-1]), lo)
    hi = np.where(right, np.maximum(hi, ys[-1]), hi)
    return lo, hi


def beta_distance(phi: PhiSpec, y: np.ndarray, v: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Nodewise distance from v to the set beta(y)."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if phi.kind == "zero":
        return np.abs(v)
    if phi.kind == "linear":
        return np.abs(v - phi.slope * y)
    if phi.kind == "absolute_value_subdifferential":
        w = phi.weight
        return np.where(y > atol, np.abs(v - w), np.where(y < -atol, np.abs(v + w), np.maximum(np.abs(v) - w, 0.0)))
    if phi.kind == "indicator_interval":
        at_lo = np.abs(y - phi.interval_lo) <= atol
        at_hi = np.abs(y - phi.interval_hi) <= atol
        d = np.abs(v)
        d = np.where(at_lo, np.maximum(v, 0.0), d)
        d = np.where(at_hi, np.maximum(-v, 0.0), d)
        d = np.where(at_lo & at_hi, 0.0, d)
        outside = (y < phi.interval_lo - atol) | (y > phi.interval_hi + atol)
        return np.where(outside, np.inf, d)
    lo, hi = _custom_graph_interval(phi, y, atol)
    return np.maximum(np.maximum(lo - v, v - hi), 0.0)


def beta_min_norm_at_zero(phi: PhiSpec) -> float:
    if phi.kind != "custom":
        return 0.0
    lo, hi = _custom_graph_interval(phi, np.zeros(1), 0.0)
    if lo[0] <= 0.0 <= hi[0]:
        return 0.0
    return float(min(abs(lo[0]), abs(hi[0])))


def subdifferential_at_zero_norm(phi: PhiSpec, space: SpaceGrid) -> float:
    """H-norm of the least-norm element of the subdifferential of phi at 0."""
    return beta_min_norm_at_zero(phi) * math.sqrt(space.volume)


# --- diagnostics ------------------------------------------------------------


@dataclass
class MonotonicityReport:
    n_pairs: int
    skipped_pairs: int
    min_monotonicity_ratio: Optional[float]
    min_coercivity_ratio: Optional[float]
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "skipped_pairs": self.skipped_pairs,
            "min_monotonicity_ratio": self.min_monotonicity_ratio,
            "min_coercivity_ratio": self.min_coercivity_ratio,
            "violations": list(self.violations),
            "status": "pass" if self.passed else "fail",
        }


def random_pairs(space: SpaceGrid, n: int, rng: np.random.Generator, scale: float = 1.0) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(scale * rng.standard_normal(space.size), scale * rng.standard_normal(space.size)) for _ in range(n)]


def check_monotone(
    op: OperatorSpec,
    samples: list[tuple[np.ndarray, np.ndarray]],
    space: SpaceGrid,
    t: float = 0.0,
    tol: float = 1e-9,
) -> MonotonicityReport:
    if not samples:
        raise ParameterError("check_monotone needs at least one sample pair")
    mono: list[float] = []
    coer: list[float] = []
    skipped = 0
    for u, v in samples:
        au = apply_A(op, t, u, space)
        av = apply_A(op, t, v, space)
        d = u - v
        dn = h_norm(d, space)
        if dn <= 1e-14:
            skipped += 1
        else:
            mono.append(inner(au - av, d, space) / dn**2)
        for w, aw in ((u, au), (v, av)):
            wn = x_norm(w, space, op.p)
            if wn > 1e-14:
                coer.append(inner(aw, w, space) / wn**op.p)

    report = MonotonicityReport(
        n_pairs=len(samples),
        skipped_pairs=skipped,
        min_monotonicity_ratio=min(mono) if mono else None,
        min_coercivity_ratio=min(coer) if coer else None,
    )
    if report.min_monotonicity_ratio is not None:
        if report.min_monotonicity_ratio < -tol:
            report.violations.append(f"not monotone: ratio {report.min_monotonicity_ratio:.6g} < 0")
        elif report.min_monotonicity_ratio < op.strong_monotonicity_c0 - tol * max(1.0, op.strong_monotonicity_c0):
            report.violations.append(
                f"strong monotonicity ratio {report.min_monotonicity_ratio:.6g} below declared {op.strong_monotonicity_c0:.6g}"
            )
    if report.min_coercivity_ratio is not None:
        declared = op.coercivity_c0 * op.modulation.m_min if op.modulation else op.coercivity_c0
        if report.min_coercivity_ratio < declared - tol * max(1.0, declared):
            report.violations.append(
                f"coercivity ratio {report.min_coercivity_ratio:.6g} below declared {declared:.6g}"
            )
    if report.violations:
        logger.warning("Operator %s failed declared constants: %s", op.kind, "; ".join(report.violations))
    return report


@dataclass
class PotentialReport:
    n_pairs: int
    declared: float
    min_ratio: Optional[float]

    @property
    def passed(self) -> bool:
        return self.min_ratio is None or self.min_ratio >= self.declared - 1e-9 * max(1.0, self.declared)

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "declared": self.declared,
            "min_ratio": self.min_ratio,
            "status": "pass" if self.passed else "fail",
        }


def check_potential(phi: PhiSpec, n_pairs: int, rng: np.random.Generator, scale: float = 1.0) -> PotentialReport:
    """Sampled strong monotonicity of beta on graph points (prox(x), x - prox(x))."""
    if n_pairs < 1:
        raise ParameterError(f"check_potential needs n_pairs >= 1, got {n_pairs}")
    x = scale * rng.standard_normal((n_pairs, 2))
    y = prox_phi(phi, 1.0, x.ravel()).reshape(x.shape)
    g = x - y
    dy = y[:, 0] - y[:, 1]
    keep = np.abs(dy) > 1e-12
    ratios = (g[keep, 0] - g[keep, 1]) / dy[keep]
    return PotentialReport(
        n_pairs=n_pairs,
        declared=phi.strong_monotonicity_c0,
        min_ratio=float(np.min(ratios)) if ratios.size else None,
    )
