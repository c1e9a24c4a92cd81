"""Multivalued perturbation F(t,x) = sign * (f(t,x) + k(t,.) . v), v in K, and its selections.

F(t,x) is a product over nodes of one-dimensional sets (intervals for box and
interval control sets, finite sets otherwise), so projections, distances and
extreme points are all computed nodewise in closed form.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.errors import ConfigError, ParameterError
from core.grid_core import ForcingPath, SpaceGrid, Trajectory, h_norm, hausdorff_finite, inner

logger = logging.getLogger(__name__)


class DriftSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["zero", "constant", "linear", "sine", "capped_growth", "cosine"] = "zero"
    coefficient: float = 0.0
    cap: float = Field(default=10.0, gt=0.0)
    frequency: float = 1.0

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        c = self.coefficient
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "constant":
            return np.full_like(x, c)
        if self.kind == "linear":
            return c * x
        if self.kind == "sine":
            return c * np.sin(x)
        if self.kind == "capped_growth":
            return c * np.minimum(1.0 + np.abs(x), self.cap)
        return np.full_like(x, c * math.cos(self.frequency * t))

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind in ("zero", "constant", "cosine") else abs(self.coefficient)

    @property
    def growth(self) -> float:
        return 0.0 if self.kind == "zero" else abs(self.coefficient)

    def bound(self, radius: float, space: SpaceGrid) -> float:
        """sup of |f(t,x)| in H over |x| <= radius."""
        c = abs(self.coefficient)
        root_vol = math.sqrt(space.volume)
        if self.kind == "zero":
            return 0.0
        if self.kind in ("constant", "cosine"):
            return c * root_vol
        if self.kind == "linear":
            return c * radius
        if self.kind == "sine":
            return c * min(radius, root_vol)
        return c * min(root_vol + radius, self.cap * root_vol)


class ControlSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: Literal["box", "interval", "finite_set"]
    radius: float = Field(default=1.0, ge=0.0)
    channels: int = Field(default=1, ge=1)
    lo: float = -1.0
    hi: float = 1.0
    points: tuple[tuple[float, ...], ...] = ()

    @field_validator("points", mode="before")
    @classmethod
    def _scalar_points(cls, v):
        return tuple(p if isinstance(p, (list, tuple)) else (p,) for p in v)

    @model_validator(mode="after")
    def _shape_consistent(self) -> "ControlSpec":
        if self.shape == "interval" and self.lo > self.hi:
            raise ValueError("interval control needs lo <= hi")
        if self.shape == "finite_set":
            if not self.points:
                raise ValueError("finite_set control needs at least one point")
            if len({len(p) for p in self.points}) != 1:
                raise ValueError("finite_set points must share one channel count")
        return self

    @property
    def n_channels(self) -> int:
        if self.shape == "box":
            return self.channels
        if self.shape == "interval":
            return 1
        return len(self.points[0]) if self.points else 1


class GainSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    values: tuple[float, ...]
    profile: Literal["uniform", "sine_bump"] = "uniform"


class MultimapSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    drift: DriftSpec = DriftSpec()
    control: ControlSpec
    gain: Optional[GainSpec] = None
    sign: Literal[1, -1] = 1
    hartman_radius: Optional[float] = Field(default=None, gt=0.0)
    truncation_radius: Optional[float] = Field(default=None, gt=0.0)
    lipschitz_declared: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _gain_matches_channels(self) -> "MultimapSpec":
        if self.gain is None:
            if self.control.shape == "box":
                raise ValueError("box control needs gain values, one per channel")
        elif len(self.gain.values) != self.control.n_channels:
            raise ValueError(
                f"gain has {len(self.gain.values)} values, control set has {self.control.n_channels} channels"
            )
        return self

    @property
    def lipschitz(self) -> float:
        return self.lipschitz_declared if self.lipschitz_declared is not None else self.drift.lipschitz


@dataclass
class Selection:
    mode: Literal["minimal_norm", "centroid", "extremal_vertex", "near_target"]
    schedule: tuple[str, ...] = ("+",)
    schedule_dt: float = math.inf
    target: Optional[ForcingPath] = None
    eps: float = 0.0

    def __post_init__(self) -> None:
        if self.mode == "near_target" and (self.target is None or not self.eps > 0):
            raise ParameterError("near_target selection needs a target path and eps > 0")
        if self.mode == "extremal_vertex" and not self.schedule:
            raise ParameterError("extremal_vertex selection needs a nonempty schedule")


def radial_retraction(x: np.ndarray, M: float, space: SpaceGrid) -> np.ndarray:
    if not M > 0:
        raise ParameterError(f"retraction radius must be > 0, got {M}")
    n = h_norm(x, space)
    return x if n <= M else (M / n) * x


def truncate_multimap(F: MultimapSpec, M: float) -> MultimapSpec:
    if not M > 0:
        raise ParameterError(f"truncation radius must be > 0, got {M}")
    return F.model_copy(update={"truncation_radius": float(M)})


def gain_field(F: MultimapSpec, t: float, space: SpaceGrid) -> np.ndarray:
    values = np.asarray(F.gain.values if F.gain else (1.0,) * F.control.n_channels, dtype=float)
    profile = np.ones(space.size)
    if F.gain is not None and F.gain.profile == "sine_bump" and space.dim > 0:
        coords = space.coordinates()
        for axis, L in enumerate(space.extent):
            profile = profile * np.sin(math.pi * coords[:, axis] / L)
    return profile[:, None] * values[None, :]


def _control_points(F: MultimapSpec) -> np.ndarray:
    pts = np.asarray(F.control.points, dtype=float)
    if pts.size == 0:
        raise ConfigError("finite_set control set is empty", field="multimap.control.points")
    return pts


def vertex_controls(F: MultimapSpec) -> np.ndarray:
    """Extreme points of the control set K, shape (n_vertices, channels)."""
    c = F.control
    if c.shape == "box":
        grids = np.meshgrid(*[[c.radius, -c.radius]] * c.channels, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)
    if c.shape == "interval":
        return np.array([[c.hi], [c.lo]])
    return _control_points(F)


def _effective_state(F: MultimapSpec, x: np.ndarray, space: SpaceGrid) -> np.ndarray:
    return x if F.truncation_radius is None else radial_retraction(x, F.truncation_radius, space)


def drift_values(F: MultimapSpec, t: float, x: np.ndarray, space: SpaceGrid) -> np.ndarray:
    return F.drift(t, _effective_state(F, x, space))


def _to_forcing(F: MultimapSpec, f: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    return F.sign * (f + np.sum(k * v, axis=1))


def _extreme_controls(F: MultimapSpec, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per node, the controls giving the least and the largest value of k . v over convex K."""
    c = F.control
    if c.shape == "box":
        s = np.where(k >= 0.0, 1.0, -1.0)
        return -c.radius * s, c.radius * s
    at_hi = np.where(k >= 0.0, c.hi, c.lo)
    at_lo = np.where(k >= 0.0, c.lo, c.hi)
    return at_lo, at_hi


def _finite_images(F: MultimapSpec, f: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = _control_points(F)
    images = F.sign * (f[:, None] + k @ pts.T)
    return images, pts


def image_bounds(F: MultimapSpec, t: float, x: np.ndarray, space: SpaceGrid) -> tuple[np.ndarray, np.ndarray]:
    """Nodewise convex hull [lo, hi] of F(t, x)."""
    f = drift_values(F, t, x, space)
    k = gain_field(F, t, space)
    if F.control.shape == "finite_set":
        images, _ = _finite_images(F, f, k)
        return images.min(axis=1), images.max(axis=1)
    v_lo, v_hi = _extreme_controls(F, k)
    a = _to_forcing(F, f, k, v_lo)
    b = _to_forcing(F, f, k, v_hi)
    return np.minimum(a, b), np.maximum(a, b)


def bracket(
    F: MultimapSpec, t: float, x: np.ndarray, y: np.ndarray, space: SpaceGrid
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Nodewise extreme points of F(t,x) enclosing y: (lo, hi, lo_controls, hi_controls).

    For convex control sets these are the two endpoints; for finite sets the
    nearest listed points below and above y (clamped to the extremes).
    """
    f = drift_values(F, t, x, space)
    k = gain_field(F, t, space)
    if F.control.shape != "finite_set":
        v_a, v_b = _extreme_controls(F, k)
        a = _to_forcing(F, f, k, v_a)
        b = _to_forcing(F, f, k, v_b)
        swap = a > b
        lo = np.where(swap, b, a)
        hi = np.where(swap, a, b)
        lo_v = np.where(swap[:, None], v_b, v_a)
        hi_v = np.where(swap[:, None], v_a, v_b)
        return lo, hi, lo_v, hi_v
    images, pts = _finite_images(F, f, k)
    below = np.where(images <= y[:, None], images, -np.inf)
    above = np.where(images >= y[:, None], images, np.inf)
    i_lo = np.where(np.isfinite(below.max(axis=1)), below.argmax(axis=1), images.argmin(axis=1))
    i_hi = np.where(np.isfinite(above.min(axis=1)), above.argmin(axis=1), images.argmax(axis=1))
    rows = np.arange(images.shape[0])
    return images[rows, i_lo], images[rows, i_hi], pts[i_lo], pts[i_hi]


def _controls_for(F: MultimapSpec, f: np.ndarray, k: np.ndarray, y: np.ndarray) -> np.ndarray:
    # a control in convex K with sign*(f + k.v) = y, for y inside the hull
    g = F.sign * y - f
    c = F.control
    if c.shape == "box":
        width = c.radius * np.sum(np.abs(k), axis=1)
        s = np.divide(g, width, out=np.zeros_like(g), where=width > 0)
        return c.radius * np.clip(s, -1.0, 1.0)[:, None] * np.where(k >= 0.0, 1.0, -1.0)
    kk = k[:, 0]
    mid = 0.5 * (c.lo + c.hi)
    v = np.divide(g, kk, out=np.full_like(g, mid), where=kk != 0)
    return np.clip(v, c.lo, c.hi)[:, None]


def _project(F: MultimapSpec, t: float, x: np.ndarray, y: np.ndarray, space: SpaceGrid) -> tuple[np.ndarray, np.ndarray]:
    f = drift_values(F, t, x, space)
    k = gain_field(F, t, space)
    if F.control.shape == "finite_set":
        images, pts = _finite_images(F, f, k)
        idx = np.argmin(np.abs(images - y[:, None]), axis=1)
        return images[np.arange(images.shape[0]), idx], pts[idx]
    lo, hi = image_bounds(F, t, x, space)
    proj = np.clip(y, lo, hi)
    return proj, _controls_for(F, f, k, proj)


def _vertex_from_code(F: MultimapSpec, code: str) -> np.ndarray:
    c = F.control
    if c.shape == "finite_set":
        pts = _control_points(F)
        try:
            return pts[int(code)]
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"invalid vertex index {code!r} for {len(pts)} points", field="selection.schedule") from exc
    if any(ch not in "+-" for ch in code) or not code:
        raise ConfigError(f"invalid vertex code {code!r}", field="selection.schedule")
    if c.shape == "interval":
        return np.array([c.hi if code[0] == "+" else c.lo])
    signs = code * c.channels if len(code) == 1 else code
    if len(signs) != c.channels:
        raise ConfigError(f"vertex code {code!r} does not match {c.channels} channels", field="selection.schedule")
    return np.array([c.radius if ch == "+" else -c.radius for ch in signs])


def _select(F: MultimapSpec, sel: Selection, t: float, u: np.ndarray, space: SpaceGrid) -> tuple[np.ndarray, np.ndarray]:
    f = drift_values(F, t, u, space)
    k = gain_field(F, t, space)
    if sel.mode == "minimal_norm":
        return _project(F, t, u, np.zeros(space.size), space)
    if sel.mode == "near_target":
        return _project(F, t, u, sel.target.at(t), space)
    if sel.mode == "centroid":
        c = F.control
        if c.shape == "box":
            v = np.zeros(c.channels)
        elif c.shape == "interval":
            v = np.array([0.5 * (c.lo + c.hi)])
        else:
            pts = _control_points(F)
            v = pts[np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1))]
    else:
        slot = 0 if math.isinf(sel.schedule_dt) else int(math.floor(t / sel.schedule_dt + 1e-9))
        v = _vertex_from_code(F, sel.schedule[slot % len(sel.schedule)])
    controls = np.tile(v, (space.size, 1))
    return _to_forcing(F, f, k, controls), controls


def select(F: MultimapSpec, sel: Selection, t: float, u: np.ndarray, space: SpaceGrid) -> np.ndarray:
    value, _ = _select(F, sel, t, u, space)
    return value


def select_path(F: MultimapSpec, sel: Selection, traj: Trajectory) -> ForcingPath:
    """Selection along a trajectory; step k reads the state at its right endpoint."""
    times = traj.grid.times()
    values = []
    controls = []
    for k in range(traj.grid.n_steps):
        value, v = _select(F, sel, float(times[k + 1]), traj.states[k + 1], traj.space)
        values.append(value)
        controls.append(v)
    return ForcingPath(traj.grid, traj.space, np.array(values), np.array(controls))


def membership_defect(F: MultimapSpec, t: float, u: np.ndarray, y: np.ndarray, space: SpaceGrid) -> float:
    """Largest nodewise distance from y to F(t, u)."""
    if F.control.shape == "finite_set":
        f = drift_values(F, t, u, space)
        images, _ = _finite_images(F, f, gain_field(F, t, space))
        return float(np.max(np.min(np.abs(images - y[:, None]), axis=1)))
    lo, hi = image_bounds(F, t, u, space)
    return float(np.max(np.maximum(np.maximum(lo - y, y - hi), 0.0)))


def membership(F: MultimapSpec, t: float, u: np.ndarray, y: np.ndarray, tol: float, space: SpaceGrid) -> bool:
    if tol < 0:
        raise ParameterError(f"tolerance must be >= 0, got {tol}")
    return membership_defect(F, t, u, y, space) <= tol


def path_membership_defect(F: MultimapSpec, h: ForcingPath, traj: Trajectory) -> float:
    times = traj.grid.times()
    return max(
        membership_defect(F, float(times[k + 1]), traj.states[k + 1], h.values[k], traj.space)
        for k in range(traj.grid.n_steps)
    )


def controls_are_extremal(F: MultimapSpec, controls: np.ndarray, tol: float = 1e-12) -> bool:
    c = F.control
    v = np.asarray(controls, dtype=float)
    if c.shape == "box":
        return bool(np.all(np.abs(np.abs(v) - c.radius) <= tol))
    if c.shape == "interval":
        return bool(np.all((np.abs(v - c.lo) <= tol) | (np.abs(v - c.hi) <= tol)))
    pts = _control_points(F)
    flat = v.reshape(-1, pts.shape[1])
    d = np.min(np.linalg.norm(flat[:, None, :] - pts[None, :, :], axis=2), axis=1)
    return bool(np.all(d <= tol))


def control_bound(F: MultimapSpec, t: float, space: SpaceGrid) -> float:
    """H-norm of the nodewise largest |k . v| over K."""
    k = gain_field(F, t, space)
    c = F.control
    if c.shape == "box":
        per_node = c.radius * np.sum(np.abs(k), axis=1)
    elif c.shape == "interval":
        per_node = np.abs(k[:, 0]) * max(abs(c.lo), abs(c.hi))
    else:
        per_node = np.max(np.abs(k @ _control_points(F).T), axis=1)
    return h_norm(per_node, space)


def eta_hat(F: MultimapSpec, t: float, space: SpaceGrid, radius: Optional[float] = None) -> float:
    """Uniform bound on |F^(t, x)| for the truncated map."""
    r = radius or F.truncation_radius or F.hartman_radius
    if r is None:
        raise ParameterError("eta_hat needs a truncation radius")
    return F.drift.bound(r, space) + control_bound(F, t, space)


def growth_modulus(F: MultimapSpec, space: SpaceGrid) -> float:
    """k with |F(t,x)| <= k (1 + |x|)."""
    k0 = F.drift.growth
    return max(k0 * math.sqrt(space.volume) + control_bound(F, 0.0, space), k0)


def _extreme_images(F: MultimapSpec, t: float, x: np.ndarray, space: SpaceGrid) -> np.ndarray:
    if F.control.shape == "finite_set":
        images, _ = _finite_images(F, drift_values(F, t, x, space), gain_field(F, t, space))
        return images
    lo, hi = image_bounds(F, t, x, space)
    return np.stack([lo, hi], axis=1)


@dataclass
class HartmanReport:
    radius: float
    n_samples: int
    min_inner: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "n_samples": self.n_samples,
            "min_inner": self.min_inner,
            "status": "pass" if self.passed else "fail",
        }


def sphere_samples(space: SpaceGrid, M: float, n_random: int, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for i in range(min(space.size, 8)):
        e = np.zeros(space.size)
        e[i] = 1.0
        out.extend([e, -e])
    out.extend(rng.standard_normal((n_random, space.size)))
    return [M * x / h_norm(x, space) for x in out]


def hartman_check(
    F: MultimapSpec,
    M: float,
    space: SpaceGrid,
    samples: list[np.ndarray],
    times: tuple[float, ...] = (0.0,),
) -> HartmanReport:
    """min over sampled |x| = M, t and extreme h in F(t,x) of (h, x)."""
    if not M > 0:
        raise ParameterError(f"Hartman radius must be > 0, got {M}")
    worst = math.inf
    for t in times:
        for x in samples:
            images = _extreme_images(F, t, x, space)
            worst = min(worst, space.cell_volume * float(np.sum(np.min(images * x[:, None], axis=1))))
    passed = worst >= -1e-12 * max(1.0, M * M)
    if not passed:
        logger.info("Hartman condition fails at radius %s: min (h,x)=%s", M, worst)
    return HartmanReport(radius=M, n_samples=len(samples) * len(times), min_inner=worst, passed=passed)


@dataclass
class LipschitzReport:
    declared: float
    max_ratio: float
    n_pairs: int
    ratios: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.declared * (1.0 + 1e-9) + 1e-12

    def to_dict(self) -> dict:
        return {
            "declared": self.declared,
            "max_ratio": self.max_ratio,
            "n_pairs": self.n_pairs,
            "status": "pass" if self.passed else "fail",
        }


def lipschitz_check(
    F: MultimapSpec, pairs: list[tuple[np.ndarray, np.ndarray]], t: float, space: SpaceGrid
) -> LipschitzReport:
    """Hausdorff distance of F(t,x), F(t,y) over extreme images against l |x - y|."""
    ratios = []
    for x, y in pairs:
        dxy = h_norm(x - y, space)
        if dxy <= 1e-14:
            continue
        ex = _extreme_images(F, t, x, space)
        ey = _extreme_images(F, t, y, space)
        per_node = np.array([hausdorff_finite(ex[i], ey[i]) for i in range(space.size)])
        ratios.append(math.sqrt(inner(per_node, per_node, space)) / dxy)
    return LipschitzReport(
        declared=F.lipschitz, max_ratio=max(ratios) if ratios else 0.0, n_pairs=len(ratios), ratios=ratios
    )
