"""Scenario files, their schema, the built-in catalog and the parabolic control builder."""

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional, Union

import chardet
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.cauchy_solver import StepConfig
from core.errors import ConfigError, InclusionError
from core.grid_core import ForcingPath, SpaceGrid, TimeGrid, as_state
from core.monotone_ops import OperatorSpec, PhiSpec, dirichlet_min_eigenvalue
from core.set_valued import MultimapSpec, Selection

logger = logging.getLogger(__name__)

Workflow = Literal["cauchy", "periodic_fixed_h", "convex", "nonconvex", "extremal", "relaxation", "regularized_path"]
MULTIMAP_WORKFLOWS = {"convex", "nonconvex", "extremal", "relaxation", "regularized_path"}

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


# --- parsing ----------------------------------------------------------------


def _strip_comment(line: str) -> str:
    in_string = False
    escaped = False
    for i, ch in enumerate(line):
        if escaped:
            escaped = False
        elif ch == "\\" and in_string:
            escaped = True
        elif ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            return line[:i]
    return line


def parse_config_text(text: str) -> tuple[dict[str, Any], dict[str, int]]:
    """Flat `dotted.key = value` lines into a nested dict, plus the line of every key."""
    tree: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not _KEY.match(key):
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        try:
            parsed = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse value {value.strip()!r}: {exc.msg}", field=key, line=lineno) from exc
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", field=key, line=lineno)

        node = tree
        parts = key.split(".")
        for depth, part in enumerate(parts[:-1]):
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                prefix = ".".join(parts[: depth + 1])
                raise ConfigError(f"{prefix!r} is both a value and a section", field=key, line=lineno)
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"{key!r} is both a value and a section", field=key, line=lineno)
        node[parts[-1]] = parsed
        lines[key] = lineno
    return tree, lines


def read_config_file(path: Union[str, Path]) -> str:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {p}: {exc.strerror}") from exc
    enc = chardet.detect(raw).get("encoding") or "utf-8"
    return raw.decode(enc, errors="replace")


# --- schema -----------------------------------------------------------------


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class TimeSection(_Section):
    b: float = Field(gt=0.0)
    n_steps: int = Field(ge=2)


class SpaceSection(_Section):
    dim: Literal[0, 1, 2] = 0
    size: int = Field(default=1, ge=1)
    extent: tuple[float, ...] = ()
    nodes: tuple[int, ...] = ()

    @model_validator(mode="after")
    def _shape(self) -> "SpaceSection":
        if self.dim > 0 and (len(self.extent) != self.dim or len(self.nodes) != self.dim):
            raise ValueError(f"dim={self.dim} needs {self.dim} extent and node entries")
        if any(e <= 0 for e in self.extent) or any(n < 1 for n in self.nodes):
            raise ValueError("extents must be > 0 and node counts >= 1")
        return self

    def grid(self) -> SpaceGrid:
        if self.dim == 0:
            return SpaceGrid.euclidean(self.size)
        return SpaceGrid(self.dim, tuple(self.extent), tuple(self.nodes))


class ForcingSection(_Section):
    kind: Literal["zero", "constant", "cosine", "sine", "split"] = "zero"
    amplitude: float = 0.0
    frequency: float = 1.0
    profile: Literal["uniform", "sine_bump"] = "uniform"


class InitialSection(_Section):
    kind: Literal["zero", "constant", "values"] = "zero"
    value: float = 0.0
    values: tuple[float, ...] = ()


class SolverSection(_Section):
    inner_max_iter: int = Field(default=500, ge=1)
    inner_tol: float = Field(default=1e-10, gt=0.0)
    inner_method: Literal["fixed_point_prox", "damped_newton_on_smooth_part"] = "fixed_point_prox"
    damping: float = Field(default=1.0, gt=0.0, le=1.0)
    max_halvings: int = Field(default=6, ge=0)
    outer_tol: float = Field(default=1e-8, gt=0.0)
    poincare_max: int = Field(default=200, ge=1)
    outer_max: int = Field(default=50, ge=1)
    theta: float = Field(default=0.5, gt=0.0, le=1.0)

    def step_config(self) -> StepConfig:
        return StepConfig(
            inner_max_iter=self.inner_max_iter,
            inner_tol=self.inner_tol,
            inner_method=self.inner_method,
            damping=self.damping,
            max_halvings=self.max_halvings,
        )


class SelectionSection(_Section):
    mode: Literal["minimal_norm", "centroid", "extremal_vertex", "near_target"] = "minimal_norm"
    schedule: tuple[str, ...] = ("+",)
    schedule_dt: Optional[float] = Field(default=None, gt=0.0)
    target: float = 0.0
    eps: float = Field(default=1e-3, gt=0.0)


class RelaxationSection(_Section):
    delta_divisors: tuple[int, ...] = (10, 20, 40, 80)
    eps_schedule: tuple[float, ...] = ()
    extremal_divisor: int = Field(default=20, ge=1)


class RegularizationSection(_Section):
    eps_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    stage: Literal["convex", "nonconvex", "extremal"] = "convex"


class DiagnosticsSection(_Section):
    sampled: bool = True
    n_pairs: int = Field(default=20, ge=1)
    sample_scale: float = Field(default=1.0, gt=0.0)
    hartman_samples: int = Field(default=32, ge=0)
    contraction_pairs: int = Field(default=0, ge=0)
    declares_growth: bool = True
    declares_lipschitz: bool = False


class OutputSection(_Section):
    dir: Optional[str] = None


class ScenarioConfig(_Section):
    name: str = Field(min_length=1)
    workflow: Workflow
    seed: Optional[int] = None
    time: TimeSection
    space: SpaceSection = SpaceSection()
    op: OperatorSpec
    phi: PhiSpec = PhiSpec()
    multimap: Optional[MultimapSpec] = None
    forcing: ForcingSection = ForcingSection()
    initial: InitialSection = InitialSection()
    solver: SolverSection = SolverSection()
    selection: SelectionSection = SelectionSection()
    relaxation: RelaxationSection = RelaxationSection()
    regularization: RegularizationSection = RegularizationSection()
    diagnostics: DiagnosticsSection = DiagnosticsSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _workflow_fields(self) -> "ScenarioConfig":
        if self.workflow in MULTIMAP_WORKFLOWS and self.multimap is None:
            raise ValueError(f"workflow {self.workflow!r} needs a multimap section")
        if self.op.kind in ("discrete_p_laplacian", "p_laplacian_plus_laplacian") and self.space.dim == 0:
            raise ValueError(f"operator {self.op.kind!r} needs a spatial grid (space.dim 1 or 2)")
        return self


def _field_line(field: str, lines: dict[str, int]) -> Optional[int]:
    if field in lines:
        return lines[field]
    hits = [n for k, n in lines.items() if k.startswith(field + ".")] if field else []
    return min(hits) if hits else None


def validate_config(tree: dict[str, Any], lines: Optional[dict[str, int]] = None) -> ScenarioConfig:
    lines = lines or {}
    try:
        config = ScenarioConfig.model_validate(tree)
    except ValidationError as exc:
        err = exc.errors()[0]
        field = ".".join(str(part) for part in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        raise ConfigError(f"{field or 'config'}: {msg}", field=field or None, line=_field_line(field, lines)) from exc
    if config.seed is None and config.diagnostics.sampled:
        raise ConfigError(
            "seed: sampled diagnostics need a seed (set seed, or diagnostics.sampled = false)",
            field="seed",
            line=lines.get("diagnostics.sampled", lines.get("workflow")),
        )
    return config


# --- scenario ---------------------------------------------------------------


@dataclass
class Scenario:
    config: ScenarioConfig
    grid: TimeGrid
    space: SpaceGrid
    forcing: ForcingPath
    x0: np.ndarray
    step: StepConfig
    selection: Selection

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def workflow(self) -> str:
        return self.config.workflow

    @property
    def op(self) -> OperatorSpec:
        return self.config.op

    @property
    def phi(self) -> PhiSpec:
        return self.config.phi

    @property
    def F(self) -> Optional[MultimapSpec]:
        return self.config.multimap

    def effective_config(self) -> dict[str, Any]:
        return self.config.model_dump(mode="json")


def _spatial_profile(kind: str, space: SpaceGrid) -> np.ndarray:
    profile = np.ones(space.size)
    if kind == "sine_bump" and space.dim > 0:
        coords = space.coordinates()
        for axis, L in enumerate(space.extent):
            profile = profile * np.sin(math.pi * coords[:, axis] / L)
    return profile


def _forcing_path(section: ForcingSection, grid: TimeGrid, space: SpaceGrid) -> ForcingPath:
    profile = _spatial_profile(section.profile, space)
    a = section.amplitude
    w = section.frequency
    half = 0.5 * grid.b
    shapes = {
        "zero": lambda t: 0.0,
        "constant": lambda t: a,
        "cosine": lambda t: a * math.cos(w * t),
        "sine": lambda t: a * math.sin(w * t),
        "split": lambda t: a if t <= half + 1e-12 * grid.b else -a,
    }
    shape = shapes[section.kind]
    return ForcingPath.from_function(grid, space, lambda t, _: shape(t) * profile)


def _initial_state(section: InitialSection, space: SpaceGrid) -> np.ndarray:
    if section.kind == "zero":
        return space.zeros()
    if section.kind == "constant":
        return np.full(space.size, section.value)
    try:
        return as_state(section.values, space)
    except InclusionError as exc:
        raise ConfigError(str(exc), field="initial.values") from exc


def scenario_from_config(config: ScenarioConfig) -> Scenario:
    try:
        grid = TimeGrid(config.time.b, config.time.n_steps)
        space = config.space.grid()
    except InclusionError as exc:
        raise ConfigError(str(exc), field="space") from exc
    sel = config.selection
    target = ForcingPath.constant(grid, space, sel.target) if sel.mode == "near_target" else None
    selection = Selection(
        mode=sel.mode,
        schedule=sel.schedule,
        schedule_dt=sel.schedule_dt if sel.schedule_dt is not None else math.inf,
        target=target,
        eps=sel.eps,
    )
    return Scenario(
        config=config,
        grid=grid,
        space=space,
        forcing=_forcing_path(config.forcing, grid, space),
        x0=_initial_state(config.initial, space),
        step=config.solver.step_config(),
        selection=selection,
    )


def load_scenario_text(text: str) -> Scenario:
    tree, lines = parse_config_text(text)
    return scenario_from_config(validate_config(tree, lines))


def load_scenario(path: Union[str, Path]) -> Scenario:
    scn = load_scenario_text(read_config_file(path))
    logger.info("Loaded scenario %s (%s) from %s", scn.name, scn.workflow, path)
    return scn


# --- parabolic control system -------------------------------------------------

_BETA_KINDS = {
    "zero": {"kind": "zero"},
    "linear": {"kind": "linear", "slope": 1.0},
    "absolute_value": {"kind": "absolute_value_subdifferential", "weight": 1.0},
    "indicator": {"kind": "indicator_interval", "interval_lo": -1.0, "interval_hi": 1.0},
}


def build_parabolic_scenario(
    p: float = 2.0,
    nodes: Union[int, tuple[int, int]] = 49,
    b: float = 1.0,
    n_steps: int = 100,
    beta: str = "zero",
    f0: Literal["zero", "constant", "sine", "capped_growth"] = "zero",
    f0_coefficient: float = 1.0,
    control_radius: float = 0.0,
    gain: float = 1.0,
    extent: float = 1.0,
    plus_laplacian: bool = False,
    workflow: Optional[str] = None,
    seed: int = 0,
    name: Optional[str] = None,
) -> Scenario:
    """u_t - div(|Du|^{p-2} Du) + beta(u) in f0(t,z,u) + k(t,z) v, v in [-M, M], u = 0 on the boundary."""
    if beta not in _BETA_KINDS:
        raise ConfigError(f"unknown beta kind {beta!r}; expected one of {sorted(_BETA_KINDS)}", field="phi.kind")
    if isinstance(nodes, int):
        space = {"dim": 1, "extent": (extent,), "nodes": (nodes,)}
    else:
        space = {"dim": 2, "extent": (extent, extent), "nodes": tuple(nodes)}
    grid_space = SpaceGrid(space["dim"], space["extent"], space["nodes"])
    lam = dirichlet_min_eigenvalue(grid_space)
    strong = lam if (p == 2.0 or plus_laplacian) else 0.0
    if workflow is None:
        workflow = "convex" if strong > 0 else "regularized_path"
    tree = {
        "name": name or f"parabolic_p{p:g}",
        "workflow": workflow,
        "seed": seed,
        "time": {"b": b, "n_steps": n_steps},
        "space": space,
        "op": {
            "kind": "p_laplacian_plus_laplacian" if plus_laplacian else "discrete_p_laplacian",
            "p": p,
            "strong_monotonicity_c0": strong,
            "coercivity_c0": 1.0,
        },
        "phi": _BETA_KINDS[beta],
        "multimap": {
            "drift": {"kind": f0, "coefficient": f0_coefficient if f0 != "zero" else 0.0},
            "control": {"shape": "box", "radius": control_radius, "channels": 1},
            "gain": {"values": (gain,), "profile": "sine_bump"},
            "sign": -1,
        },
        "solver": {"inner_method": "damped_newton_on_smooth_part", "theta": 1.0 if control_radius == 0 else 0.5},
        "regularization": {"eps_schedule": (1e-1, 1e-2)},
    }
    return scenario_from_config(validate_config(tree))


# --- built-in catalog -------------------------------------------------------


def _scalar(name: str, workflow: str, b: float, n: int, **sections: Any) -> dict[str, Any]:
    tree = {
        "name": name,
        "workflow": workflow,
        "seed": 7,
        "time": {"b": b, "n_steps": n},
        "op": {"kind": "scalar_linear", "a": 1.0, "strong_monotonicity_c0": 1.0, "p": 2.0},
    }
    tree.update(sections)
    return tree


_INTERVAL = {"control": {"shape": "interval", "lo": -1.0, "hi": 1.0}}

_CATALOG: dict[str, Any] = {
    "scalar_decay": lambda: _scalar("scalar_decay", "cauchy", 1.0, 1000, initial={"kind": "constant", "value": 1.0}),
    "cos_forcing": lambda: _scalar(
        "cos_forcing", "periodic_fixed_h", 2.0 * math.pi, 4000, forcing={"kind": "cosine", "amplitude": -1.0}
    ),
    "interval_convex": lambda: _scalar("interval_convex", "convex", 1.0, 200, multimap=_INTERVAL),
    "hartman_ball": lambda: _scalar(
        "hartman_ball",
        "convex",
        1.0,
        200,
        multimap={
            "drift": {"kind": "linear", "coefficient": 1.0},
            "control": {"shape": "interval", "lo": -0.5, "hi": 0.5},
            "hartman_radius": 1.0,
        },
    ),
    "cubic_regularized": lambda: {
        **_scalar(
            "cubic_regularized",
            "regularized_path",
            2.0 * math.pi,
            400,
            multimap={
                "drift": {"kind": "cosine", "coefficient": 1.0, "frequency": 1.0},
                "control": {"shape": "interval", "lo": -0.2, "hi": 0.2},
            },
        ),
        "op": {"kind": "scalar_power", "a": 1.0, "p": 4.0, "strong_monotonicity_c0": 0.0},
    },
    "extremal_interval": lambda: _scalar("extremal_interval", "extremal", 1.0, 200, multimap=_INTERVAL),
    "relaxation_benchmark": lambda: _scalar("relaxation_benchmark", "relaxation", 1.0, 1280, multimap=_INTERVAL),
    "parabolic_heat": lambda: build_parabolic_scenario(f0="constant", name="parabolic_heat"),
    "parabolic_plap4": lambda: build_parabolic_scenario(
        p=4.0, nodes=19, beta="absolute_value", f0="sine", control_radius=0.5, n_steps=50, name="parabolic_plap4"
    ),
}


def builtin_names() -> list[str]:
    return sorted(_CATALOG)


def builtin_scenario(name: str) -> Scenario:
    if name not in _CATALOG:
        raise ConfigError(f"unknown built-in scenario {name!r}; expected one of {builtin_names()}", field="name")
    made = _CATALOG[name]()
    return made if isinstance(made, Scenario) else scenario_from_config(validate_config(made))


def resolve_scenario(ref: str) -> Scenario:
    """`builtin:<name>` or a path to a scenario file."""
    if ref.startswith("builtin:"):
        return builtin_scenario(ref.split(":", 1)[1])
    return load_scenario(ref)
