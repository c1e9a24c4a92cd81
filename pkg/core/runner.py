"""Runs a scenario's workflow, checks its declared hypotheses and writes the artifacts."""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from app_state import load_settings
from core.artifacts import rows_to_csv, write_json_atomic, write_text_atomic
from core.cauchy_solver import inclusion_defect, solve_cauchy, verify_uniqueness
from core.errors import InclusionError
from core.grid_core import ForcingPath, Trajectory, forcing_to_csv, h_norm, trajectory_to_csv
from core.monotone_ops import check_monotone, check_potential, random_pairs
from core.periodic_solver import (
    apriori_check,
    contraction_probe,
    find_periodic,
    solve_convex,
    solve_extremal,
    solve_nonconvex,
    solve_regularized_path,
    strong_monotonicity_constant,
)
from core.relaxation_lab import relax_approximate, relaxation_rows
from core.scenarios import Scenario
from core.set_valued import growth_modulus, hartman_check, image_bounds, lipschitz_check, sphere_samples

logger = logging.getLogger(__name__)

ARTIFACT_NAMES = (
    "trajectory.csv",
    "forcing.csv",
    "report.json",
    "diagnostics.json",
    "relaxation.csv",
    "relaxation_trajectory.csv",
    "failure.json",
)
RELAXATION_COLUMNS = ["delta", "weak_gap", "sup_gap", "gronwall_bound"]
PERIODIC_WORKFLOWS = {"periodic_fixed_h", "convex", "nonconvex", "extremal", "relaxation"}


@dataclass
class RunArtifacts:
    out_dir: Path
    status: str
    exit_code: int
    report: dict[str, Any]
    files: dict[str, Path] = field(default_factory=dict)
    duration_ms: int = 0


@dataclass
class WorkflowResult:
    trajectory: Trajectory
    forcing: ForcingPath
    report: dict[str, Any]
    relaxation_rows: Optional[list[dict[str, float]]] = None
    relaxation_trajectory: Optional[Trajectory] = None


def default_out_dir(scn: Scenario) -> Path:
    if scn.config.output.dir:
        return Path(scn.config.output.dir)
    return load_settings().output_root / scn.name


# --- hypotheses -------------------------------------------------------------


def _entry(hypothesis: str, status: str, **details: Any) -> dict[str, Any]:
    return {"hypothesis": hypothesis, "status": status, **details}


def _from_report(hypothesis: str, report: dict[str, Any]) -> dict[str, Any]:
    return {"hypothesis": hypothesis, **report}


def _unverified(hypothesis: str, reason: str) -> dict[str, Any]:
    return _entry(hypothesis, "unverified", reason=reason)


def _operator_entries(scn: Scenario, rng: np.random.Generator) -> dict[str, dict[str, Any]]:
    d = scn.config.diagnostics
    op = scn.op
    pairs = random_pairs(scn.space, d.n_pairs, rng, d.sample_scale)
    rep = check_monotone(op, pairs, scn.space)
    tol = 1e-9
    mono = rep.min_monotonicity_ratio
    coer = rep.min_coercivity_ratio
    coer_declared = op.coercivity_c0 * (op.modulation.m_min if op.modulation else 1.0)
    c0 = op.strong_monotonicity_c0

    def status(ok: bool) -> str:
        return "pass" if ok else "fail"

    return {
        "operator_monotone": _entry(
            "H(A) monotone", status(mono is None or mono >= -tol), min_ratio=mono, n_pairs=rep.n_pairs
        ),
        "operator_strongly_monotone": _entry(
            "H(A) strongly monotone",
            status(mono is None or mono >= c0 - tol * max(1.0, c0)),
            declared=c0,
            min_ratio=mono,
        ),
        "operator_coercive": _entry(
            "H(A) coercive",
            status(coer is None or coer >= coer_declared - tol * max(1.0, coer_declared)),
            declared=coer_declared,
            min_ratio=coer,
        ),
    }


def _growth_entry(scn: Scenario, rng: np.random.Generator) -> dict[str, Any]:
    d = scn.config.diagnostics
    F = scn.F
    space = scn.space
    k = growth_modulus(F, space)
    worst = -math.inf
    for t in np.linspace(0.0, scn.grid.b, 5):
        for _ in range(d.n_pairs):
            x = d.sample_scale * rng.standard_normal(space.size)
            lo, hi = image_bounds(F, float(t), x, space)
            size = h_norm(np.maximum(np.abs(lo), np.abs(hi)), space)
            worst = max(worst, size - k * (1.0 + h_norm(x, space)))
    ok = worst <= 1e-9 * max(1.0, k)
    return _entry("H(F) linear growth", "pass" if ok else "fail", growth_modulus=k, max_excess=worst)


def build_diagnostics(scn: Scenario, jobs: int = 1) -> dict[str, Any]:
    d = scn.config.diagnostics
    F = scn.F
    seed = scn.config.seed
    entries: dict[str, dict[str, Any]] = {}
    if not d.sampled or seed is None:
        reason = "sampled diagnostics disabled"
        for key, name in (
            ("operator_monotone", "H(A) monotone"),
            ("operator_strongly_monotone", "H(A) strongly monotone"),
            ("operator_coercive", "H(A) coercive"),
            ("potential_strongly_monotone", "H(phi) strongly monotone"),
        ):
            entries[key] = _unverified(name, reason)
        if F is not None:
            entries["multimap_growth"] = _unverified("H(F) linear growth", reason)
            if F.hartman_radius is not None:
                entries["hartman"] = _unverified("Hartman condition", reason)
            entries["lipschitz"] = _unverified("H(F) Lipschitz", reason)
    else:
        rng = np.random.default_rng(seed)
        entries.update(_operator_entries(scn, rng))
        pot = check_potential(scn.phi, d.n_pairs, rng, d.sample_scale)
        entries["potential_strongly_monotone"] = _from_report("H(phi) strongly monotone", pot.to_dict())
        if F is not None:
            if d.declares_growth:
                entries["multimap_growth"] = _growth_entry(scn, rng)
            else:
                entries["multimap_growth"] = _unverified("H(F) linear growth", "not declared")
            if F.hartman_radius is not None:
                samples = sphere_samples(scn.space, F.hartman_radius, d.hartman_samples, rng)
                times = tuple(float(t) for t in np.linspace(0.0, scn.grid.b, 4, endpoint=False))
                rep = hartman_check(F, F.hartman_radius, scn.space, samples, times)
                entries["hartman"] = _from_report("Hartman condition", rep.to_dict())
            if d.declares_lipschitz or scn.workflow == "relaxation":
                rep = lipschitz_check(F, random_pairs(scn.space, d.n_pairs, rng, d.sample_scale), 0.0, scn.space)
                entries["lipschitz"] = _from_report("H(F) Lipschitz", rep.to_dict())
            else:
                entries["lipschitz"] = _unverified("H(F) Lipschitz", "not declared")
        if scn.workflow == "cauchy":
            rep = verify_uniqueness(scn.op, scn.phi, scn.step, scn.grid, scn.x0, scn.forcing, 3, seed)
            entries["cauchy_uniqueness"] = _from_report("Cauchy uniqueness", rep.to_dict())
        if d.contraction_pairs > 0 and scn.workflow in PERIODIC_WORKFLOWS:
            entries["poincare_contraction"] = _contraction_entry(scn, rng, jobs)

    statuses = {e["status"] for e in entries.values()}
    return {
        "scenario": scn.name,
        "workflow": scn.workflow,
        "seed": seed,
        "hypotheses": entries,
        "hypothesis_status": "verified" if statuses <= {"pass"} else "hypothesis-unverified",
        "effective_config": scn.effective_config(),
    }


def _contraction_entry(scn: Scenario, rng: np.random.Generator, jobs: int) -> dict[str, Any]:
    c = strong_monotonicity_constant(scn.op, scn.phi)
    if not c > 0:
        return _unverified("Poincare contraction", "operator not declared strongly monotone")
    d = scn.config.diagnostics
    ratios = contraction_probe(
        scn.op, scn.phi, scn.step, scn.grid, scn.forcing, d.contraction_pairs, rng, d.sample_scale, jobs
    )
    bound = math.exp(-c * scn.grid.b)
    ok = max(ratios) <= bound * 1.05
    return _entry(
        "Poincare contraction",
        "pass" if ok else "fail",
        max_ratio=max(ratios),
        rate_bound=bound,
        stated_rate=math.exp(-2.0 * c * scn.grid.b),
        ratios=ratios,
    )


# --- workflows --------------------------------------------------------------


def run_workflow(scn: Scenario, jobs: int = 1) -> WorkflowResult:
    cfg = scn.config
    s = cfg.solver
    common = (scn.op, scn.phi, scn.step, scn.grid)
    wf = scn.workflow

    if wf == "cauchy":
        traj = solve_cauchy(*common, scn.x0, scn.forcing)
        report = {
            "workflow": "cauchy",
            "inclusion_defect": inclusion_defect(scn.op, scn.phi, traj, scn.forcing),
            "final_state_norm": h_norm(traj.final, scn.space),
        }
        return WorkflowResult(traj, scn.forcing, report)

    if wf == "periodic_fixed_h":
        traj, rep = find_periodic(*common, scn.forcing, scn.x0, outer_tol=s.outer_tol, outer_max=s.poincare_max)
        rep.inclusion_defect = inclusion_defect(scn.op, scn.phi, traj, scn.forcing)
        rep.apriori_margin = apriori_check(traj, scn.forcing, scn.phi, strong_monotonicity_constant(scn.op, scn.phi))
        return WorkflowResult(traj, scn.forcing, rep.to_dict())

    loop = {"outer_tol": s.outer_tol, "outer_max": s.outer_max}
    delta = scn.grid.b / cfg.relaxation.extremal_divisor
    if wf == "convex":
        sol = solve_convex(*common, scn.space, scn.F, scn.selection, s.theta, x_init=scn.x0, **loop)
    elif wf == "nonconvex":
        sol = solve_nonconvex(*common, scn.space, scn.F, x_init=scn.x0, **loop)
    elif wf == "extremal":
        sol = solve_extremal(*common, scn.space, scn.F, delta, x_init=scn.x0, **loop)
    elif wf == "regularized_path":
        reg = cfg.regularization
        sol = solve_regularized_path(
            *common,
            scn.space,
            scn.F,
            eps_schedule=reg.eps_schedule,
            stage=reg.stage,
            selection=scn.selection,
            delta=delta if reg.stage == "extremal" else None,
            **loop,
        )
    else:
        return _run_relaxation(scn, jobs)
    return WorkflowResult(sol.trajectory, sol.forcing, sol.report.to_dict())


def _run_relaxation(scn: Scenario, jobs: int) -> WorkflowResult:
    cfg = scn.config
    s = cfg.solver
    sol = solve_convex(
        scn.op, scn.phi, scn.step, scn.grid, scn.space, scn.F, scn.selection, s.theta,
        outer_tol=s.outer_tol, outer_max=s.outer_max, x_init=scn.x0,
    )
    deltas = tuple(scn.grid.b / n for n in cfg.relaxation.delta_divisors)
    run = relax_approximate(
        scn.op, scn.phi, scn.step, scn.grid, scn.F, sol.trajectory, sol.forcing,
        deltas, cfg.relaxation.eps_schedule or None, jobs,
    )
    rows = relaxation_rows(run)
    report = sol.report.to_dict()
    report["workflow"] = "relaxation"
    report["relaxation"] = {
        "eta_hat_max": run.eta_hat_max,
        "lipschitz": run.lipschitz,
        "radius": run.radius,
        "target_membership_defect": run.target_membership_defect,
        "weak_gap_certificates": [run.weak_gap_certificate(step) for step in run.steps],
        "refresh_residuals": [step.refresh_residual for step in run.steps],
        "rows": rows,
    }
    return WorkflowResult(sol.trajectory, sol.forcing, report, rows, run.steps[-1].trajectory)


# --- orchestration ----------------------------------------------------------


def _clear_stale(out_dir: Path) -> None:
    for name in ARTIFACT_NAMES:
        (out_dir / name).unlink(missing_ok=True)


def run(scn: Scenario, out_dir: Optional[Union[str, Path]] = None, jobs: int = 1) -> RunArtifacts:
    target = Path(out_dir) if out_dir else default_out_dir(scn)
    target.mkdir(parents=True, exist_ok=True)
    _clear_stale(target)
    started = time.perf_counter()
    files: dict[str, Path] = {}
    logger.info("Run %s (%s) -> %s", scn.name, scn.workflow, target)
    try:
        diagnostics = build_diagnostics(scn, jobs)
        files["diagnostics.json"] = write_json_atomic(target / "diagnostics.json", diagnostics)
        result = run_workflow(scn, jobs)
        report = {
            "scenario": scn.name,
            "status": "ok",
            "hypothesis_status": diagnostics["hypothesis_status"],
            **result.report,
        }
        files["trajectory.csv"] = write_text_atomic(target / "trajectory.csv", trajectory_to_csv(result.trajectory))
        files["forcing.csv"] = write_text_atomic(target / "forcing.csv", forcing_to_csv(result.forcing))
        if result.relaxation_rows is not None:
            files["relaxation.csv"] = write_text_atomic(
                target / "relaxation.csv", rows_to_csv(result.relaxation_rows, RELAXATION_COLUMNS)
            )
        if result.relaxation_trajectory is not None:
            files["relaxation_trajectory.csv"] = write_text_atomic(
                target / "relaxation_trajectory.csv", trajectory_to_csv(result.relaxation_trajectory)
            )
        files["report.json"] = write_json_atomic(target / "report.json", report)
        status, code = "ok", 0
    except InclusionError as exc:
        logger.exception("Run %s failed", scn.name)
        report = {"scenario": scn.name, "workflow": scn.workflow, **exc.to_dict()}
        files["failure.json"] = write_json_atomic(target / "failure.json", report)
        status, code = "failed", 1
    except Exception as exc:
        logger.exception("Run %s crashed", scn.name)
        report = {
            "scenario": scn.name,
            "workflow": scn.workflow,
            "status": "failed",
            "error_type": "internal_error",
            "message": str(exc),
        }
        files["failure.json"] = write_json_atomic(target / "failure.json", report)
        status, code = "failed", 1
    duration_ms = int((time.perf_counter() - started) * 1000)
    logger.info("Run %s finished: %s in %d ms", scn.name, status, duration_ms)
    return RunArtifacts(out_dir=target, status=status, exit_code=code, report=report, files=files, duration_ms=duration_ms)
