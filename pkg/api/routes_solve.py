import logging
from typing import Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, model_validator

from api.db import get_db, record_run
from core.artifacts import to_jsonable
from core.errors import ConfigError, InclusionError
from core.oracles import oracle_values
from core.runner import run
from core.scenarios import builtin_scenario, load_scenario_text

logger = logging.getLogger(__name__)
router = APIRouter()


class ValidatePayload(BaseModel):
    config: str


class RunPayload(BaseModel):
    config: Optional[str] = None
    builtin: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self) -> "RunPayload":
        if (self.config is None) == (self.builtin is None):
            raise ValueError("give exactly one of config or builtin")
        return self


def _config_error(exc: ConfigError) -> HTTPException:
    return HTTPException(status_code=422, detail={"error": "Invalid scenario", "detail": exc.to_dict()})


@router.post("/scenarios/validate")
def validate_scenario(payload: ValidatePayload):
    try:
        scn = load_scenario_text(payload.config)
    except ConfigError as exc:
        raise _config_error(exc)
    return {"status": "valid", "config": scn.effective_config()}


@router.post("/scenarios/run")
def run_scenario(payload: RunPayload):
    try:
        scn = builtin_scenario(payload.builtin) if payload.builtin else load_scenario_text(payload.config)
    except ConfigError as exc:
        raise _config_error(exc)
    except InclusionError as exc:
        raise HTTPException(status_code=422, detail={"error": "Invalid scenario", "detail": exc.to_dict()})

    art = run(scn)
    try:
        record_run(scn.name, scn.workflow, art.status, art.duration_ms, str(art.out_dir))
    except Exception:
        logger.exception("Failed storing run %s", scn.name)
    if art.exit_code != 0:
        raise HTTPException(status_code=409, detail={"error": "Solver failed", "detail": to_jsonable(art.report)})
    return {
        "status": art.status,
        "out_dir": str(art.out_dir),
        "files": {name: str(path) for name, path in sorted(art.files.items())},
        "report": to_jsonable(art.report),
    }


@router.get("/runs")
def list_runs():
    try:
        conn = get_db()
        rows = conn.execute(
            """
            SELECT id, name, workflow, status, duration_ms, out_dir, created_at
            FROM runs
            ORDER BY id DESC
            LIMIT 50
            """
        ).fetchall()
        conn.close()
        return {"runs": [dict(r) for r in rows]}
    except Exception as exc:
        logger.exception("Failed loading runs")
        raise HTTPException(status_code=500, detail={"error": "Failed loading runs", "detail": str(exc)})


@router.get("/oracles/{name}")
def get_oracle(name: str):
    try:
        values = oracle_values(name)
    except InclusionError as exc:
        raise HTTPException(status_code=404, detail={"error": "Unknown oracle", "detail": str(exc)})
    return to_jsonable({"oracle": name, **values})
