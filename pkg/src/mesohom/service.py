"""HTTP front end over the same runner the CLI uses.

Start with ``uvicorn mesohom.service:app``. Runs execute synchronously in
the request; outputs land under ``MESOHOM_RUN_ROOT`` (default ``./runs``).
"""

from __future__ import annotations

import json
import os
import tempfile
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import make_config, parse_flat
from .errors import MesohomError
from .runner import compare, run


class RunRequest(BaseModel):
    config: dict[str, str | int | float] = Field(default_factory=dict, description="key/value overrides")
    config_text: str | None = Field(None, description="flat config file contents")


class RunResponse(BaseModel):
    run_id: str
    manifest: dict


class CompareRequest(BaseModel):
    reference_csv: str = Field(description="reference CSV contents")
    target: str | None = None
    tolerances: dict[str, float] = Field(default_factory=dict)


class ColumnOut(BaseModel):
    name: str
    max_error: float
    rms_error: float
    tolerance: float
    passed: bool


class CompareResponse(BaseModel):
    passed: bool
    target: str
    columns: list[ColumnOut]


def _root() -> Path:
    return Path(os.environ.get("MESOHOM_RUN_ROOT", "runs"))


def _run_dir(run_id: str) -> Path:
    try:
        uuid.UUID(run_id)
    except ValueError:
        raise HTTPException(404, "unknown run") from None
    d = _root() / run_id
    if not d.is_dir():
        raise HTTPException(404, "unknown run")
    return d


app = FastAPI(title="mesohom", version=__version__)


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/runs", response_model=RunResponse)
def create_run(req: RunRequest) -> RunResponse:
    try:
        values = parse_flat(req.config_text) if req.config_text else {}
        values.update(req.config)
        if "scenario" not in values:
            raise HTTPException(422, "configuration must name a scenario")
        cfg = make_config(values)
        run_id = str(uuid.uuid4())
        result = run(cfg, _root() / run_id)
    except MesohomError as exc:
        raise HTTPException(422, str(exc)) from None
    return RunResponse(run_id=run_id, manifest=result.manifest)


@app.get("/runs/{run_id}")
def get_manifest(run_id: str) -> dict:
    return json.loads((_run_dir(run_id) / "manifest.json").read_text())


@app.get("/runs/{run_id}/files/{name}", response_class=PlainTextResponse)
def get_file(run_id: str, name: str) -> str:
    d = _run_dir(run_id)
    path = d / name
    if Path(name).name != name or not path.is_file():
        raise HTTPException(404, "unknown file")
    return path.read_text()


@app.post("/runs/{run_id}/compare", response_model=CompareResponse)
def compare_run(run_id: str, req: CompareRequest) -> CompareResponse:
    d = _run_dir(run_id)
    try:
        with tempfile.TemporaryDirectory() as tmp:
            ref = Path(tmp) / "reference.csv"
            ref.write_text(req.reference_csv)
            rep = compare(d, ref, req.tolerances, req.target)
    except (MesohomError, OSError) as exc:
        raise HTTPException(422, str(exc)) from None
    return CompareResponse(
        passed=rep.passed,
        target=rep.target.name,
        columns=[ColumnOut(**c.__dict__) for c in rep.columns],
    )
