"""FastAPI service exposing case inspection, validation, runs, and estimation.

The CLI talks to these endpoints (in-process by default); a standalone
server is just ``uvicorn psse.service.app:app``.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, HTTPException

from psse import __version__
from psse.exceptions import SolverError
from psse.experiment import ConfigError, run_experiment, run_solver, validate_config
from psse.grid import CaseError, build_admittance, parse_case
from psse.measurement import from_json, normalize
from psse.service.schemas import (
    Artifact,
    CaseInfoRequest,
    CaseInfoResponse,
    EstimateRequest,
    EstimateResponse,
    HealthResponse,
    RunRequest,
    RunResponse,
    ValidateRequest,
    ValidateResponse,
)


def _bad_request(kind: str, message: str) -> HTTPException:
    return HTTPException(status_code=422, detail={"kind": kind, "message": message})


def _server_error(kind: str, message: str) -> HTTPException:
    return HTTPException(status_code=500, detail={"kind": kind, "message": message})


def create_app() -> FastAPI:
    app = FastAPI(title="psse", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/case-info", response_model=CaseInfoResponse)
    def case_info(req: CaseInfoRequest):
        try:
            case = parse_case(req.case_text)
        except CaseError as exc:
            raise _bad_request("config", str(exc)) from None
        return CaseInfoResponse(
            n_buses=case.N,
            n_branches=len(case.branches),
            in_service_branches=case.L,
            base_mva=case.base_mva,
            reference_bus=case.reference_index + 1,
            external_ids=list(case.external_ids),
        )

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        errors = validate_config(req.config)
        return ValidateResponse(valid=not errors, errors=errors)

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest):
        config = dict(req.config)
        if req.case_text is not None:
            config["case_text"] = req.case_text
        if req.trials is not None:
            config["trials"] = req.trials
        if req.seed is not None:
            config["seed"] = req.seed
        if req.solvers is not None:
            keep = set(req.solvers)
            config["solvers"] = [
                s for s in config.get("solvers", [])
                if s.get("name", s.get("method")) in keep
            ]
        try:
            summary, artifacts = run_experiment(config)
        except (ConfigError, CaseError) as exc:
            raise _bad_request("config", str(exc)) from None
        except SolverError as exc:
            raise _server_error("solver", str(exc)) from None
        except OSError as exc:
            raise _server_error("io", str(exc)) from None
        return RunResponse(
            summary=summary,
            artifacts=[Artifact(name=n, content=c) for n, c in artifacts],
        )

    @app.post("/estimate", response_model=EstimateResponse)
    def estimate(req: EstimateRequest):
        try:
            config = {"init": req.init}
            case = parse_case(req.case_text)
            model = build_admittance(case)
            raw, truth = from_json(model, json.dumps(req.measurements))
            v, trace = run_solver(
                req.solver, raw, normalize(raw), config, truth,
                case.reference_index, req.seed,
            )
        except (ConfigError, CaseError, ValueError) as exc:
            raise _bad_request("config", str(exc)) from None
        except SolverError as exc:
            raise _server_error("solver", str(exc)) from None
        return EstimateResponse(
            voltage=[[float(c.real), float(c.imag)] for c in v],
            final_objective=trace.final_objective,
            final_rmse=trace.final_rmse,
            iterations=trace.iterations,
            trace_csv=trace.to_csv(),
        )

    return app


app = create_app()
