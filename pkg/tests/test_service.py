import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from psse.cases import case_text
from psse.grid import build_admittance, parse_case
from psse.measurement import full_plan, simulate, to_json
from psse.service.app import create_app
from tests.conftest import TWO_BUS_JSON
from tests.test_experiment import tiny_config


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


class TestCaseInfo:
    def test_case14(self, client):
        response = client.post("/case-info", json={"case_text": case_text("case14")})
        assert response.status_code == 200
        body = response.json()
        assert body["n_buses"] == 14
        assert body["in_service_branches"] == 20
        assert body["reference_bus"] == 1

    def test_bad_case_text(self, client):
        response = client.post("/case-info", json={"case_text": "not a case"})
        assert response.status_code == 422
        assert response.json()["detail"]["kind"] == "config"


class TestValidate:
    def test_valid_config(self, client):
        response = client.post("/validate", json={"config": tiny_config()})
        assert response.json() == {"valid": True, "errors": []}

    def test_invalid_config(self, client):
        body = client.post("/validate", json={"config": {"case": "case14"}}).json()
        assert body["valid"] is False
        assert body["errors"]


class TestRun:
    def test_run_returns_summary_and_artifacts(self, client):
        config = tiny_config(trials=1)
        response = client.post("/run", json={"config": config})
        assert response.status_code == 200
        body = response.json()
        assert body["summary"]["solvers"]["det"]["final_rmse"]["mean"] < 1e-6
        names = {a["name"] for a in body["artifacts"]}
        assert {"summary.json", "trial000_det.csv", "trial000_measurements.json"} <= names

    def test_run_overrides(self, client):
        config = tiny_config()
        response = client.post(
            "/run", json={"config": config, "trials": 1, "seed": 7, "solvers": ["gn"]}
        )
        body = response.json()
        assert list(body["summary"]["solvers"]) == ["gn"]
        assert body["summary"]["trials"] == 1
        assert body["summary"]["seed"] == 7

    def test_run_invalid_config_is_422(self, client):
        response = client.post("/run", json={"config": {"case": "case14"}})
        assert response.status_code == 422
        assert response.json()["detail"]["kind"] == "config"

    def test_solver_failure_is_500(self, client):
        # a single voltage reading cannot determine 14 complex unknowns
        config = tiny_config(trials=1)
        config["plan"] = {"kinds": ["Vsq"]}
        config["solvers"] = [{"name": "gn", "method": "gauss_newton"}]
        config["case_text"] = TWO_BUS_JSON

        case = parse_case(TWO_BUS_JSON)
        model = build_admittance(case)
        mset = simulate(model, np.ones(2, complex), [("Vsq", 1)])
        response = client.post(
            "/run",
            json={"config": {**config, "case": "two_bus"}},
        )
        assert response.status_code == 500
        assert response.json()["detail"]["kind"] == "solver"


class TestEstimate:
    def test_round_trip_estimate(self, client):
        case = parse_case(case_text("case14"))
        model = build_admittance(case)
        truth = case.voltage_profile()
        mset = simulate(model, truth, full_plan(model, ["Vsq", "Pf", "Qf"]))
        payload = {
            "case_text": case_text("case14"),
            "measurements": json.loads(to_json(mset, truth)),
            "solver": {"method": "deterministic", "mu": 200, "rho": 100,
                       "inner_iters": 150},
            "init": "measured_magnitude",
        }
        response = client.post("/estimate", json=payload)
        assert response.status_code == 200
        body = response.json()
        assert body["final_rmse"] < 1e-8
        estimate = np.array([complex(re, im) for re, im in body["voltage"]])
        assert len(estimate) == 14
        assert body["trace_csv"].splitlines()[0] == "iter,objective,rmse,seconds"

    def test_estimate_bad_measurements(self, client):
        payload = {
            "case_text": case_text("case14"),
            "measurements": {"schema_version": 99, "records": []},
            "solver": {"method": "irls"},
        }
        response = client.post("/estimate", json=payload)
        assert response.status_code == 422
