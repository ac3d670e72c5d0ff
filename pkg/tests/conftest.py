import json

import numpy as np
import pytest

from psse.cases import case_path
from psse.grid import build_admittance, load_case, parse_case
from psse.measurement import full_plan, normalize, simulate

TWO_BUS_JSON = json.dumps(
    {
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "reference": True},
            {"id": 2},
        ],
        "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1}],
    }
)


@pytest.fixture(scope="session")
def case14():
    return load_case(case_path("case14"))


@pytest.fixture(scope="session")
def model14(case14):
    return build_admittance(case14)


@pytest.fixture(scope="session")
def case118():
    return load_case(case_path("case118"))


@pytest.fixture(scope="session")
def model118(case118):
    return build_admittance(case118)


@pytest.fixture(scope="session")
def two_bus():
    return parse_case(TWO_BUS_JSON)


@pytest.fixture(scope="session")
def two_bus_model(two_bus):
    return build_admittance(two_bus)


@pytest.fixture(scope="session")
def noiseless14(case14, model14):
    """Truth plus raw and normalized noiseless 54-measurement sets."""
    truth = case14.voltage_profile()
    raw = simulate(model14, truth, full_plan(model14, ["Vsq", "Pf", "Qf"]))
    return truth, raw, normalize(raw)


def measured_magnitude_start(raw):
    v0 = np.ones(raw.n_buses, dtype=complex)
    for r in raw.records:
        if r.kind == "Vsq":
            v0[r.location - 1] = np.sqrt(max(r.z * r.norm_factor, 0.0))
    return v0
