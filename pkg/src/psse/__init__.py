"""Robust least-absolute-value power system state estimation toolkit."""

__version__ = "0.1.0"

from psse.grid import (
    AdmittanceModel,
    Branch,
    Bus,
    CaseError,
    MeasurementMatrix,
    NetworkCase,
    build_admittance,
    evaluate,
    load_case,
    measurement_matrix,
    parse_case,
)

__all__ = [
    "AdmittanceModel",
    "Branch",
    "Bus",
    "CaseError",
    "MeasurementMatrix",
    "NetworkCase",
    "build_admittance",
    "evaluate",
    "load_case",
    "measurement_matrix",
    "parse_case",
    "__version__",
]
