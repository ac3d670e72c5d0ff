"""Measurement sets: simulation, corruption, normalization, serialization.

A measurement record pairs a scalar reading ``z`` with its Hermitian matrix
``H`` so that a clean reading satisfies ``z = v^H H v`` at the true state.
Corruption replaces a random subset of readings either with draws that are
independent of the network (model M1) or with quadratic forms of a random
surrogate state, which ties the bad value to the meter's own matrix (M2).
Normalization divides each ``(z, H)`` pair by the spectral norm of ``H``,
which tames leverage measurements without changing residual signs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from psse.grid import (
    FLOW_KINDS,
    KINDS,
    AdmittanceModel,
    MeasurementMatrix,
    VoltageState,
    evaluate,
    measurement_matrix,
)

DEFAULT_ELIGIBLE = frozenset({"Pf", "Qf", "Pt", "Qt", "Pinj", "Qinj"})


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    kind: str
    location: int
    z: float
    matrix: MeasurementMatrix
    norm_factor: float = 1.0
    corrupted: bool = False


@dataclass(frozen=True)
class CorruptionLog:
    """What ``corrupt`` did, kept for replay checks (not serialized)."""

    indices: tuple[int, ...]
    model: str
    # M1: the injected values; M2: one surrogate state per corrupted record
    values: tuple[float, ...] = ()
    surrogates: tuple[np.ndarray, ...] = ()


@dataclass(frozen=True)
class MeasurementSet:
    records: tuple[MeasurementRecord, ...]
    n_buses: int
    corruption: CorruptionLog | None = field(default=None, compare=False)

    @property
    def M(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def z(self) -> np.ndarray:
        return np.array([r.z for r in self.records])

    @cached_property
    def _flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated triplets of all records: (record_idx, rows, cols, vals)."""
        rec = np.concatenate(
            [np.full(r.matrix.nnz, m, dtype=np.intp) for m, r in enumerate(self.records)]
        )
        rows = np.concatenate([r.matrix.rows for r in self.records])
        cols = np.concatenate([r.matrix.cols for r in self.records])
        vals = np.concatenate([r.matrix.vals for r in self.records])
        return rec, rows, cols, vals


def quadratic_forms(mset: MeasurementSet, v: VoltageState) -> np.ndarray:
    """All ``Re(v^H H_m v)`` at once (length-M real vector)."""
    rec, rows, cols, vals = mset._flat
    terms = (v[rows].conj() * vals * v[cols]).real
    out = np.zeros(mset.M)
    np.add.at(out, rec, terms)
    return out


@dataclass(frozen=True)
class NoiseSpec:
    """Per-kind Gaussian noise levels (per-unit standard deviations)."""

    sigma: Mapping[str, float]
    seed: int = 0

    def __post_init__(self):
        for kind, s in self.sigma.items():
            if kind not in KINDS:
                raise MeasurementError(f"unknown kind {kind!r} in noise spec")
            if s < 0:
                raise MeasurementError(f"negative stddev for {kind}")

    @classmethod
    def from_levels(cls, voltage: float = 0.0, flow: float = 0.0,
                    injection: float = 0.0, seed: int = 0) -> "NoiseSpec":
        sigma = {"Vsq": voltage, "Pinj": injection, "Qinj": injection}
        sigma.update({k: flow for k in FLOW_KINDS})
        return cls(sigma=sigma, seed=seed)

    def level(self, kind: str) -> float:
        return float(self.sigma.get(kind, 0.0))


@dataclass(frozen=True)
class CorruptionSpec:
    model: str  # "M1" | "M2"
    fraction: float
    eligible_kinds: frozenset[str] = DEFAULT_ELIGIBLE
    laplace_mean: float = 0.0
    laplace_std: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("M1", "M2"):
            raise MeasurementError(f"unknown corruption model {self.model!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise MeasurementError("fraction must lie in [0, 1]")


def simulate(
    model: AdmittanceModel,
    v_true: VoltageState,
    plan: Sequence[tuple[str, int]],
    noise: NoiseSpec | None = None,
) -> MeasurementSet:
    """Generate readings ``z = v^H H v + gaussian`` for every plan entry."""
    noise = noise or NoiseSpec(sigma={})
    rng = np.random.default_rng(noise.seed)
    records = []
    for kind, location in plan:
        matrix = measurement_matrix(model, kind, location)
        z = evaluate(matrix, v_true)
        sigma = noise.level(kind)
        if sigma > 0.0:
            z += sigma * rng.standard_normal()
        records.append(MeasurementRecord(kind, location, z, matrix))
    return MeasurementSet(tuple(records), n_buses=model.N)


def full_plan(model: AdmittanceModel, kinds: Iterable[str]) -> list[tuple[str, int]]:
    """Plan covering every bus (bus kinds) or every branch (flow kinds)."""
    plan: list[tuple[str, int]] = []
    for kind in kinds:
        if kind not in KINDS:
            raise MeasurementError(f"unknown measurement kind {kind!r}")
        count = model.L if kind in FLOW_KINDS else model.N
        plan.extend((kind, loc) for loc in range(1, count + 1))
    return plan


def _laplace(rng: np.random.Generator, mean: float, std: float) -> float:
    # inverse-CDF transform of a uniform draw; scale b = std / sqrt(2)
    b = std / np.sqrt(2.0)
    u = rng.random() - 0.5
    return mean - b * np.sign(u) * np.log1p(-2.0 * abs(u))


def corrupt(
    mset: MeasurementSet, spec: CorruptionSpec, v_true: VoltageState
) -> MeasurementSet:
    """Replace a random fraction of eligible readings with outliers.

    The number of corrupted records is ``floor(fraction * M)`` with M the
    full set size, drawn without replacement from the eligible records.
    """
    rng = np.random.default_rng(spec.seed)
    eligible = [m for m, r in enumerate(mset.records) if r.kind in spec.eligible_kinds]
    count = int(np.floor(spec.fraction * mset.M))
    if count > len(eligible):
        raise MeasurementError(
            f"{count} corruptions requested but only {len(eligible)} eligible records"
        )
    # partial Fisher-Yates over the eligible list
    pool = list(eligible)
    for i in range(count):
        j = i + int(rng.integers(0, len(pool) - i))
        pool[i], pool[j] = pool[j], pool[i]
    chosen = sorted(pool[:count])

    n = len(v_true)
    records = list(mset.records)
    values: list[float] = []
    surrogates: list[np.ndarray] = []
    for m in chosen:
        r = records[m]
        if spec.model == "M1":
            xi = _laplace(rng, spec.laplace_mean, spec.laplace_std)
            values.append(xi)
        else:
            # the stored matrix already carries any normalization, so the
            # surrogate quadratic form lands on the same scale as z
            v_sur = rng.standard_normal(n).astype(complex)
            surrogates.append(v_sur.real.copy())
            xi = evaluate(r.matrix, v_sur)
        records[m] = replace(r, z=float(xi), corrupted=True)
    log = CorruptionLog(tuple(chosen), spec.model, tuple(values), tuple(surrogates))
    return MeasurementSet(tuple(records), mset.n_buses, corruption=log)


def spectral_norm(matrix: MeasurementMatrix) -> float:
    """Exact 2-norm via dense eigendecomposition of the support block."""
    block = matrix.dense_support_block()
    return float(np.max(np.abs(np.linalg.eigvalsh(block))))


def normalize(mset: MeasurementSet) -> MeasurementSet:
    """Divide each record's matrix and reading by the matrix 2-norm."""
    records = []
    for r in mset.records:
        s = spectral_norm(r.matrix)
        if s == 0.0:
            raise MeasurementError(f"{r.kind}@{r.location}: zero measurement matrix")
        matrix = replace(r.matrix, vals=r.matrix.vals / s)
        records.append(
            replace(r, z=r.z / s, matrix=matrix, norm_factor=r.norm_factor * s)
        )
    return MeasurementSet(tuple(records), mset.n_buses, corruption=mset.corruption)


# ---------------------------------------------------------------------------
# JSON round trip (matrices are rebuilt from the case, so only bookkeeping
# fields are stored)

SCHEMA_VERSION = 1


def to_json(mset: MeasurementSet, truth: VoltageState | None = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "records": [
            {
                "kind": r.kind,
                "location": r.location,
                "z": r.z,
                "corrupted": r.corrupted,
                "norm_factor": r.norm_factor,
            }
            for r in mset.records
        ],
    }
    if truth is not None:
        doc["truth"] = [[float(c.real), float(c.imag)] for c in truth]
    return json.dumps(doc, indent=1)


def from_json(
    model: AdmittanceModel, text: str
) -> tuple[MeasurementSet, VoltageState | None]:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise MeasurementError(f"unsupported schema_version {doc.get('schema_version')}")
    records = []
    for item in doc["records"]:
        matrix = measurement_matrix(model, item["kind"], item["location"])
        factor = float(item["norm_factor"])
        if factor != 1.0:
            matrix = replace(matrix, vals=matrix.vals / factor)
        records.append(
            MeasurementRecord(
                kind=item["kind"],
                location=int(item["location"]),
                z=float(item["z"]),
                matrix=matrix,
                norm_factor=factor,
                corrupted=bool(item["corrupted"]),
            )
        )
    truth = None
    if "truth" in doc:
        truth = np.array([complex(re, im) for re, im in doc["truth"]])
    return MeasurementSet(tuple(records), n_buses=model.N), truth
