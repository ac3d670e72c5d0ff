"""Network model: case parsing, admittance matrices, and measurement matrices.

Every SCADA quantity handled by this toolkit (squared voltage magnitude,
active/reactive power injection, from-end and to-end line flows) is a
Hermitian quadratic form ``v^H H v`` of the complex bus voltage vector.
This module parses case files, assembles the bus/branch admittance
matrices with the standard pi branch model, and builds the sparse ``H``
matrix for each measurement kind.
"""

from __future__ import annotations

import cmath
import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

KINDS = ("Vsq", "Pf", "Qf", "Pinj", "Qinj", "Pt", "Qt")
BUS_KINDS = frozenset({"Vsq", "Pinj", "Qinj"})
FLOW_KINDS = frozenset({"Pf", "Qf", "Pt", "Qt"})

#: Complex voltage phasor vector, one entry per bus (the estimation target).
VoltageState = np.ndarray


class CaseError(ValueError):
    """Malformed or physically inconsistent case data."""


@dataclass(frozen=True)
class Bus:
    """A network node; ids are contiguous 1..N after parsing."""

    id: int
    shunt_conductance: float = 0.0
    shunt_susceptance: float = 0.0
    is_reference: bool = False
    # Stored operating point from the case file (used as the default truth).
    vm: float = 1.0
    va: float = 0.0  # radians


@dataclass(frozen=True)
class Branch:
    """A transmission line or transformer between two buses."""

    from_bus: int
    to_bus: int
    series_resistance: float
    series_reactance: float
    total_charging_susceptance: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0  # radians
    status: bool = True


@dataclass(frozen=True)
class NetworkCase:
    """Validated bus/branch data on a common MVA base.

    ``external_ids[i]`` is the id the i-th bus carried in the source file;
    internally buses are renumbered to 1..N.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float
    external_ids: tuple[int, ...]

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def L(self) -> int:
        return sum(1 for b in self.branches if b.status)

    @property
    def reference_index(self) -> int:
        """Zero-based index of the reference bus."""
        return next(i for i, b in enumerate(self.buses) if b.is_reference)

    def voltage_profile(self) -> VoltageState:
        """Complex state stored in the case file (per-unit, radians)."""
        return np.array(
            [b.vm * cmath.exp(1j * b.va) for b in self.buses], dtype=complex
        )


@dataclass(frozen=True)
class AdmittanceModel:
    """Bus admittance matrix plus the from/to-end branch admittances.

    ``Y`` is N x N; ``Yf`` and ``Yt`` are L x N and map bus voltages to
    from-end and to-end line currents (``i_f = Yf @ v``). Row r of both
    branch matrices is supported on the endpoints of in-service branch r.
    """

    case: NetworkCase
    Y: sp.csr_matrix
    Yf: sp.csr_matrix
    Yt: sp.csr_matrix
    # endpoints (0-based) of the in-service branches, in Yf/Yt row order
    from_index: np.ndarray
    to_index: np.ndarray

    @property
    def N(self) -> int:
        return self.case.N

    @property
    def L(self) -> int:
        return len(self.from_index)


@dataclass(frozen=True)
class MeasurementMatrix:
    """Sparse Hermitian matrix realizing one measurement ``v^H H v``.

    Entries are coordinate triplets sorted by (row, col) and deduplicated;
    ``support`` holds the distinct 0-based bus indices carrying a nonzero
    row or column. ``row_slot`` caches, per triplet, the position of its
    row within ``support`` (used by the sparse matrix-vector product).
    """

    kind: str
    location: int  # 1-based bus id or branch index
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    support: np.ndarray
    row_slot: np.ndarray = field(repr=False)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def entries(self) -> list[tuple[int, int, complex]]:
        return [
            (int(i), int(j), complex(v))
            for i, j, v in zip(self.rows, self.cols, self.vals)
        ]

    def dense_support_block(self) -> np.ndarray:
        """Dense restriction of the matrix to its support."""
        k = len(self.support)
        block = np.zeros((k, k), dtype=complex)
        col_slot = np.searchsorted(self.support, self.cols)
        block[self.row_slot, col_slot] = self.vals
        return block

    def frobenius(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.vals) ** 2)))


def _make_matrix(kind: str, location: int, entries: dict[tuple[int, int], complex]) -> MeasurementMatrix:
    items = sorted((ij, v) for ij, v in entries.items() if v != 0)
    if not items:
        raise CaseError(f"{kind} matrix at location {location} is identically zero")
    rows = np.array([ij[0] for ij, _ in items], dtype=np.intp)
    cols = np.array([ij[1] for ij, _ in items], dtype=np.intp)
    vals = np.array([v for _, v in items], dtype=complex)
    support = np.unique(np.concatenate([rows, cols]))
    row_slot = np.searchsorted(support, rows)
    return MeasurementMatrix(kind, location, rows, cols, vals, support, row_slot)


# ---------------------------------------------------------------------------
# case parsing


def parse_case(text: str) -> NetworkCase:
    """Parse a case from MATPOWER .m or JSON text (auto-detected)."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _parse_json_case(text)
    return _parse_matpower_case(text)


def load_case(path: str | Path) -> NetworkCase:
    return parse_case(Path(path).read_text())


def _parse_json_case(text: str) -> NetworkCase:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        base = float(data["base_mva"])
        raw_buses = [
            (
                int(b["id"]),
                float(b.get("gs", 0.0)),
                float(b.get("bs", 0.0)),
                bool(b.get("reference", False)),
                float(b.get("vm", 1.0)),
                float(b.get("va", 0.0)),
            )
            for b in data["buses"]
        ]
        raw_branches = [
            (
                int(br["from"]),
                int(br["to"]),
                float(br["r"]),
                float(br["x"]),
                float(br.get("b", 0.0)),
                float(br.get("tap", 1.0) or 1.0),
                float(br.get("shift", 0.0)),
                bool(br.get("status", True)),
            )
            for br in data["branches"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"bad JSON case structure: {exc}") from None
    return _assemble_case(base, raw_buses, raw_branches)


_MP_TABLE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.DOTALL)
_MP_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;")


def _matpower_rows(body: str, name: str, start_line: int) -> list[list[float]]:
    rows = []
    for offset, line in enumerate(body.splitlines()):
        line = line.split("%")[0].strip().rstrip(";")
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise CaseError(
                f"line {start_line + offset}: bad numeric value in mpc.{name}: {exc}"
            ) from None
    return rows


def _parse_matpower_case(text: str) -> NetworkCase:
    clean = "\n".join(line.split("%")[0] for line in text.splitlines())
    scalar = _MP_SCALAR.search(clean)
    if scalar is None:
        raise CaseError("line 1: mpc.baseMVA not found (not a MATPOWER case?)")
    base = float(scalar.group(1))
    tables: dict[str, list[list[float]]] = {}
    for match in _MP_TABLE.finditer(clean):
        name = match.group(1)
        if name not in ("bus", "branch"):
            continue  # gen and other tables are ignored
        start_line = clean.count("\n", 0, match.start(2)) + 1
        tables[name] = _matpower_rows(match.group(2), name, start_line)
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseError(f"line 1: mpc.{required} table not found")

    raw_buses = []
    for row in tables["bus"]:
        if len(row) < 9:
            raise CaseError(f"bus row has {len(row)} columns, expected >= 9")
        raw_buses.append(
            (
                int(row[0]),
                row[4] / base,  # GS in MW at V=1 -> per-unit
                row[5] / base,
                int(row[1]) == 3,
                row[7],
                np.deg2rad(row[8]),
            )
        )
    raw_branches = []
    for row in tables["branch"]:
        if len(row) < 11:
            raise CaseError(f"branch row has {len(row)} columns, expected >= 11")
        tap = row[8] if row[8] != 0.0 else 1.0
        raw_branches.append(
            (
                int(row[0]),
                int(row[1]),
                row[2],
                row[3],
                row[4],
                tap,
                float(np.deg2rad(row[9])),
                int(row[10]) != 0,
            )
        )
    return _assemble_case(base, raw_buses, raw_branches)


def _assemble_case(base, raw_buses, raw_branches) -> NetworkCase:
    if base <= 0:
        raise CaseError(f"base MVA must be positive, got {base}")
    if not raw_buses:
        raise CaseError("case has no buses")
    external = [b[0] for b in raw_buses]
    if len(set(external)) != len(external):
        raise CaseError("duplicate bus ids")
    order = sorted(range(len(external)), key=lambda i: external[i])
    renumber = {external[i]: pos + 1 for pos, i in enumerate(order)}

    buses = tuple(
        Bus(
            id=pos + 1,
            shunt_conductance=raw_buses[i][1],
            shunt_susceptance=raw_buses[i][2],
            is_reference=raw_buses[i][3],
            vm=raw_buses[i][4],
            va=raw_buses[i][5],
        )
        for pos, i in enumerate(order)
    )
    n_ref = sum(1 for b in buses if b.is_reference)
    if n_ref != 1:
        raise CaseError(f"expected exactly one reference bus, found {n_ref}")

    branches = []
    for f, t, r, x, b, tap, shift, status in raw_branches:
        if f not in renumber or t not in renumber:
            missing = f if f not in renumber else t
            raise CaseError(f"branch ({f},{t}) references unknown bus {missing}")
        if f == t:
            raise CaseError(f"branch ({f},{t}) is a self-loop")
        if status and abs(complex(r, x)) == 0.0:
            raise CaseError(f"branch ({f},{t}) has zero series impedance")
        branches.append(
            Branch(renumber[f], renumber[t], r, x, b, tap, shift, status)
        )
    return NetworkCase(
        buses=buses,
        branches=tuple(branches),
        base_mva=base,
        external_ids=tuple(external[i] for i in order),
    )


# ---------------------------------------------------------------------------
# admittance assembly (pi branch model with taps and shifts at the from end)


def build_admittance(case: NetworkCase) -> AdmittanceModel:
    n = case.N
    live = [br for br in case.branches if br.status]
    n_l = len(live)
    f_idx = np.array([br.from_bus - 1 for br in live], dtype=np.intp)
    t_idx = np.array([br.to_bus - 1 for br in live], dtype=np.intp)

    ys = np.array(
        [1.0 / complex(br.series_resistance, br.series_reactance) for br in live]
    )
    bc = np.array([br.total_charging_susceptance for br in live])
    tap = np.array(
        [br.tap_ratio * cmath.exp(1j * br.phase_shift) for br in live], dtype=complex
    )

    ytt = ys + 0.5j * bc
    yff = ytt / (tap * tap.conj())
    yft = -ys / tap.conj()
    ytf = -ys / tap

    rows = np.arange(n_l)
    Yf = sp.csr_matrix(
        (np.concatenate([yff, yft]), (np.tile(rows, 2), np.concatenate([f_idx, t_idx]))),
        shape=(n_l, n),
    )
    Yt = sp.csr_matrix(
        (np.concatenate([ytf, ytt]), (np.tile(rows, 2), np.concatenate([f_idx, t_idx]))),
        shape=(n_l, n),
    )
    ysh = np.array(
        [complex(b.shunt_conductance, b.shunt_susceptance) for b in case.buses]
    )
    Cf = sp.csr_matrix((np.ones(n_l), (rows, f_idx)), shape=(n_l, n))
    Ct = sp.csr_matrix((np.ones(n_l), (rows, t_idx)), shape=(n_l, n))
    Y = (Cf.T @ Yf + Ct.T @ Yt + sp.diags(ysh)).tocsr()
    return AdmittanceModel(case, Y, Yf.tocsr(), Yt.tocsr(), f_idx, t_idx)


# ---------------------------------------------------------------------------
# measurement matrices


def _hermitian_pair(row: np.ndarray, row_idx: np.ndarray, n: int, reactive: bool):
    """Entries of (R^H e e^T +/- e e^T R)/2(j) for a sparse row R of Y/Yf/Yt.

    ``n`` is the 0-based bus the canonical vector e points at; ``row_idx``
    the column indices of the row's nonzeros.
    """
    entries: dict[tuple[int, int], complex] = {}
    denom = 2j if reactive else 2
    sign = -1.0 if reactive else 1.0
    for j, y in zip(row_idx, row):
        # column part: (R^H e)_j = conj(y) at row j, column n
        entries[(int(j), n)] = entries.get((int(j), n), 0) + np.conj(y) / denom
        # row part: (e^T R)_j = y at row n, column j
        entries[(n, int(j))] = entries.get((n, int(j)), 0) + sign * y / denom
    return entries


def measurement_matrix(model: AdmittanceModel, kind: str, location: int) -> MeasurementMatrix:
    """Build the Hermitian matrix for one measurement.

    ``location`` is a 1-based bus id for Vsq/Pinj/Qinj and a 1-based
    in-service branch index for the four flow kinds.
    """
    if kind not in KINDS:
        raise CaseError(f"unknown measurement kind {kind!r}")
    if kind in BUS_KINDS:
        if not 1 <= location <= model.N:
            raise CaseError(f"bus id {location} out of range 1..{model.N}")
        n = location - 1
        if kind == "Vsq":
            return _make_matrix(kind, location, {(n, n): 1.0 + 0j})
        row = model.Y.getrow(n)
        entries = _hermitian_pair(row.data, row.indices, n, reactive=(kind == "Qinj"))
        return _make_matrix(kind, location, entries)

    if not 1 <= location <= model.L:
        raise CaseError(f"branch index {location} out of range 1..{model.L}")
    ell = location - 1
    if kind in ("Pf", "Qf"):
        mat, end = model.Yf, int(model.from_index[ell])
    else:
        mat, end = model.Yt, int(model.to_index[ell])
    row = mat.getrow(ell)
    entries = _hermitian_pair(row.data, row.indices, end, reactive=kind in ("Qf", "Qt"))
    return _make_matrix(kind, location, entries)


def evaluate(matrix: MeasurementMatrix, v: VoltageState) -> float:
    """Real value of ``v^H H v``, computed over the sparse support only."""
    terms = v[matrix.rows].conj() * matrix.vals * v[matrix.cols]
    total = terms.sum()
    if __debug__:
        scale = float(np.vdot(v, v).real) * matrix.frobenius()
        assert abs(total.imag) <= 1e-12 * (1.0 + scale)
    return float(total.real)


def sparse_matvec(matrix: MeasurementMatrix, v: VoltageState) -> np.ndarray:
    """``H @ v`` restricted to the support (complex array over support)."""
    out = np.zeros(len(matrix.support), dtype=complex)
    np.add.at(out, matrix.row_slot, matrix.vals * v[matrix.cols])
    return out
