"""Estimation quality metrics and convergence traces."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from psse.grid import NetworkCase, VoltageState
from psse.measurement import MeasurementSet, quadratic_forms


@dataclass
class TraceRow:
    index: int
    objective: float
    rmse: float | None
    seconds: float


@dataclass
class ConvergenceTrace:
    """Per-iteration (or per-epoch) solver progress."""

    rows: list[TraceRow] = field(default_factory=list)

    def add(self, index: int, objective: float, rmse: float | None, seconds: float):
        if self.rows and index <= self.rows[-1].index:
            raise ValueError("trace indices must be strictly increasing")
        self.rows.append(TraceRow(index, objective, rmse, seconds))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def iterations(self) -> int:
        return self.rows[-1].index if self.rows else 0

    @property
    def final_objective(self) -> float:
        return self.rows[-1].objective

    @property
    def final_rmse(self) -> float | None:
        return self.rows[-1].rmse

    @property
    def total_seconds(self) -> float:
        return self.rows[-1].seconds if self.rows else 0.0

    def first_index_below(self, rmse_target: float) -> int | None:
        """Smallest trace index whose RMSE is at or below the target."""
        for row in self.rows:
            if row.rmse is not None and row.rmse <= rmse_target:
                return row.index
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "objective", "rmse", "seconds"])
        for row in self.rows:
            writer.writerow(
                [
                    row.index,
                    repr(row.objective),
                    "" if row.rmse is None else repr(row.rmse),
                    repr(row.seconds),
                ]
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path):
        Path(path).write_text(self.to_csv())


def rmse(estimate: VoltageState, truth: VoltageState, reference_index: int) -> float:
    """Normalized error ||v_hat - v|| / ||v|| after phase alignment.

    Both vectors are rotated so the reference bus has zero phase, which
    removes the global phase ambiguity of quadratic measurements.
    """
    if len(estimate) != len(truth):
        raise ValueError("estimate and truth lengths differ")
    t_norm = float(np.linalg.norm(truth))
    if t_norm == 0.0:
        raise ValueError("truth vector is zero")
    est = _align(estimate, reference_index)
    tru = _align(truth, reference_index)
    return float(np.linalg.norm(est - tru) / t_norm)


def _align(v: VoltageState, reference_index: int) -> VoltageState:
    ref = v[reference_index]
    if ref == 0:
        return v
    return v * np.exp(-1j * np.angle(ref))


def lav_objective(mset: MeasurementSet, v: VoltageState) -> float:
    """Mean absolute residual ``(1/M) sum |v^H H_m v - z_m|``."""
    return float(np.mean(np.abs(quadratic_forms(mset, v) - mset.z)))


def random_truth(
    case: NetworkCase,
    magnitude_range: tuple[float, float] = (0.9, 1.1),
    angle_range: tuple[float, float] = (-0.1 * np.pi, 0.1 * np.pi),
    seed: int = 0,
) -> VoltageState:
    """Uniform random state; the reference bus angle is pinned to zero."""
    rng = np.random.default_rng(seed)
    mag = rng.uniform(*magnitude_range, size=case.N)
    ang = rng.uniform(*angle_range, size=case.N)
    ang[case.reference_index] = 0.0
    return mag * np.exp(1j * ang)
