"""Reference estimators: Gauss-Newton WLS and iteratively reweighted LAV.

Both iterate over the real parameterization of the state: the 2N-1 vector
stacking all real parts and the imaginary parts of every bus except the
reference, whose imaginary part is pinned to zero. Since each measurement
is ``h(v) = v^H H v`` with Hermitian H, its gradient row is
``[2 Re(H v)^T, 2 Im(H v)^T]`` in these coordinates, assembled from the
sparse supports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from psse.exceptions import UnobservableSystemError
from psse.grid import VoltageState
from psse.measurement import MeasurementSet, quadratic_forms
from psse.metrics import ConvergenceTrace, lav_objective, rmse


@dataclass(frozen=True)
class RealParameterization:
    """Bijection between voltage states with zero reference phase and R^(2N-1)."""

    n_buses: int
    reference_index: int

    @property
    def dim(self) -> int:
        return 2 * self.n_buses - 1

    def imag_slot(self) -> np.ndarray:
        """Column of each bus's imaginary part; -1 for the reference bus."""
        slots = np.full(self.n_buses, -1, dtype=np.intp)
        free = [i for i in range(self.n_buses) if i != self.reference_index]
        slots[free] = self.n_buses + np.arange(self.n_buses - 1)
        return slots

    def to_real(self, v: VoltageState) -> np.ndarray:
        x = np.empty(self.dim)
        x[: self.n_buses] = v.real
        x[self.n_buses :] = np.delete(v.imag, self.reference_index)
        return x

    def to_complex(self, x: np.ndarray) -> VoltageState:
        imag = np.insert(x[self.n_buses :], self.reference_index, 0.0)
        return x[: self.n_buses] + 1j * imag


def measurement_jacobian(
    mset: MeasurementSet, v: VoltageState, param: RealParameterization
) -> np.ndarray:
    """Real M x (2N-1) Jacobian of all quadratic measurement functions."""
    slots = param.imag_slot()
    J = np.zeros((mset.M, param.dim))
    for m, record in enumerate(mset.records):
        mat = record.matrix
        g = np.zeros(len(mat.support), dtype=complex)
        np.add.at(g, mat.row_slot, mat.vals * v[mat.cols])
        J[m, mat.support] = 2.0 * g.real
        for b, gb in zip(mat.support, g):
            slot = slots[b]
            if slot >= 0:
                J[m, slot] = 2.0 * gb.imag
    return J


def _weighted_newton_step(J, r, weights):
    jw = J.T * weights
    normal = jw @ J
    try:
        factor = scipy.linalg.cho_factor(normal)
    except scipy.linalg.LinAlgError as exc:
        raise UnobservableSystemError(
            "singular normal matrix; the measurement set does not determine the state"
        ) from exc
    return scipy.linalg.cho_solve(factor, jw @ r)


def gauss_newton_wls(
    mset: MeasurementSet,
    weights: np.ndarray | None = None,
    v0: VoltageState | None = None,
    max_iters: int = 20,
    tol: float = 1e-10,
    truth: VoltageState | None = None,
    reference_index: int = 0,
) -> tuple[VoltageState, ConvergenceTrace]:
    """Plain Gauss-Newton on the weighted least-squares criterion."""
    if weights is None:
        weights = np.ones(mset.M)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    param = RealParameterization(mset.n_buses, reference_index)
    v = np.ones(mset.n_buses, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex)
    x = param.to_real(v)
    sqrt_n = np.sqrt(mset.n_buses)
    trace = ConvergenceTrace()
    start = time.perf_counter()

    def record(t, v):
        err = None if truth is None else rmse(v, truth, reference_index)
        trace.add(t, lav_objective(mset, v), err, time.perf_counter() - start)

    record(0, v)
    for t in range(1, max_iters + 1):
        r = mset.z - quadratic_forms(mset, v)
        J = measurement_jacobian(mset, v, param)
        delta = _weighted_newton_step(J, r, weights)
        x = x + delta
        v_new = param.to_complex(x)
        step = float(np.linalg.norm(v_new - v))
        v = v_new
        record(t, v)
        if step / sqrt_n <= tol:
            break
    return v, trace


def irls_lav(
    mset: MeasurementSet,
    v0: VoltageState | None = None,
    max_iters: int = 50,
    tol: float = 1e-10,
    epsilon: float = 1e-8,
    truth: VoltageState | None = None,
    reference_index: int = 0,
) -> tuple[VoltageState, ConvergenceTrace]:
    """LAV via iterative reweighting: weights 1/max(|r|, epsilon) per sweep."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    param = RealParameterization(mset.n_buses, reference_index)
    v = np.ones(mset.n_buses, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex)
    x = param.to_real(v)
    sqrt_n = np.sqrt(mset.n_buses)
    trace = ConvergenceTrace()
    start = time.perf_counter()

    def record(t, v):
        err = None if truth is None else rmse(v, truth, reference_index)
        trace.add(t, lav_objective(mset, v), err, time.perf_counter() - start)

    record(0, v)
    for t in range(1, max_iters + 1):
        r = mset.z - quadratic_forms(mset, v)
        weights = 1.0 / np.maximum(np.abs(r), epsilon)
        J = measurement_jacobian(mset, v, param)
        delta = _weighted_newton_step(J, r, weights)
        x = x + delta
        v_new = param.to_complex(x)
        step = float(np.linalg.norm(v_new - v))
        v = v_new
        record(t, v)
        if step / sqrt_n <= tol:
            break
    return v, trace
