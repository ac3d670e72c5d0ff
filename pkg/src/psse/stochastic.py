"""Stochastic LAV solver with sparsity-aware mini-batching.

One stochastic iteration draws a single measurement and moves the state by

    v <- v + proj_[-mu_t, mu_t](c / ||a||^2) * a,    a = 2 H v,  c = z - v^H H v

which touches only the entries in the support of H: one entry for a squared
voltage magnitude, two for a line flow, and 1 + degree for an injection.
Measurements whose supports are pairwise disjoint can be processed as one
mini-batch; the batched update is exactly the sum of the individual steps,
so grouping them costs nothing in accuracy and cuts the iteration count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from psse.grid import KINDS, VoltageState
from psse.measurement import MeasurementRecord, MeasurementSet
from psse.metrics import ConvergenceTrace, lav_objective, rmse

SAMPLING_MODES = ("uniform", "cyclic", "sequential")


@dataclass
class StochasticConfig:
    alpha: float = 1.0
    beta: float = 0.8
    constant_step: float | None = None
    sampling: str = "uniform"
    max_epochs: int = 100
    tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.5 < self.beta <= 1.0:
            # alpha * t^(-beta) must be square summable but not summable
            raise ValueError("beta must lie in (0.5, 1]")
        if self.constant_step is not None and self.constant_step <= 0:
            raise ValueError("constant_step must be positive")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")

    def stepsize(self, t: int) -> float:
        if self.constant_step is not None:
            return self.constant_step
        return self.alpha * t ** (-self.beta)


def _apply_step(v: VoltageState, record: MeasurementRecord, mu: float) -> None:
    """In-place single-measurement update; reads and writes only the support."""
    m = record.matrix
    contrib = m.vals * v[m.cols]
    a = np.zeros(len(m.support), dtype=complex)
    np.add.at(a, m.row_slot, contrib)
    a *= 2.0
    vs = v[m.support]
    quad = float((vs.conj()[m.row_slot] * contrib).sum().real)
    norm_sq = float((a.real * a.real + a.imag * a.imag).sum())
    if norm_sq == 0.0:
        return
    coeff = (record.z - quad) / norm_sq
    if coeff > mu:
        coeff = mu
    elif coeff < -mu:
        coeff = -mu
    v[m.support] = vs + coeff * a


def stochastic_step(
    record: MeasurementRecord, v: VoltageState, mu_t: float
) -> VoltageState:
    """One closed-form update from a single measurement (pure)."""
    if mu_t <= 0:
        raise ValueError("mu_t must be positive")
    out = np.asarray(v, dtype=complex).copy()
    _apply_step(out, record, mu_t)
    return out


@dataclass(frozen=True)
class MiniBatchSchedule:
    """Partition of record indices into internally disjoint-support batches.

    ``owners[b]`` maps each bus index touched by batch b to the record that
    touches it; building it fails if two records in a batch overlap, so a
    constructed schedule is its own disjointness certificate.
    """

    batches: tuple[tuple[int, ...], ...]
    owners: tuple[dict[int, int], ...]

    @property
    def n_batches(self) -> int:
        return len(self.batches)


def build_minibatches(mset: MeasurementSet) -> MiniBatchSchedule:
    """Greedy conflict coloring, one coloring per measurement kind.

    Two records conflict when their supports intersect. Records are colored
    in order of descending support size, ties broken by index, so schedules
    are deterministic.
    """
    batches: list[list[int]] = []
    owners: list[dict[int, int]] = []
    for kind in KINDS:
        members = [m for m, r in enumerate(mset.records) if r.kind == kind]
        members.sort(key=lambda m: (-len(mset.records[m].matrix.support), m))
        colors: list[list[int]] = []
        color_owners: list[dict[int, int]] = []
        for m in members:
            support = mset.records[m].matrix.support
            for batch, owner in zip(colors, color_owners):
                if all(int(b) not in owner for b in support):
                    batch.append(m)
                    owner.update((int(b), m) for b in support)
                    break
            else:
                colors.append([m])
                color_owners.append({int(b): m for b in support})
        batches.extend(colors)
        owners.extend(color_owners)
    return MiniBatchSchedule(
        batches=tuple(tuple(sorted(b)) for b in batches),
        owners=tuple(owners),
    )


def minibatch_step(
    mset: MeasurementSet, batch: tuple[int, ...], v: VoltageState, mu_t: float
) -> VoltageState:
    """Simultaneous update over one disjoint-support batch (pure).

    Because supports within a batch are disjoint, applying the records
    sequentially in ascending index order performs exactly the same scalar
    operations as summing the individual steps computed at the incoming v.
    """
    out = np.asarray(v, dtype=complex).copy()
    _apply_batch(out, mset, batch, mu_t)
    return out


def _apply_batch(v, mset, batch, mu):
    for m in batch:
        _apply_step(v, mset.records[m], mu)


def solve(
    mset: MeasurementSet,
    config: StochasticConfig,
    schedule: MiniBatchSchedule | None = None,
    v0: VoltageState | None = None,
    truth: VoltageState | None = None,
    reference_index: int = 0,
) -> tuple[VoltageState, ConvergenceTrace]:
    """Run stochastic (or mini-batched) iterations for up to max_epochs.

    One epoch is M single steps, or one step per batch when a schedule is
    given. The trace is sampled at epoch boundaries, where the normalized
    step criterion is also evaluated.
    """
    rng = np.random.default_rng(config.seed)
    v = np.ones(mset.n_buses, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex).copy()
    sqrt_n = np.sqrt(len(v))
    n_items = mset.M if schedule is None else schedule.n_batches
    trace = ConvergenceTrace()
    start = time.perf_counter()

    def record(epoch: int):
        err = None if truth is None else rmse(v, truth, reference_index)
        trace.add(epoch, lav_objective(mset, v), err, time.perf_counter() - start)

    record(0)
    t = 0
    v_prev = v.copy()
    for epoch in range(1, config.max_epochs + 1):
        if config.sampling == "uniform":
            picks = rng.integers(0, n_items, size=n_items)
        elif config.sampling == "cyclic":
            picks = rng.permutation(n_items)
        else:
            picks = np.arange(n_items)
        for i in picks:
            t += 1
            mu_t = config.stepsize(t)
            if schedule is None:
                _apply_step(v, mset.records[i], mu_t)
            else:
                _apply_batch(v, mset, schedule.batches[i], mu_t)
        record(epoch)
        if float(np.linalg.norm(v - v_prev)) / sqrt_n <= config.tol:
            break
        v_prev = v.copy()
    return v, trace
