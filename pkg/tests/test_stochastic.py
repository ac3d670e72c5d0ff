import numpy as np
import pytest

from psse.grid import evaluate
from psse.measurement import full_plan, normalize, simulate
from psse.stochastic import (
    StochasticConfig,
    build_minibatches,
    minibatch_step,
    solve,
    stochastic_step,
)
from tests.conftest import measured_magnitude_start


def random_state(rng, n):
    return rng.uniform(0.9, 1.1, n) * np.exp(1j * rng.uniform(-0.3, 0.3, n))


def pairwise_disjoint(mset, batch):
    """O(M^2) oracle: no two records in the batch share a support bus."""
    for i, a in enumerate(batch):
        for b in batch[i + 1:]:
            sup_a = set(mset.records[a].matrix.support.tolist())
            sup_b = set(mset.records[b].matrix.support.tolist())
            if sup_a & sup_b:
                return False
    return True


class TestStochasticStep:
    def test_zero_residual_is_fixed_point(self, noiseless14):
        truth, raw, _ = noiseless14
        for record in raw.records[:5]:
            out = stochastic_step(record, truth, mu_t=0.5)
            assert np.array_equal(out, truth)

    def test_vsq_touches_one_entry_flow_at_most_two(self, noiseless14):
        truth, raw, _ = noiseless14
        rng = np.random.default_rng(1)
        v = random_state(rng, 14)
        for record in raw.records:
            out = stochastic_step(record, v, mu_t=0.3)
            changed = np.nonzero(out != v)[0]
            if record.kind == "Vsq":
                assert len(changed) == 1
            else:
                assert len(changed) <= 2
            assert set(changed.tolist()) <= set(record.matrix.support.tolist())

    def test_locality_only_support_entries_change(self, model118, case118):
        truth = case118.voltage_profile()
        mset = simulate(model118, truth, full_plan(model118, ["Pinj", "Qinj"]))
        rng = np.random.default_rng(2)
        v = random_state(rng, 118)
        for record in mset.records[::7]:
            out = stochastic_step(record, v, mu_t=0.2)
            changed = set(np.nonzero(out != v)[0].tolist())
            assert changed <= set(record.matrix.support.tolist())

    def test_small_residual_linearized_interpolation(self, noiseless14):
        # with the unclipped step the *linearized* residual cancels exactly;
        # the true residual is second order in the step
        truth, raw, norm = noiseless14
        rng = np.random.default_rng(3)
        for record in norm.records[::5]:
            v = truth + 1e-4 * (rng.standard_normal(14) + 1j * rng.standard_normal(14))
            m = record.matrix
            a = np.zeros(14, dtype=complex)
            np.add.at(a, m.rows, m.vals * v[m.cols])
            a *= 2.0
            c = record.z - evaluate(m, v)
            assert abs(c) <= np.vdot(a, a).real  # small-residual regime
            out = stochastic_step(record, v, mu_t=1.0)
            delta = out - v
            lin_residual = c - (a.conj() @ delta).real
            assert abs(lin_residual) < 1e-14
            new_residual = record.z - evaluate(m, out)
            assert abs(new_residual) <= 10 * c * c / np.vdot(a, a).real + 1e-16

    def test_step_norm_bound(self, noiseless14):
        truth, raw, norm = noiseless14
        rng = np.random.default_rng(4)
        v = random_state(rng, 14)
        for mu in (1e-3, 0.1, 5.0):
            for record in norm.records[::6]:
                m = record.matrix
                a = np.zeros(14, dtype=complex)
                np.add.at(a, m.rows, m.vals * v[m.cols])
                a *= 2.0
                out = stochastic_step(record, v, mu_t=mu)
                assert np.linalg.norm(out - v) <= mu * np.linalg.norm(a) + 1e-12

    def test_zero_direction_is_noop(self, noiseless14):
        truth, raw, _ = noiseless14
        record = raw.records[0]  # Vsq at bus 1
        v = truth.copy()
        v[0] = 0.0  # a = 2 H v vanishes on the support
        out = stochastic_step(record, v, mu_t=1.0)
        assert np.array_equal(out, v)


class TestMiniBatches:
    def test_case14_flow_grouping(self, noiseless14):
        _, _, norm = noiseless14
        schedule = build_minibatches(norm)
        # 1 voltage batch + 5 per flow kind, as in the published grouping
        assert schedule.n_batches == 11
        sizes = sorted(len(b) for b in schedule.batches)
        assert max(sizes) == 14  # all voltage magnitudes share one batch
        for batch in schedule.batches:
            assert pairwise_disjoint(norm, batch)
        # batches partition the record indices
        flat = sorted(i for b in schedule.batches for i in b)
        assert flat == list(range(norm.M))

    def test_all_vsq_single_batch(self, model14, case14):
        mset = simulate(model14, case14.voltage_profile(), full_plan(model14, ["Vsq"]))
        schedule = build_minibatches(mset)
        assert schedule.n_batches == 1
        assert schedule.batches[0] == tuple(range(14))

    def test_case118_all_kinds_valid(self, model118, case118):
        truth = case118.voltage_profile()
        plan = full_plan(model118, ["Vsq", "Pf", "Qf", "Pinj", "Qinj", "Pt", "Qt"])
        mset = simulate(model118, truth, plan)
        schedule = build_minibatches(mset)
        for batch in schedule.batches:
            assert pairwise_disjoint(mset, batch)
        flat = sorted(i for b in schedule.batches for i in b)
        assert flat == list(range(mset.M))

    def test_owner_maps_cover_supports(self, noiseless14):
        _, _, norm = noiseless14
        schedule = build_minibatches(norm)
        for batch, owner in zip(schedule.batches, schedule.owners):
            for m in batch:
                for bus in norm.records[m].matrix.support:
                    assert owner[int(bus)] == m


class TestMiniBatchStep:
    def test_singleton_batch_equals_single_step(self, noiseless14):
        _, _, norm = noiseless14
        rng = np.random.default_rng(5)
        v = random_state(rng, 14)
        out_batch = minibatch_step(norm, (3,), v, mu_t=0.7)
        out_single = stochastic_step(norm.records[3], v, mu_t=0.7)
        assert np.array_equal(out_batch, out_single)

    def test_batch_equals_sequential_bitwise(self, noiseless14):
        _, _, norm = noiseless14
        schedule = build_minibatches(norm)
        rng = np.random.default_rng(6)
        v = random_state(rng, 14)
        for batch in schedule.batches:
            batched = minibatch_step(norm, batch, v, mu_t=0.8)
            sequential = v.copy()
            for m in batch:
                sequential = stochastic_step(norm.records[m], sequential, mu_t=0.8)
            assert np.array_equal(batched, sequential)

    def test_empty_batch_is_identity(self, noiseless14):
        _, _, norm = noiseless14
        v = np.ones(14, dtype=complex)
        assert np.array_equal(minibatch_step(norm, (), v, 0.5), v)


class TestSolve:
    def test_14bus_noiseless_reaches_target(self, noiseless14, case14):
        truth, raw, norm = noiseless14
        config = StochasticConfig(alpha=1.0, beta=0.8, max_epochs=100, seed=11)
        _, trace = solve(norm, config, v0=measured_magnitude_start(raw),
                         truth=truth, reference_index=case14.reference_index)
        hit = trace.first_index_below(1e-6)
        assert hit is not None and hit <= 100

    def test_accelerated_reaches_target(self, noiseless14, case14):
        truth, raw, norm = noiseless14
        schedule = build_minibatches(norm)
        config = StochasticConfig(constant_step=0.8, max_epochs=100, seed=12)
        _, trace = solve(norm, config, schedule=schedule,
                         v0=measured_magnitude_start(raw), truth=truth,
                         reference_index=case14.reference_index)
        hit = trace.first_index_below(1e-6)
        assert hit is not None and hit <= 100

    def test_same_seed_identical_iterates(self, noiseless14):
        _, raw, norm = noiseless14
        config = StochasticConfig(alpha=1.0, beta=0.8, max_epochs=5, seed=77)
        v1, t1 = solve(norm, config, v0=measured_magnitude_start(raw))
        v2, t2 = solve(norm, config, v0=measured_magnitude_start(raw))
        assert np.array_equal(v1, v2)
        assert [r.objective for r in t1.rows] == [r.objective for r in t2.rows]

    def test_sampling_modes(self, noiseless14):
        _, raw, norm = noiseless14
        for mode in ("uniform", "cyclic", "sequential"):
            config = StochasticConfig(sampling=mode, max_epochs=3, seed=1)
            v, trace = solve(norm, config, v0=measured_magnitude_start(raw))
            assert np.all(np.isfinite(v))
            assert trace.iterations == 3

    def test_tiny_constant_step_monotone_objective(self, noiseless14):
        _, raw, norm = noiseless14
        config = StochasticConfig(constant_step=1e-4, max_epochs=30,
                                  sampling="cyclic", seed=9, tol=0.0)
        _, trace = solve(norm, config, v0=measured_magnitude_start(raw))
        objectives = [r.objective for r in trace.rows]
        assert all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StochasticConfig(beta=0.5)
        with pytest.raises(ValueError):
            StochasticConfig(alpha=0.0)
        with pytest.raises(ValueError):
            StochasticConfig(sampling="roulette")
        with pytest.raises(ValueError):
            StochasticConfig(constant_step=-1.0)
