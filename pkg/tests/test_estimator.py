import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mjls_dr.core import (control_example, estimation_example, input_effect_matrix, observability_matrix,
                          predict_outputs, sample_chain)
from mjls_dr.estimator import (EstimatorError, Transition, agreement_indices, consistent_set_bruteforce,
                               current_state_estimates, harvest_transitions, init_observer, is_consistent,
                               recover_state, step, update_theta)
from mjls_dr.harness import run_estimation

from conftest import random_model, random_path


def drive(model, modes, x0, us, n_c=2, disturb=None):
    """Feed a simulated trajectory through the observer; yields (state, events, t)."""
    x = np.array(x0, dtype=float)
    state = None
    out = []
    for t, th in enumerate(modes):
        if disturb is not None and t == disturb[0]:
            x = x + disturb[1]
        y = model.C[th] @ x
        if state is None:
            state, ev = init_observer(model, y, n_c), None
        else:
            state, ev = step(state, model, y, us[t - 1])
        out.append((state, ev))
        if t < len(us):
            x = model.A[th] @ x + model.B[th] @ us[t]
    return out


class TestConsistency:
    def test_exact_data(self, rng):
        m = random_model(rng, 2, ns=2, ny=2)
        p = (0, 1, 1)
        x0, u = rng.standard_normal(2), rng.standard_normal(2)
        y = predict_outputs(m, p, x0, u)
        ok, res, x_ls = is_consistent(m, p, y, u)
        assert ok and res <= 1e-9
        assert np.allclose(observability_matrix(m, p) @ x_ls, y - input_effect_matrix(m, p) @ u)

    def test_single_output_always_consistent(self):
        m = estimation_example()
        for y0 in (3.0, -1.2, 0.0):
            assert all(is_consistent(m, (k,), [y0], np.zeros(0))[0] for k in range(2))

    def test_perturbed_output_inconsistent(self, rng):
        m = control_example()
        p = (1, 1)
        x0, u = rng.standard_normal(2), rng.standard_normal(2)
        y = predict_outputs(m, p, x0, u)
        y[2] += 1.0
        assert not is_consistent(m, p, y, u)[0]

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            is_consistent(estimation_example(), (0, 1), [1.0], np.zeros(1))


class TestAgreement:
    def test_shared_tail(self):
        assert agreement_indices([(0, 1, 1, 0, 0), (1, 1, 1, 0, 0)], 4, 2).indices == (1,)

    def test_single_path_covers_range(self):
        r = agreement_indices([(0, 1, 1, 0, 1)], 4, 2)
        assert r.indices == (0, 1)
        assert r.agreed_runs == ((0, (0, 1)), (1, (1, 1)))

    def test_disagreement(self):
        assert agreement_indices([(0, 1), (1, 0)], 1, 1).indices == ()

    def test_within_bounds(self, rng):
        for _ in range(50):
            N = int(rng.integers(0, 6))
            theta = sorted({random_path(rng, 2, N + 1) for _ in range(int(rng.integers(1, 4)))})
            for k in agreement_indices(theta, N, 2).indices:
                assert 0 <= k <= max(N - 2, 0)

    def test_empty_rejected(self):
        with pytest.raises(EstimatorError):
            agreement_indices([], 2, 2)


class TestUpdate:
    def test_first_growth_matches_bruteforce(self, rng):
        m = random_model(rng, 2, ns=2, ny=1)
        x0, u = rng.standard_normal(2), rng.standard_normal(1)
        y = predict_outputs(m, (1, 0), x0, u)
        theta = update_theta(m, [(0,), (1,)], y, u, grew=True)
        assert theta == consistent_set_bruteforce(m, y, u, 1)

    def test_single_mode(self, rng):
        m = random_model(rng, 1, ns=2, ny=1)
        us = rng.standard_normal((30, 1))
        runs = drive(m, [0] * 31, rng.standard_normal(2), us)
        assert all(s.theta == ((0,) * (s.N + 1),) for s, _ in runs)
        Ns = [s.N for s, _ in runs]
        assert Ns[-10:] == [Ns[-1]] * 10

    @settings(max_examples=25)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_incremental_equals_bruteforce(self, seed):
        r = np.random.default_rng(seed)
        m = random_model(r, 2, ns=2, na=1, ny=int(r.integers(1, 3)))
        T = 12
        modes = sample_chain(m.P, int(r.integers(2)), T, r)
        runs = drive(m, modes, r.standard_normal(2), r.standard_normal((T, 1)))
        for t, (s, _) in enumerate(runs):
            if s.N > 4:
                break
            y, u = s.stacked()
            assert s.theta == consistent_set_bruteforce(m, y, u, s.N)
            assert tuple(int(v) for v in modes[t - s.N:t + 1]) in s.theta


class TestRuns:
    def test_estimation_example_settles(self):
        run = run_estimation(estimation_example(), 200, seed=3)
        assert run.rows[-1]["N"] == 3
        assert max(r["theta_size"] for r in run.rows) <= 4

    def test_harvest_matches_truth(self):
        run = run_estimation(estimation_example(), 1000, seed=5)
        trs = [tr for r in run.rows for tr in r["transitions"]]
        assert len(trs) > 900
        assert all((run.modes[tr.time], run.modes[tr.time + 1]) == (tr.src, tr.dst) for tr in trs)
        times = [tr.time for tr in trs]
        assert len(times) == len(set(times))

    def test_deterministic(self):
        a = run_estimation(estimation_example(), 100, seed=9)
        b = run_estimation(estimation_example(), 100, seed=9)
        assert a.rows == b.rows

    def test_disturbance_triggers_reset(self, rng):
        m = control_example()
        T = 60
        modes = sample_chain(m.P, 0, T, 4)
        us = 0.3 * rng.standard_normal((T, 2))
        runs = drive(m, modes, [1.0, 1.0], us, disturb=(30, np.array([5.0, 5.0])))
        resets = [t for t, (_, ev) in enumerate(runs) if ev is not None and ev.reset]
        assert resets and 30 <= resets[0] <= 30 + max(s.N for s, _ in runs[:30]) + 1
        assert not any(ev.reset for _, ev in runs[1:30])

    def test_no_transitions_across_reset(self, rng):
        m = control_example()
        modes = sample_chain(m.P, 0, 60, 8)
        runs = drive(m, modes, [1.0, 1.0], 0.3 * rng.standard_normal((60, 2)), disturb=(30, np.array([4.0, -3.0])))
        t_reset = next(t for t, (_, ev) in enumerate(runs) if ev is not None and ev.reset)
        for t, (_, ev) in enumerate(runs):
            if ev is not None and t >= t_reset:
                assert all(tr.time >= t_reset for tr in ev.transitions)


class TestHarvest:
    def test_emit_once(self):
        m = estimation_example()
        s = init_observer(m, [1.0])
        from dataclasses import replace
        s = replace(s, t=3, N=3, theta=((0, 1, 0, 0),))
        agr = agreement_indices(s.theta, 3, 2)
        out, cur = harvest_transitions(s, agr, frozenset())
        assert out == [Transition(0, 0, 1)]  # only k = 0 is a candidate start at N = 3
        again, _ = harvest_transitions(s, agr, cur)
        assert again == []


class TestRecovery:
    def test_identity_output(self):
        x0, unique = recover_state(control_example(), (1,), [0.3, -2.0], np.zeros(0))
        assert unique and np.allclose(x0, [0.3, -2.0])

    def test_minimum_norm(self):
        x0, unique = recover_state(estimation_example(), (0,), [3.0], np.zeros(0))
        assert not unique and np.allclose(x0, [1.2, 0.6])

    @given(st.integers(0, 2 ** 32 - 1))
    def test_generator_state(self, seed):
        r = np.random.default_rng(seed)
        m = random_model(r, 2, ns=2, na=1, ny=2)
        p = random_path(r, 2, 3)
        x0, u = r.standard_normal(2), r.standard_normal(2)
        y = predict_outputs(m, p, x0, u)
        xr, unique = recover_state(m, p, y, u)
        if unique and np.linalg.cond(observability_matrix(m, p)) < 1e6:
            assert np.allclose(xr, x0, atol=1e-8 * (1 + np.abs(x0).max()))
            assert np.allclose(predict_outputs(m, p, xr, u), y, atol=1e-8 * (1 + np.abs(y).max()))

    def test_inconsistent_rejected(self):
        with pytest.raises(EstimatorError):
            recover_state(control_example(), (1, 1), [1, 1, 50, 50], np.zeros(2))

    def test_current_state(self, rng):
        m = control_example()
        modes = sample_chain(m.P, 1, 10, 2)
        us = rng.standard_normal((10, 2))
        x = np.array([0.5, -0.5])
        runs = drive(m, modes, x, us)
        for t in range(10):
            x = m.A[modes[t]] @ x + m.B[modes[t]] @ us[t]
        est = current_state_estimates(m, runs[-1][0])
        truth = tuple(int(v) for v in modes[10 - runs[-1][0].N:])
        xe, unique = est[truth]
        assert unique and np.allclose(xe, x, atol=1e-8)
