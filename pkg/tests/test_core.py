import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mjls_dr.core import (MJLSModel, ModelError, TransitionMatrix, check_path, control_example,
                          estimation_example, input_effect_matrix, load_model, model_from_dict,
                          model_to_dict, observability_matrix, predict_outputs, sample_chain,
                          save_model, simulate)

from conftest import random_model, random_path


def step_oracle(model, path, x0, u):
    """Iterate x+ = A x + B u, y = C x by hand."""
    x = np.array(x0, dtype=float)
    us = np.asarray(u, dtype=float).reshape(len(path) - 1, model.na) if len(path) > 1 else []
    ys = []
    for k, m in enumerate(path):
        ys.append(model.C[m] @ x)
        if k < len(path) - 1:
            x = model.A[m] @ x + model.B[m] @ us[k]
    return np.concatenate(ys)


class TestMeasurementAlgebra:
    def test_single_mode_path_is_C(self):
        m = control_example()
        assert np.array_equal(observability_matrix(m, (1,)), m.C[1])

    def test_estimation_example_two_step(self):
        O = observability_matrix(estimation_example(), (0, 1))
        assert np.allclose(O, [[2, 1], [0.9, 0.4]])

    def test_identity_dynamics_repeat_C(self, rng):
        ns = 3
        m = MJLSModel([np.eye(ns)] * 2, [rng.standard_normal((ns, 1))] * 2,
                      [rng.standard_normal((2, ns)) for _ in range(2)])
        path = (0, 1, 1)
        O = observability_matrix(m, path)
        for k, mode in enumerate(path):
            assert np.allclose(O[2 * k:2 * k + 2], m.C[mode])

    def test_input_effect_example(self):
        G = input_effect_matrix(estimation_example(), (0, 0))
        assert np.allclose(G, [[0.0], [1.0]])

    def test_zero_B_gives_zero_G(self, rng):
        m = random_model(rng)
        m0 = MJLSModel(m.A, [np.zeros_like(b) for b in m.B], m.C)
        assert not np.any(input_effect_matrix(m0, (0, 1, 0, 1)))

    def test_empty_window_has_no_controls(self):
        m = estimation_example()
        assert input_effect_matrix(m, (1,)).shape == (1, 0)

    def test_block_pattern(self, rng):
        m = random_model(rng, ns=3, na=2, ny=2)
        p = (1, 0, 1)
        G = input_effect_matrix(m, p)
        assert np.allclose(G[:2], 0.0)  # first block row
        assert np.allclose(G[4:6, 0:2], m.C[p[2]] @ m.A[p[1]] @ m.B[p[0]])
        assert np.allclose(G[4:6, 2:4], m.C[p[2]] @ m.B[p[1]])
        assert np.allclose(G[2:4, 2:4], 0.0)

    def test_output_example(self):
        y = predict_outputs(estimation_example(), (0,), [1, 1], np.zeros(0))
        assert np.allclose(y, [3.0])

    def test_zero_state_zero_input(self, rng):
        m = random_model(rng)
        assert not np.any(predict_outputs(m, (0, 1, 1), np.zeros(2), np.zeros(2)))

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.integers(0, 5))
    def test_predict_matches_recursion(self, seed, n_modes, N):
        r = np.random.default_rng(seed)
        m = random_model(r, n_modes, ns=int(r.integers(1, 4)), na=int(r.integers(1, 3)), ny=int(r.integers(1, 3)))
        path = random_path(r, n_modes, N + 1)
        x0 = r.standard_normal(m.ns)
        u = r.standard_normal(N * m.na)
        got = predict_outputs(m, path, x0, u)
        want = step_oracle(m, path, x0, u)
        assert np.allclose(got, want, rtol=1e-10, atol=1e-10 * (1 + np.abs(want).max()))
        _, ys = simulate(m, path, x0, u)
        assert np.allclose(ys.reshape(-1), want, rtol=1e-10, atol=1e-10)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 3))
    def test_concatenated_path_prefix(self, seed, n1, n2):
        r = np.random.default_rng(seed)
        m = random_model(r, 3, ns=3, ny=2)
        p, q = random_path(r, 3, n1), random_path(r, 3, n2)
        O = observability_matrix(m, p + q)
        assert np.allclose(O[:n1 * m.ny], observability_matrix(m, p))

    def test_invalid_label(self):
        with pytest.raises(ModelError):
            observability_matrix(estimation_example(), (0, 2))
        with pytest.raises(ModelError):
            check_path(estimation_example(), ())

    def test_shape_mismatch(self):
        with pytest.raises(ModelError):
            predict_outputs(estimation_example(), (0, 1), [1, 1], np.zeros(3))


class TestChain:
    def test_identity_is_absorbing(self):
        assert np.all(sample_chain(np.eye(3), 2, 50, seed=1) == 2)

    def test_uniform_frequency(self):
        modes = sample_chain(np.full((2, 2), 0.5), 0, 10_000, seed=7)
        assert 0.47 <= np.mean(modes == 0) <= 0.53

    def test_absorbing_row(self):
        P = np.array([[1.0, 0.0], [0.3, 0.7]])
        assert np.all(sample_chain(P, 0, 200, seed=3) == 0)

    def test_reproducible(self):
        P = np.array([[0.2, 0.8], [0.6, 0.4]])
        assert np.array_equal(sample_chain(P, 0, 500, seed=11), sample_chain(P, 0, 500, seed=11))

    def test_rejects_non_stochastic(self):
        with pytest.raises(ModelError):
            sample_chain(np.array([[0.5, 0.6], [0.5, 0.5]]), 0, 3)
        with pytest.raises(ModelError):
            TransitionMatrix([[1.2, -0.2], [0.5, 0.5]])

    def test_ergodicity(self):
        assert TransitionMatrix(np.full((2, 2), 0.5)).is_ergodic()
        assert not TransitionMatrix(np.eye(2)).is_ergodic()
        assert not TransitionMatrix([[0, 1], [1, 0]]).is_ergodic()  # periodic


class TestModelFiles:
    def test_round_trip(self, tmp_path):
        m = control_example()
        save_model(m, tmp_path / "m.json")
        m2 = load_model(tmp_path / "m.json")
        for a, b in zip(m.A + m.B + m.C, m2.A + m2.B + m2.C):
            assert np.array_equal(a, b)
        assert np.array_equal(m.P, m2.P)

    def test_missing_field(self):
        d = model_to_dict(estimation_example())
        del d["C"]
        with pytest.raises(ModelError):
            model_from_dict(d)

    def test_dimension_field_checked(self):
        d = model_to_dict(estimation_example())
        d["ns"] = 3
        with pytest.raises(ModelError):
            model_from_dict(d)

    def test_inconsistent_shapes(self):
        with pytest.raises(ModelError):
            MJLSModel([np.eye(2)], [np.ones((3, 1))], [np.ones((1, 2))])

    def test_shipped_configs_match_builtin(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        for name, ref in (("estimation_example.json", estimation_example()),
                          ("control_example.json", control_example())):
            m = load_model(root / name)
            assert all(np.array_equal(a, b) for a, b in zip(m.A + m.B + m.C, ref.A + ref.B + ref.C))
        cfg = json.loads((root / "disturbance.json").read_text())
        assert cfg["disturbance"].startswith("50:")
