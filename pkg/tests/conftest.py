import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mjls_dr.core import MJLSModel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_model(rng, n_modes=2, ns=2, na=1, ny=1, P=True, scale=0.6) -> MJLSModel:
    A = [scale * rng.standard_normal((ns, ns)) for _ in range(n_modes)]
    B = [rng.standard_normal((ns, na)) for _ in range(n_modes)]
    C = [rng.standard_normal((ny, ns)) for _ in range(n_modes)]
    Pm = None
    if P:
        Pm = rng.random((n_modes, n_modes)) + 0.1
        Pm /= Pm.sum(axis=1, keepdims=True)
    return MJLSModel(A, B, C, P=Pm)


def random_path(rng, n_modes, length):
    return tuple(int(v) for v in rng.integers(n_modes, size=length))


def facet_vertices(p_hat, r, tol=1e-9):
    """Brute force: every (M-1)-subset of inequality facets plus Σp = 1."""
    M = len(p_hat)
    rows, rhs = [], []
    for k in range(M):  # -p_k <= 0
        e = np.zeros(M)
        e[k] = -1.0
        rows.append(e)
        rhs.append(0.0)
    for s in itertools.product((-1.0, 1.0), repeat=M):  # s·(p - p̂) <= r
        rows.append(np.array(s))
        rhs.append(r + float(np.dot(s, p_hat)))
    rows, rhs = np.array(rows), np.array(rhs)
    found = []
    for idx in itertools.combinations(range(len(rows)), M - 1):
        A = np.vstack([rows[list(idx)], np.ones(M)])
        b = np.append(rhs[list(idx)], 1.0)
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        v = np.linalg.solve(A, b)
        if np.all(rows @ v <= rhs + tol) and not any(np.abs(v - w).max() <= 1e-7 for w in found):
            found.append(v)
    return np.array(found)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
