"""Markov jump linear system model, chain sampling and measurement algebra.

Mode labels are 0-based everywhere in the Python API (``0 .. n_modes-1``).
Files, CSV logs and CLI output use 1-based labels; the conversion happens
only in :mod:`mjls_dr.io` and :mod:`mjls_dr.cli`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

Path = tuple[int, ...]

STOCHASTIC_TOL = 1e-12


class ModelError(ValueError):
    """Malformed model, path or data shapes."""


@dataclass(frozen=True, eq=False)
class MJLSModel:
    """Per-mode matrices ``(A_i, B_i, C_i)`` of ``x+ = A x + B u, y = C x``."""

    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    C: tuple[np.ndarray, ...]
    P: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        A = tuple(np.array(a, dtype=float, ndmin=2) for a in self.A)
        B = tuple(np.array(b, dtype=float, ndmin=2) for b in self.B)
        C = tuple(np.array(c, dtype=float, ndmin=2) for c in self.C)
        if not A:
            raise ModelError("model needs at least one mode")
        if not (len(A) == len(B) == len(C)):
            raise ModelError("A, B, C must list the same number of modes")
        ns, na, ny = A[0].shape[0], B[0].shape[1], C[0].shape[0]
        for i, (a, b, c) in enumerate(zip(A, B, C)):
            if a.shape != (ns, ns) or b.shape != (ns, na) or c.shape != (ny, ns):
                raise ModelError(f"mode {i}: inconsistent shapes {a.shape}, {b.shape}, {c.shape}")
        for m in A + B + C:
            m.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if self.P is not None:
            P = TransitionMatrix(self.P).P
            if P.shape[0] != len(A):
                raise ModelError("P has the wrong number of modes")
            object.__setattr__(self, "P", P)

    @property
    def n_modes(self) -> int:
        return len(self.A)

    @property
    def ns(self) -> int:
        return self.A[0].shape[0]

    @property
    def na(self) -> int:
        return self.B[0].shape[1]

    @property
    def ny(self) -> int:
        return self.C[0].shape[0]

    def with_transition(self, P) -> "MJLSModel":
        return MJLSModel(self.A, self.B, self.C, P=P)


class TransitionMatrix:
    """Row-stochastic matrix; rows are the next-mode distributions."""

    def __init__(self, P):
        P = np.array(P, dtype=float, ndmin=2)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ModelError("transition matrix must be square")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise ModelError("transition matrix rows must be nonnegative and sum to 1")
        P.setflags(write=False)
        self.P = P

    @property
    def n_modes(self) -> int:
        return self.P.shape[0]

    def is_ergodic(self) -> bool:
        # Wielandt bound: a primitive matrix has P^k > 0 for k = (n-1)^2 + 1.
        n = self.n_modes
        pattern = (self.P > 0).astype(float)
        Pk = np.linalg.matrix_power(pattern, (n - 1) ** 2 + 1)
        return bool(np.all(Pk > 0))


def check_path(model: MJLSModel, path: Sequence[int]) -> Path:
    path = tuple(int(m) for m in path)
    if not path:
        raise ModelError("path must be nonempty")
    for m in path:
        if not 0 <= m < model.n_modes:
            raise ModelError(f"invalid mode label {m} for a {model.n_modes}-mode model")
    return path


def observability_matrix(model: MJLSModel, path: Sequence[int]) -> np.ndarray:
    """Stack ``C_{θk} A_{θ(k-1)} ... A_{θ0}`` for k = 0..N."""
    path = check_path(model, path)
    key = ("O", path)
    if key in model._cache:
        return model._cache[key]
    blocks = []
    running = np.eye(model.ns)
    for k, m in enumerate(path):
        if k > 0:
            running = model.A[path[k - 1]] @ running
        blocks.append(model.C[m] @ running)
    O = np.vstack(blocks)
    O.setflags(write=False)
    model._cache[key] = O
    return O


def input_effect_matrix(model: MJLSModel, path: Sequence[int]) -> np.ndarray:
    """Map from stacked inputs ``u_0..u_{N-1}`` to stacked outputs ``y_0..y_N``.

    Block ``(k, j)`` for ``j < k`` is ``C_{θk} A_{θ(k-1)} ... A_{θ(j+1)} B_{θj}``;
    the first block row is zero.
    """
    path = check_path(model, path)
    key = ("G", path)
    if key in model._cache:
        return model._cache[key]
    N = len(path) - 1
    ny, na = model.ny, model.na
    G = np.zeros(((N + 1) * ny, N * na))
    # column block j: propagate B_{θj} forward through later modes
    for j in range(N):
        running = model.B[path[j]]
        for k in range(j + 1, N + 1):
            if k > j + 1:
                running = model.A[path[k - 1]] @ running
            G[k * ny:(k + 1) * ny, j * na:(j + 1) * na] = model.C[path[k]] @ running
    G.setflags(write=False)
    model._cache[key] = G
    return G


def predict_outputs(model: MJLSModel, path: Sequence[int], x0, u) -> np.ndarray:
    path = check_path(model, path)
    N = len(path) - 1
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x0.shape != (model.ns,):
        raise ModelError(f"x0 must have {model.ns} entries")
    if u.shape != (N * model.na,):
        raise ModelError(f"u must have {N * model.na} entries for a path of length {N + 1}")
    return observability_matrix(model, path) @ x0 + input_effect_matrix(model, path) @ u


def simulate(model: MJLSModel, path: Sequence[int], x0, u) -> tuple[np.ndarray, np.ndarray]:
    """Step-by-step recursion; returns states ``(N+1, ns)`` and outputs ``(N+1, ny)``."""
    path = check_path(model, path)
    N = len(path) - 1
    u = np.asarray(u, dtype=float).reshape(N, model.na) if N else np.zeros((0, model.na))
    xs = [np.asarray(x0, dtype=float).reshape(-1)]
    for k in range(N):
        m = path[k]
        xs.append(model.A[m] @ xs[-1] + model.B[m] @ u[k])
    ys = [model.C[m] @ x for m, x in zip(path, xs)]
    return np.array(xs), np.array(ys)


def sample_chain(P, theta0: int, T: int, seed=None) -> np.ndarray:
    """Draw ``θ_0..θ_T`` from the chain started at ``theta0``."""
    P = P.P if isinstance(P, TransitionMatrix) else TransitionMatrix(P).P
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not 0 <= theta0 < P.shape[0]:
        raise ModelError(f"invalid initial mode {theta0}")
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    draws = rng.random(T)
    modes = np.empty(T + 1, dtype=int)
    modes[0] = theta0
    for t in range(T):
        modes[t + 1] = int(np.searchsorted(cdf[modes[t]], draws[t], side="right"))
    return modes


def block_diag(*mats) -> np.ndarray:
    return reduce(_bd2, mats) if mats else np.zeros((0, 0))


def _bd2(a, b):
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[:a.shape[0], :a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


# -- model files ------------------------------------------------------------

def model_from_dict(d: dict) -> MJLSModel:
    try:
        model = MJLSModel(
            tuple(np.array(a, dtype=float) for a in d["A"]),
            tuple(np.array(b, dtype=float) for b in d["B"]),
            tuple(np.array(c, dtype=float) for c in d["C"]),
            P=d.get("P"),
        )
    except KeyError as exc:
        raise ModelError(f"model file missing field {exc}") from None
    for key, val in (("n_modes", model.n_modes), ("ns", model.ns), ("na", model.na), ("ny", model.ny)):
        if key in d and int(d[key]) != val:
            raise ModelError(f"field {key}={d[key]} disagrees with matrices ({val})")
    return model


def model_to_dict(model: MJLSModel) -> dict:
    d = {
        "n_modes": model.n_modes,
        "ns": model.ns,
        "na": model.na,
        "ny": model.ny,
        "A": [a.tolist() for a in model.A],
        "B": [b.tolist() for b in model.B],
        "C": [c.tolist() for c in model.C],
    }
    if model.P is not None:
        d["P"] = model.P.tolist()
    return d


def load_model(path) -> MJLSModel:
    with open(FsPath(path)) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: MJLSModel, path) -> None:
    with open(FsPath(path), "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)


# -- the two example systems ------------------------------------------------

def estimation_example() -> MJLSModel:
    """Two-mode system with identical outputs, uniform switching."""
    return MJLSModel(
        A=(np.array([[0.45, 0.0], [0.0, 0.4]]), np.array([[0.25, -0.20], [0.04, 0.4]])),
        B=(np.array([[0.3], [0.4]]),) * 2,
        C=(np.array([[2.0, 1.0]]),) * 2,
        P=np.full((2, 2), 0.5),
    )


def control_example() -> MJLSModel:
    """Open-loop unstable two-mode system used for controller comparison."""
    return MJLSModel(
        A=(np.array([[1.05, 1.8], [0.0, 1.1]]), np.array([[0.95, 0.7], [0.0, 0.95]])),
        B=(np.array([[0.9, 0.0], [0.0, 0.0]]), np.array([[0.8, 0.0], [0.0, 1.4]])),
        C=(np.array([[1.0, 1.0], [0.0, 0.0]]), np.eye(2)),
        P=np.full((2, 2), 0.5),
    )
