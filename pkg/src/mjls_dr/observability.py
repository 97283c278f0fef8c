"""Offline discernibility and mode-observability checks.

The projection test used here is only a sufficient condition for
discernibility, so a failed check reads "not certified", not "not observable".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import MJLSModel, Path, check_path, input_effect_matrix, observability_matrix

RANK_RTOL = 1e-9
RESIDUAL_RTOL = 1e-8
DEFAULT_PAIR_BUDGET = 2_000_000


class ResourceError(RuntimeError):
    """Enumeration would exceed the configured pair budget."""


@dataclass(frozen=True)
class DiscernibilityReport:
    pair: tuple[Path, Path]
    discernible: bool
    residual_norm: float


@dataclass(frozen=True)
class MOCertificate:
    N: int
    alpha: int
    omega: int
    holds: bool
    witness_pair: tuple[Path, Path] | None = None
    pairs_tested: int = 0


def column_basis(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of ``range(M)``; singular values below ``rtol*σmax`` dropped."""
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((M.shape[0], 0))
    return U[:, s > rtol * s[0]]


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    return column_basis(M, rtol).shape[1]


def is_discernible_ae(model: MJLSModel, theta: Sequence[int], theta_p: Sequence[int]) -> DiscernibilityReport:
    """Projection test: ``(I - P)(G(θ) - G(θ'))`` nonzero, P onto ``col[O(θ) O(θ')]``."""
    theta, theta_p = check_path(model, theta), check_path(model, theta_p)
    if len(theta) != len(theta_p):
        raise ValueError("paths must have equal length")
    if len(theta) < 2:
        raise ValueError("discernibility needs at least one control step (N >= 1)")
    dG = input_effect_matrix(model, theta) - input_effect_matrix(model, theta_p)
    scale = np.linalg.norm(dG)
    if scale == 0.0:
        return DiscernibilityReport((theta, theta_p), False, 0.0)
    Ub = column_basis(np.hstack([observability_matrix(model, theta), observability_matrix(model, theta_p)]))
    resid = dG - Ub @ (Ub.T @ dG)
    r = float(np.linalg.norm(resid))
    return DiscernibilityReport((theta, theta_p), r > RESIDUAL_RTOL * scale, r)


def _count_core_pairs(n_modes: int, N: int, alpha: int, omega: int) -> int:
    T = n_modes ** (N + 1)
    core = N - omega - alpha + 1
    return (T * T - T * n_modes ** (N + 1 - core)) // 2


def _core_differing_pairs(n_modes: int, N: int, alpha: int, omega: int) -> Iterator[tuple[Path, Path]]:
    paths = list(itertools.product(range(n_modes), repeat=N + 1))
    lo, hi = alpha, N - omega
    for a, p in enumerate(paths):
        core = p[lo:hi + 1]
        for q in paths[a + 1:]:
            if q[lo:hi + 1] != core:
                yield p, q


def check_mo(model: MJLSModel, N: int, alpha: int, omega: int,
             budget: int = DEFAULT_PAIR_BUDGET, _memo: dict | None = None) -> MOCertificate:
    """Exhaustive (N, α, ω) mode-observability check over all core-differing path pairs.

    Pairs are visited in lexicographic order, so the witness is the first
    failing pair in that order.
    """
    if N < 1 or alpha < 0 or omega < 0 or alpha + omega >= N:
        raise ValueError("need N >= 1, alpha, omega >= 0 and alpha + omega < N")
    n_pairs = _count_core_pairs(model.n_modes, N, alpha, omega)
    if n_pairs > budget:
        raise ResourceError(f"{n_pairs} pair tests exceed the budget of {budget}")
    memo = {} if _memo is None else _memo
    tested = 0
    for p, q in _core_differing_pairs(model.n_modes, N, alpha, omega):
        tested += 1
        ok = memo.get((p, q))
        if ok is None:
            ok = memo[(p, q)] = is_discernible_ae(model, p, q).discernible
        if not ok:
            return MOCertificate(N, alpha, omega, False, (p, q), tested)
    return MOCertificate(N, alpha, omega, True, None, tested)


def mo_table(model: MJLSModel, N_max: int, budget: int = DEFAULT_PAIR_BUDGET) -> list[MOCertificate]:
    """All ``check_mo`` results for ``N <= N_max``, sharing pair tests across offsets."""
    out = []
    for N in range(1, N_max + 1):
        memo: dict = {}
        for alpha in range(N):
            for omega in range(N - alpha):
                out.append(check_mo(model, N, alpha, omega, budget, memo))
    return out


def find_weak_mo_index(model: MJLSModel, N_max: int,
                       budget: int = DEFAULT_PAIR_BUDGET) -> tuple[int, int, int] | None:
    if N_max < 1:
        raise ValueError("N_max must be >= 1")
    for N in range(1, N_max + 1):
        memo: dict = {}
        for alpha in range(N):
            for omega in range(N - alpha):
                if check_mo(model, N, alpha, omega, budget, memo).holds:
                    return N, alpha, omega
    return None


def is_pathwise_observable(model: MJLSModel, path: Sequence[int]) -> bool:
    return numerical_rank(observability_matrix(model, path)) == model.ns
