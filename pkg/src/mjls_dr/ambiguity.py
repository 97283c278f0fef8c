"""ℓ1 ambiguity sets over transition-matrix rows learned from observed switches."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

DEDUP_TOL = 1e-9
# sum over t >= 0 of 0.5 (t+1)^-2
BETA_SUM = 0.5 * math.pi ** 2 / 6


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    counts: np.ndarray  # counts[i, j] = number of observed i -> j switches

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or np.any(c < 0):
            raise ValueError("counts must be a square nonnegative integer matrix")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, n_modes: int) -> "TransitionDataset":
        return cls(np.zeros((n_modes, n_modes), dtype=np.int64))

    @property
    def n_modes(self) -> int:
        return self.counts.shape[0]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def update_counts(ds: TransitionDataset, pairs: Iterable) -> TransitionDataset:
    """Add observed ``(src, dst)`` switches (extra tuple fields such as a time stamp are ignored)."""
    counts = ds.counts.copy()
    for pair in pairs:
        i, j = (pair.src, pair.dst) if hasattr(pair, "src") else pair
        if not (0 <= i < ds.n_modes and 0 <= j < ds.n_modes):
            raise ValueError(f"invalid transition {(i, j)}")
        counts[i, j] += 1
    return TransitionDataset(counts)


def radius(n_samples: int, n_modes: int, beta: float) -> float:
    """Concentration radius ``sqrt(2 (M log 2 - log β) / n)``; infinite without data."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if n_samples <= 0:
        return math.inf
    return math.sqrt(2.0 * (n_modes * math.log(2.0) - math.log(beta)) / n_samples)


def beta_schedule(t: int) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return 0.5 * (t + 1) ** -2


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    p_hat: np.ndarray
    radius: float
    vertices: np.ndarray  # (n_vertices, M)

    @property
    def is_full_simplex(self) -> bool:
        return math.isinf(self.radius) or self.radius >= 2.0 * (1.0 - float(self.p_hat.min()))

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return (bool(np.all(p >= -tol)) and abs(p.sum() - 1.0) <= tol
                and float(np.abs(p - self.p_hat).sum()) <= self.radius + tol)


def l1_simplex_vertices(p_hat, r: float) -> np.ndarray:
    """Vertices of ``{p in simplex : ||p - p_hat||_1 <= r}``.

    Each vertex maximizes some linear objective with a strict ordering of the
    coordinates: mass ``r/2`` flows into the top coordinate, drained from the
    others from the lowest-ranked upward. Enumerating the receiving coordinate
    and the drain order therefore visits every vertex.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    M = p_hat.size
    if r >= 2.0 * (1.0 - p_hat.min()):
        return np.eye(M)
    budget = r / 2.0
    found: list[np.ndarray] = []
    for j in range(M):
        others = [k for k in range(M) if k != j]
        for order in itertools.permutations(others):
            v = p_hat.copy()
            left = budget
            for k in order:
                take = min(v[k], left)
                v[k] -= take
                v[j] += take
                left -= take
                if left <= 0.0:
                    break
            if not any(np.abs(v - w).max() <= DEDUP_TOL for w in found):
                found.append(v)
    return np.array(found)


def build_ambiguity(ds: TransitionDataset, i: int, beta: float) -> AmbiguitySet:
    row = ds.counts[i]
    n = int(row.sum())
    M = ds.n_modes
    if n == 0:
        return AmbiguitySet(np.full(M, 1.0 / M), math.inf, np.eye(M))
    p_hat = row / n
    r = radius(n, M, beta)
    return AmbiguitySet(p_hat, r, l1_simplex_vertices(p_hat, r))


def build_all(ds: TransitionDataset, beta: float) -> list[AmbiguitySet]:
    return [build_ambiguity(ds, i, beta) for i in range(ds.n_modes)]


def coverage_check(p_true, amb: AmbiguitySet) -> bool:
    if math.isinf(amb.radius):
        return True
    return float(np.abs(np.asarray(p_true, dtype=float) - amb.p_hat).sum()) <= amb.radius
