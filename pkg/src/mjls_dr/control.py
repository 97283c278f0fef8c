"""Distributionally robust static output feedback for Markov jump linear systems.

A gain ``K`` with ``u = K y`` is synthesized from coupled LMIs that must hold
at every vertex of the per-mode ambiguity polytopes. Stability of the result
is checked separately, both with a coupled-Lyapunov search and through the
spectral radius of the closed-loop second-moment operator.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import MJLSModel, block_diag
from .sdp import Affine, LMIProblem, SDPResult, SolverOptions, bmat, solve, verify

log = logging.getLogger(__name__)

ALPHA_GRID = (1.0, 10.0, 100.0, 1000.0)
DEFAULT_C = 1e3


class SynthesisError(RuntimeError):
    pass


@dataclass
class DesignMatrixInputs:
    """Everything the per-mode design matrix needs.

    ``V1, V2, V4`` are per-mode lists (index ``j``); ``H1, H2, G1, G2`` belong
    to mode ``i``. Shapes: ``V1 ns×ns``, ``V2 na×ns``, ``V4 na×na``,
    ``Q4 na×na``, ``L na×ny``, ``H1, G1 ns×ns``, ``H2, G2 na×ns``. Entries may
    be numeric arrays or :class:`Affine` expressions.
    """

    model: MJLSModel
    i: int
    q: np.ndarray
    M: Sequence[np.ndarray]
    alpha: float
    V1: Sequence
    V2: Sequence
    V4: Sequence
    Q4: object
    L: object
    H1: object
    H2: object
    G1: object
    G2: object


def build_design_matrix(d: DesignMatrixInputs) -> Affine:
    """4x4 block symmetric matrix, blocks sized (ns, na, ns, na).

    ``O31`` carries ``-H1ᵀ``: restricted to ``u = K C x, w1 = x+, w2 = 0`` the
    ``H1`` terms then cancel and the form reduces to
    ``x+ᵀ(Σ q_j V1_j)x+ - xᵀV1_i x + 2α|Mx - KCx|²_Q4``, which is what makes a
    negative definite matrix a Lyapunov certificate. With ``+H1ᵀ`` the
    leftover ``4 xᵀH1 x+`` is sign-indefinite and non-stabilizing gains pass.
    """
    m = d.model
    i = d.i
    A, B, C = m.A[i], m.B[i], m.C[i]
    Mi = np.asarray(d.M[i], dtype=float)
    q = np.asarray(d.q, dtype=float)
    if q.shape != (m.n_modes,):
        raise ValueError("vertex has the wrong number of modes")
    if Mi.shape != (m.na, m.ns):
        raise ValueError(f"M_i must be {m.na}x{m.ns}")
    lift = Affine.lift
    H1, H2, G1, G2 = lift(d.H1), lift(d.H2), lift(d.G1), lift(d.G2)
    Q4, L = lift(d.Q4), lift(d.L)
    a = float(d.alpha)
    LC = L @ C
    MtLC = Mi.T @ LC
    EV1 = sum((float(q[j]) * lift(d.V1[j]) for j in range(m.n_modes)), Affine.constant(np.zeros((m.ns, m.ns))))
    EV2 = sum((float(q[j]) * lift(d.V2[j]) for j in range(m.n_modes)), Affine.constant(np.zeros((m.na, m.ns))))
    EV4 = sum((float(q[j]) * lift(d.V4[j]) for j in range(m.n_modes)), Affine.constant(np.zeros((m.na, m.na))))

    O11 = (H1 @ A).sym() - lift(d.V1[i]) + 2 * a * (Mi.T @ Q4 @ Mi) - 2 * a * MtLC.sym()
    O21 = H2 @ A + (H1 @ B).T + 2 * a * LC
    O22 = (H2 @ B).sym() - 2 * a * Q4
    O31 = G1 @ A - H1.T
    O32 = G1 @ B - H2.T
    O33 = EV1 - G1.sym()
    O41 = G2 @ A + LC
    O42 = G2 @ B + Q4
    O43 = -G2 + EV2
    O44 = EV4 - 2 * Q4
    return bmat([
        [O11, O21.T, O31.T, O41.T],
        [O21, O22, O32.T, O42.T],
        [O31, O32, O33, O43.T],
        [O41, O42, O43, O44],
    ])


# -- stability verification -------------------------------------------------

def second_moment_radius(Acl: Sequence[np.ndarray], P: np.ndarray) -> float:
    """Spectral radius of ``Q_j <- Σ_i P_ij A_i Q_i A_iᵀ``; < 1 iff mean-square stable."""
    P = np.asarray(P, dtype=float)
    n = Acl[0].shape[0]
    K = block_diag(*[np.kron(a, a) for a in Acl])
    T = np.kron(P.T, np.eye(n * n)) @ K
    return float(np.max(np.abs(np.linalg.eigvals(T))))


@dataclass
class StabilityReport:
    stable: bool
    V: list[np.ndarray] | None
    margins: list[float]  # per mode: λmin(V_i - Σ_j P_ij A_jᵀ V_j A_j), V scaled to max λ = 1
    spectral_radius: float


def ms_stability(Acl: Sequence[np.ndarray], P, options: SolverOptions | None = None) -> StabilityReport:
    """Search ``V_i ≻ 0`` with ``Σ_j P_ij A_jᵀ V_j A_j - V_i ≺ 0`` for every mode ``i``."""
    P = np.asarray(P, dtype=float)
    M = len(Acl)
    n = Acl[0].shape[0]
    pr = LMIProblem()
    V = [pr.symmetric(f"V{i}", n) for i in range(M)]
    for i in range(M):
        pr.add_pd(V[i], f"V{i}>0")
    for i in range(M):
        lhs = sum((P[i, j] * (Acl[j].T @ V[j] @ Acl[j]) for j in range(M) if P[i, j] > 0),
                  Affine.constant(np.zeros((n, n))))
        pr.add_pd(V[i] - lhs, f"decrease{i}")
    res = solve(pr, options)
    rho = second_moment_radius(Acl, P)
    if res.status != "feasible":
        return StabilityReport(False, None, [], rho)
    Vs = [res.assignment[f"V{i}"] for i in range(M)]
    scale = max(np.linalg.eigvalsh(v)[-1] for v in Vs)
    Vs = [v / scale for v in Vs]
    margins = []
    for i in range(M):
        G = Vs[i] - sum(P[i, j] * Acl[j].T @ Vs[j] @ Acl[j] for j in range(M))
        margins.append(float(np.linalg.eigvalsh(0.5 * (G + G.T))[0]))
    ok = all(np.linalg.eigvalsh(v)[0] > 0 for v in Vs) and min(margins) > 0
    return StabilityReport(ok, Vs, margins, rho)


def closed_loop(model: MJLSModel, K) -> list[np.ndarray]:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (model.na, model.ny):
        raise ValueError(f"K must be {model.na}x{model.ny}")
    return [model.A[i] + model.B[i] @ K @ model.C[i] for i in range(model.n_modes)]


def verify_ms_stability(model: MJLSModel, K, P) -> StabilityReport:
    return ms_stability(closed_loop(model, K), P)


def vertex_matrices(vertex_sets: Sequence[np.ndarray]):
    """Every transition matrix whose row ``i`` is a vertex of set ``i``."""
    for rows in itertools.product(*[list(np.atleast_2d(v)) for v in vertex_sets]):
        yield np.array(rows)


def verify_at_vertices(model: MJLSModel, K, vertex_sets) -> list[StabilityReport]:
    return [verify_ms_stability(model, K, P) for P in vertex_matrices(vertex_sets)]


def simplex_vertices(n_modes: int) -> list[np.ndarray]:
    return [np.eye(n_modes) for _ in range(n_modes)]


# -- synthesis --------------------------------------------------------------

def synthesize_state_feedback(model: MJLSModel, vertex_sets: Sequence[np.ndarray],
                              options: SolverOptions | None = None) -> list[np.ndarray]:
    """Mode-dependent ``M_i`` with ``A_i + B_i M_i`` mean-square stable for every vertex.

    Variables ``W_i ≻ 0, Y_i``, gain ``M_i = Y_i W_i⁻¹``; per mode and vertex
    ``q`` the Schur complement of ``W_i - Σ_j q_j (A_i W_i + B_i Y_i)ᵀ W_j⁻¹ (·)``.
    """
    m = model
    pr = LMIProblem()
    W = [pr.symmetric(f"W{i}", m.ns) for i in range(m.n_modes)]
    Y = [pr.matrix(f"Y{i}", m.na, m.ns) for i in range(m.n_modes)]
    for i in range(m.n_modes):
        pr.add_pd(W[i], f"W{i}>0")
    for i in range(m.n_modes):
        AWBY = m.A[i] @ W[i] + m.B[i] @ Y[i]
        for l, q in enumerate(np.atleast_2d(vertex_sets[i])):
            support = [j for j in range(m.n_modes) if q[j] > 0]
            n = len(support)
            rows = [[W[i]] + [np.sqrt(q[j]) * AWBY.T for j in support]]
            for a, j in enumerate(support):
                row = [np.sqrt(q[j]) * AWBY] + [None] * n
                row[1 + a] = W[j]
                rows.append(row)
            # fill zero off-diagonal blocks so bmat can size every column
            for r in range(1, n + 1):
                for col in range(1, n + 1):
                    if rows[r][col] is None:
                        rows[r][col] = np.zeros((m.ns, m.ns))
            pr.add_pd(bmat(rows), f"sf{i},{l}")
    res = solve(pr, options)
    if res.status != "feasible":
        raise SynthesisError("no robust state feedback")
    return [res.assignment[f"Y{i}"] @ np.linalg.inv(res.assignment[f"W{i}"]) for i in range(m.n_modes)]


@dataclass
class ControllerGain:
    K: np.ndarray
    provenance: str  # "robust" | "stochastic" | "dr(t)"
    gamma: float
    alpha: float
    vertex_sets: list[np.ndarray]
    certificate: dict = field(default_factory=dict)


@dataclass
class SynthesisResult:
    feasible: bool
    gamma: float
    alpha: float | None
    gain: ControllerGain | None
    sdp: SDPResult | None = None
    problem: LMIProblem | None = None


def output_feedback_problem(model: MJLSModel, vertex_sets, M, alpha: float, c: float = DEFAULT_C) -> LMIProblem:
    m = model
    pr = LMIProblem()
    gamma = pr.scalar("gamma")
    V1 = [pr.symmetric(f"V1_{j}", m.ns) for j in range(m.n_modes)]
    V2 = [pr.matrix(f"V2_{j}", m.na, m.ns) for j in range(m.n_modes)]
    V4 = [pr.symmetric(f"V4_{j}", m.na) for j in range(m.n_modes)]
    Q4 = pr.symmetric("Q4", m.na)
    L = pr.matrix("L", m.na, m.ny)
    H1 = [pr.matrix(f"H1_{i}", m.ns, m.ns) for i in range(m.n_modes)]
    H2 = [pr.matrix(f"H2_{i}", m.na, m.ns) for i in range(m.n_modes)]
    G1 = [pr.matrix(f"G1_{i}", m.ns, m.ns) for i in range(m.n_modes)]
    G2 = [pr.matrix(f"G2_{i}", m.na, m.ns) for i in range(m.n_modes)]
    for j in range(m.n_modes):
        pr.add_pd(bmat([[V1[j], V2[j].T], [V2[j], V4[j]]]), f"V_{j}>0")
    pr.add_pd(Q4, "Q4>0")
    dim = 2 * (m.ns + m.na)
    for i in range(m.n_modes):
        for l, q in enumerate(np.atleast_2d(vertex_sets[i])):
            O = build_design_matrix(DesignMatrixInputs(
                m, i, q, M, alpha, V1, V2, V4, Q4, L, H1[i], H2[i], G1[i], G2[i]))
            pr.add_pd(gamma * np.eye(dim) - O, f"O_{i},{l}<gamma")
    pr.add_pd(gamma + c, "gamma>=-c")
    pr.minimize(gamma)
    return pr


def synthesize_output_feedback(model: MJLSModel, vertex_sets, M, alpha: float | None = None,
                               c: float = DEFAULT_C, provenance: str = "dr",
                               options: SolverOptions | None = None) -> SynthesisResult:
    """Minimize γ over the vertex LMIs; a negative optimum yields ``K = Q4⁻¹ L``.

    With ``alpha=None`` the values in :data:`ALPHA_GRID` are tried in order
    and the first one reaching γ < 0 is kept.
    """
    vertex_sets = [np.atleast_2d(np.asarray(v, dtype=float)) for v in vertex_sets]
    alphas = ALPHA_GRID if alpha is None else (float(alpha),)
    if options is None:
        # the optimum is either -c or 0 (homogeneous otherwise); stop once a
        # lower bound rules out anything meaningfully negative
        options = SolverOptions(abandon_above=-1e-6 * c)
    last = SynthesisResult(False, np.inf, None, None)
    for a in alphas:
        pr = output_feedback_problem(model, vertex_sets, M, a, c)
        res = solve(pr, options)
        if res.status == "infeasible" or res.assignment is None:
            last = SynthesisResult(False, np.inf, a, None, res, pr)
            continue
        gamma = res.objective
        if gamma >= 0:
            last = SynthesisResult(False, gamma, a, None, res, pr)
            continue
        Q4 = res.assignment["Q4"]
        K = np.linalg.solve(Q4, res.assignment["L"])
        cert = {f"V1_{j}": res.assignment[f"V1_{j}"] for j in range(model.n_modes)}
        log.info("output feedback (%s): gamma=%.3g alpha=%g", provenance, gamma, a)
        gain = ControllerGain(K, provenance, gamma, a, vertex_sets, cert)
        return SynthesisResult(True, gamma, a, gain, res, pr)
    return last
