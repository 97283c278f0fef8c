"""Dense LMI feasibility / linear-objective solver.

Decision variables live in one flat vector ``z``. Matrix expressions are affine
in ``z`` and stored as a constant plus one coefficient matrix per entry of
``z``. Every constraint ``F(z) ≻ 0`` is normalized by its largest coefficient
and enforced with a margin ``F(z) ⪰ eps·I``.

The solver is a textbook two-phase log-det barrier method: phase 1 minimizes
a common shift ``s`` with ``F_k(z) + s·I ⪰ 0``; phase 2 follows the central
path of ``t·cᵀz - Σ log det(F_k(z) - eps·I)``. Each centering step is a damped
Newton iteration with backtracking on the barrier merit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class SDPInputError(ValueError):
    pass


class Affine:
    """Matrix-valued affine expression ``const + Σ_m z_m · coef[m]``."""

    __array_ufunc__ = None  # make ``ndarray @ Affine`` dispatch to __rmatmul__

    def __init__(self, const, coef):
        self.const = np.asarray(const, dtype=float)
        self.coef = np.asarray(coef, dtype=float)
        if self.const.ndim != 2 or self.coef.shape[1:] != self.const.shape:
            raise SDPInputError("coefficient shapes do not match the constant")

    @property
    def shape(self):
        return self.const.shape

    @staticmethod
    def constant(M) -> "Affine":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Affine(M, np.zeros((0,) + M.shape))

    @staticmethod
    def lift(x) -> "Affine":
        return x if isinstance(x, Affine) else Affine.constant(x)

    def _padded(self, n):
        if self.coef.shape[0] == n:
            return self.coef
        out = np.zeros((n,) + self.shape)
        out[: self.coef.shape[0]] = self.coef
        return out

    def __add__(self, other):
        other = Affine.lift(other)
        if other.shape != self.shape:
            raise SDPInputError(f"shape mismatch {self.shape} + {other.shape}")
        n = max(self.coef.shape[0], other.coef.shape[0])
        return Affine(self.const + other.const, self._padded(n) + other._padded(n))

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, -self.coef)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) - self

    def __mul__(self, a):
        if isinstance(a, Affine):
            raise SDPInputError("product of two decision expressions is not affine")
        if np.ndim(a) == 0:
            return Affine(a * self.const, a * self.coef)
        if self.shape != (1, 1):
            raise SDPInputError("only a scalar expression can scale a constant matrix")
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return Affine(self.const[0, 0] * a, self.coef[:, 0, 0, None, None] * a)

    __rmul__ = __mul__

    def __matmul__(self, R):
        if isinstance(R, Affine):
            raise SDPInputError("product of two decision expressions is not affine")
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape[0] != self.shape[1]:
            raise SDPInputError(f"shape mismatch {self.shape} @ {R.shape}")
        return Affine(self.const @ R, self.coef @ R)

    def __rmatmul__(self, L):
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape[1] != self.shape[0]:
            raise SDPInputError(f"shape mismatch {L.shape} @ {self.shape}")
        return Affine(L @ self.const, np.einsum("rp,npq->nrq", L, self.coef))

    @property
    def T(self):
        return Affine(self.const.T, self.coef.transpose(0, 2, 1))

    def sym(self):
        """``X + Xᵀ``."""
        return self + self.T

    def evaluate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        n = self.coef.shape[0]
        return self.const + np.tensordot(z[:n], self.coef, axes=1)

    def is_symmetric(self, tol=0.0) -> bool:
        return (np.abs(self.const - self.const.T).max(initial=0.0) <= tol
                and np.abs(self.coef - self.coef.transpose(0, 2, 1)).max(initial=0.0) <= tol)


def bmat(blocks) -> Affine:
    """Assemble a block matrix; ``None`` entries become zero blocks."""
    rows = [[Affine.lift(b) if b is not None else None for b in row] for row in blocks]
    heights = [next(b.shape[0] for b in row if b is not None) for row in rows]
    widths = [next(rows[i][j].shape[1] for i in range(len(rows)) if rows[i][j] is not None)
              for j in range(len(rows[0]))]
    n = max(b.coef.shape[0] for row in rows for b in row if b is not None)
    const = np.zeros((sum(heights), sum(widths)))
    coef = np.zeros((n,) + const.shape)
    r0 = 0
    for i, row in enumerate(rows):
        c0 = 0
        for j, b in enumerate(row):
            if b is not None:
                if b.shape != (heights[i], widths[j]):
                    raise SDPInputError(f"block ({i},{j}) has shape {b.shape}, expected {(heights[i], widths[j])}")
                const[r0:r0 + heights[i], c0:c0 + widths[j]] = b.const
                coef[:b.coef.shape[0], r0:r0 + heights[i], c0:c0 + widths[j]] = b.coef
            c0 += widths[j]
        r0 += heights[i]
    return Affine(const, coef)


@dataclass
class _Var:
    name: str
    kind: str
    shape: tuple[int, int]
    offset: int
    size: int


@dataclass
class Constraint:
    expr: Affine
    name: str


@dataclass
class LMIProblem:
    """Decision variables, strict LMI constraints ``expr ≻ 0`` and a linear objective."""

    variables: list[_Var] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: Affine | None = None
    bound: float = 1e6  # box |z_m| <= bound keeps every sublevel set compact

    @property
    def n(self) -> int:
        return sum(v.size for v in self.variables)

    def _declare(self, name, kind, shape, basis):
        if any(v.name == name for v in self.variables):
            raise SDPInputError(f"variable {name!r} declared twice")
        off = self.n
        size = len(basis)
        self.variables.append(_Var(name, kind, shape, off, size))
        coef = np.zeros((off + size,) + shape)
        for k, B in enumerate(basis):
            coef[off + k] = B
        return Affine(np.zeros(shape), coef)

    def scalar(self, name: str) -> Affine:
        return self._declare(name, "scalar", (1, 1), [np.ones((1, 1))])

    def symmetric(self, name: str, n: int) -> Affine:
        basis = []
        for a in range(n):
            for b in range(a, n):
                E = np.zeros((n, n))
                E[a, b] = E[b, a] = 1.0
                basis.append(E)
        return self._declare(name, "symmetric", (n, n), basis)

    def matrix(self, name: str, m: int, n: int) -> Affine:
        basis = []
        for a in range(m):
            for b in range(n):
                E = np.zeros((m, n))
                E[a, b] = 1.0
                basis.append(E)
        return self._declare(name, "matrix", (m, n), basis)

    def add_pd(self, expr: Affine, name: str | None = None) -> None:
        expr = Affine.lift(expr)
        if expr.shape[0] != expr.shape[1] or not expr.is_symmetric(1e-12 * max(1.0, np.abs(expr.coef).max(initial=0.0))):
            raise SDPInputError(f"constraint {name or len(self.constraints)} is not symmetric")
        self.constraints.append(Constraint(expr, name or f"c{len(self.constraints)}"))

    def add_nd(self, expr: Affine, name: str | None = None) -> None:
        self.add_pd(-Affine.lift(expr), name)

    def minimize(self, expr: Affine) -> None:
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise SDPInputError("objective must be scalar")
        self.objective = expr

    def unpack(self, z) -> dict[str, np.ndarray | float]:
        out = {}
        for v in self.variables:
            seg = np.asarray(z[v.offset:v.offset + v.size], dtype=float)
            if v.kind == "scalar":
                out[v.name] = float(seg[0])
            elif v.kind == "symmetric":
                n = v.shape[0]
                S = np.zeros((n, n))
                S[np.triu_indices(n)] = seg
                out[v.name] = S + np.triu(S, 1).T
            else:
                out[v.name] = seg.reshape(v.shape)
        return out

    def pack(self, assignment: dict) -> np.ndarray:
        z = np.zeros(self.n)
        for v in self.variables:
            val = np.atleast_2d(np.asarray(assignment[v.name], dtype=float))
            if v.kind == "scalar":
                z[v.offset] = val[0, 0]
            elif v.kind == "symmetric":
                z[v.offset:v.offset + v.size] = val[np.triu_indices(v.shape[0])]
            else:
                z[v.offset:v.offset + v.size] = val.reshape(-1)
        return z

    def dump(self) -> str:
        """Plain-text listing of variables and constraint sizes for debugging."""
        lines = [f"variables {len(self.variables)} (dim {self.n}), bound {self.bound:g}"]
        lines += [f"  {v.name}: {v.kind} {v.shape[0]}x{v.shape[1]} @ {v.offset}" for v in self.variables]
        lines.append(f"constraints {len(self.constraints)}")
        for c in self.constraints:
            nz = int(np.count_nonzero(np.abs(c.expr.coef).reshape(c.expr.coef.shape[0], -1).max(axis=1)))
            lines.append(f"  {c.name}: {c.expr.shape[0]}x{c.expr.shape[0]} depends on {nz} coordinates")
        if self.objective is not None:
            lines.append("objective " + " ".join(f"{x:+.6g}" for x in self.objective.coef[:, 0, 0] if x))
        return "\n".join(lines)


@dataclass
class SolverOptions:
    tolerance: float = 1e-7
    max_iters: int = 400
    margin: float = 1e-7  # strictness margin on normalized constraints
    mu: float = 20.0
    # phase 2 stops with status "above_target" once the certified lower bound
    # on the objective exceeds this value
    abandon_above: float | None = None


@dataclass
class SDPResult:
    status: str  # "feasible" | "infeasible" | "maxiter" | "above_target"
    objective: float
    z: np.ndarray | None
    assignment: dict | None
    phase1_margin: float  # best attained min-eigenvalue shift (normalized); < 0 means infeasible
    iterations: int


@dataclass
class _Block:
    F0: np.ndarray
    F: np.ndarray  # (n, d, d)


def _normalized_blocks(problem: LMIProblem, n: int) -> list[_Block]:
    blocks = []
    for c in problem.constraints:
        F = c.expr._padded(n)
        scale = max(np.abs(F).max(initial=0.0), np.abs(c.expr.const).max(initial=0.0))
        if scale == 0.0:
            scale = 1.0
        blocks.append(_Block(c.expr.const / scale, F / scale))
    return blocks


class _Barrier:
    """``-Σ log det(F0 + Σ z_m F_m) - Σ log(bound² - z_m²)`` with derivatives.

    Blocks of equal size are stacked so each evaluation is a handful of
    batched numpy calls.
    """

    def __init__(self, blocks: list[_Block], n: int, bound: float):
        self.blocks = blocks
        self.n = n
        self.bound = bound
        self.m = sum(b.F0.shape[0] for b in blocks) + 2 * n
        groups: dict[int, list[_Block]] = {}
        for b in blocks:
            groups.setdefault(b.F0.shape[0], []).append(b)
        # per size d: F0 stack (k, d, d) and F stack (k, n, d, d)
        self.groups = [(np.stack([b.F0 for b in bs]), np.stack([b.F for b in bs]))
                       for bs in groups.values()]

    def _factor(self, z):
        out = []
        for F0, F in self.groups:
            G = F0 + np.einsum("m,kmij->kij", z, F)
            out.append(np.linalg.cholesky(G))
        return out

    def value(self, z):
        if np.any(np.abs(z) >= self.bound):
            return np.inf
        total = -np.sum(np.log(self.bound - z) + np.log(self.bound + z))
        try:
            Ls = self._factor(z)
        except np.linalg.LinAlgError:
            return np.inf
        for L in Ls:
            d = np.diagonal(L, axis1=1, axis2=2)
            if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
                return np.inf
            total -= 2.0 * np.sum(np.log(d))
        return total

    def derivatives(self, z):
        n = self.n
        g = 1.0 / (self.bound - z) - 1.0 / (self.bound + z)
        H = np.diag(1.0 / (self.bound - z) ** 2 + 1.0 / (self.bound + z) ** 2)
        self._inv = []
        for (F0, F), L in zip(self.groups, self._factor(z)):
            k, _, d, _ = F.shape
            Li = np.linalg.inv(L)
            self._inv.append(Li)
            W = np.einsum("kab,kmbc,kdc->kmad", Li, F, Li, optimize=True)  # L⁻¹ F_m L⁻ᵀ
            g -= np.einsum("kmaa->m", W)
            Wf = W.reshape(k, n, d * d)
            H += np.einsum("kmi,kpi->mp", Wf, Wf, optimize=True)
        return g, H

    def max_step(self, z, dz):
        """Largest ``a`` keeping ``z + a·dz`` in the domain (uses the last derivative point)."""
        a = np.inf
        for (F0, F), Li in zip(self.groups, self._inv):
            D = np.einsum("kab,kbc,kdc->kad", Li, np.einsum("m,kmij->kij", dz, F), Li)
            lo = np.linalg.eigvalsh(D)[:, 0].min()
            if lo < 0:
                a = min(a, -1.0 / lo)
        pos, neg = dz > 0, dz < 0
        if pos.any():
            a = min(a, ((self.bound - z[pos]) / dz[pos]).min())
        if neg.any():
            a = min(a, ((-self.bound - z[neg]) / dz[neg]).min())
        return a


def _center(barrier: _Barrier, c, t, z, max_steps, stop=None):
    """Damped Newton on ``t·cᵀz + barrier(z)``; returns (z, steps, stopped_early)."""
    f = t * c @ z + barrier.value(z)
    steps = 0
    for _ in range(max_steps):
        if stop is not None and stop(z):
            return z, steps, True
        g, H = barrier.derivatives(z)
        g = g + t * c
        try:
            dz = -cho_solve(cho_factor(H, check_finite=False), g, check_finite=False)
        except LinAlgError:
            dz = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec = -g @ dz
        if dec / 2.0 <= 1e-8 * max(1.0, abs(f)):
            break
        a = min(1.0, 0.99 * barrier.max_step(z, dz))
        while True:
            z_new = z + a * dz
            f_new = t * c @ z_new + barrier.value(z_new)
            if f_new <= f - 0.25 * a * dec:
                break
            a *= 0.5
            if a < 1e-9:
                return z, steps, False
        z, f = z_new, f_new
        steps += 1
    return z, steps, False


def solve(problem: LMIProblem, options: SolverOptions | None = None) -> SDPResult:
    opt = options or SolverOptions()
    n = problem.n
    if n == 0:
        raise SDPInputError("problem has no decision variables")
    for c in problem.constraints:
        if c.expr.coef.shape[0] > n:
            raise SDPInputError(f"constraint {c.name} references undeclared variables")
    blocks = _normalized_blocks(problem, n)
    iters = 0

    # phase 1: variables (z, s); minimize s with F_k(z) + s I >= 0 and s >= -1
    eye_blocks = [_Block(b.F0, np.concatenate([b.F, np.eye(b.F0.shape[0])[None]], axis=0)) for b in blocks]
    eye_blocks.append(_Block(np.ones((1, 1)), np.concatenate([np.zeros((n, 1, 1)), np.ones((1, 1, 1))])))
    z0 = np.zeros(n)
    worst = max((-np.linalg.eigvalsh(b.F0)[0] for b in blocks), default=-1.0)
    s0 = max(worst, 0.0) + 1.0
    w = np.append(z0, s0)
    b1 = _Barrier(eye_blocks, n + 1, max(problem.bound, 10.0 * s0))
    c1 = np.zeros(n + 1)
    c1[-1] = 1.0
    t = 1.0
    feasible = False
    while iters < opt.max_iters:
        w, k, _ = _center(b1, c1, t, w, 100)
        iters += k + 1
        if w[-1] < -opt.margin:
            feasible = True
            break
        gap = b1.m / t
        if w[-1] - gap > -opt.margin:
            return SDPResult("infeasible", np.nan, None, None, float(-w[-1]), iters)
        t *= opt.mu
    if not feasible:
        return SDPResult("maxiter", np.nan, None, None, float(-w[-1]), iters)
    phase1_margin = float(-w[-1])
    z = w[:n]

    # phase 2: central path on the margin-shifted constraints
    shifted = [_Block(b.F0 - opt.margin * np.eye(b.F0.shape[0]), b.F) for b in blocks]
    b2 = _Barrier(shifted, n, problem.bound)
    if problem.objective is None:
        return SDPResult("feasible", 0.0, z, problem.unpack(z), phase1_margin, iters)
    c = problem.objective._padded(n)[:, 0, 0]
    obj_const = float(problem.objective.const[0, 0])
    cscale = max(np.abs(c).max(), 1e-300)
    c_n = c / cscale
    t = 1.0
    status = "maxiter"
    while iters < opt.max_iters:
        z, k, _ = _center(b2, c_n, t, z, 100)
        iters += k + 1
        obj = c @ z + obj_const
        gap = b2.m / t * cscale
        if gap <= opt.tolerance * max(1.0, abs(obj)):
            status = "feasible"
            break
        if opt.abandon_above is not None and obj - gap > opt.abandon_above:
            status = "above_target"
            break
        t *= opt.mu
    # a strictly feasible iterate is still a valid answer at maxiter; report it
    return SDPResult(status, float(c @ z + obj_const), z, problem.unpack(z), phase1_margin, iters)


@dataclass
class VerifyReport:
    min_eigs: list[float]
    names: list[str]
    violated: list[int]

    @property
    def ok(self) -> bool:
        return not self.violated


def verify(assignment: dict, problem: LMIProblem, margin: float = 0.0) -> VerifyReport:
    """Evaluate every constraint at ``assignment`` and check its smallest eigenvalue.

    Uses a symmetric eigensolver on the assembled matrices; shares nothing with
    the barrier iterations.
    """
    z = problem.pack(assignment)
    eigs, names, bad = [], [], []
    for k, c in enumerate(problem.constraints):
        M = c.expr.evaluate(z)
        lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        eigs.append(lam)
        names.append(c.name)
        if lam < -margin:
            bad.append(k)
    return VerifyReport(eigs, names, bad)
