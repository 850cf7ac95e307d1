"""Two-level Schwarz preconditioners and left-preconditioned GMRES.

The fine level is non-overlapping: subdomain i owns the DoFs of its elements
and A_i is the corresponding diagonal block of A. The coarse level uses, on
every coarse element, polynomials of the lowest degree found among its fine
elements, written in the fine basis through the restriction matrix R_0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discretization import BlockSparseMatrix, STDGSpace
from .partition import DecompPlan
from .quadrature import monomials, poly_dim, ref_basis, triangle_rule
from .sparse_lu import FactorStats, SparseLU


class PreconditionerStateError(RuntimeError):
    pass


class GMRESError(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


@dataclass
class Restriction:
    kind: str  # "boolean" or "coarse"
    n_fine: int
    indices: np.ndarray | None = None
    matrix: sp.csr_matrix | None = None
    offsets: np.ndarray | None = None  # coarse block layout

    @property
    def size(self) -> int:
        return len(self.indices) if self.kind == "boolean" else self.matrix.shape[0]

    def restrict(self, x: np.ndarray) -> np.ndarray:
        return x[self.indices] if self.kind == "boolean" else self.matrix @ x

    def prolong(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "boolean":
            out = np.zeros(self.n_fine)
            out[self.indices] = y
            return out
        return self.matrix.T @ y

    def as_matrix(self) -> sp.csr_matrix:
        if self.kind == "coarse":
            return self.matrix
        m = len(self.indices)
        return sp.csr_matrix((np.ones(m), (np.arange(m), self.indices)), shape=(m, self.n_fine))


def subdomain_restrictions(space: STDGSpace, plan: DecompPlan) -> list[Restriction]:
    out = []
    for i in range(plan.M):
        elems = plan.subdomain_elements(i)
        out.append(Restriction("boolean", space.dim, indices=space.element_dofs(elems)))
    return out


def coarse_degrees(space: STDGSpace, plan: DecompPlan) -> np.ndarray:
    deg = np.full(plan.n_coarse, np.iinfo(np.int64).max)
    np.minimum.at(deg, plan.coarse_of, space.mesh.degree)
    return deg


def coarse_dim(space: STDGSpace, plan: DecompPlan) -> int:
    return int(space.n * (space.q + 1) * poly_dim(coarse_degrees(space, plan)).sum())


def build_coarse_restriction(space: STDGSpace, plan: DecompPlan) -> Restriction:
    """R_0 with rows = coarse basis functions expanded in the fine orthonormal basis."""
    if plan.coarse_of is None:
        raise ValueError("plan has no coarse split")
    mesh = space.mesh
    nq1, n = space.q + 1, space.n
    cof = plan.coarse_of
    qc = coarse_degrees(space, plan)
    dc = poly_dim(qc)
    c_off = np.r_[0, np.cumsum(n * nq1 * dc)].astype(np.int64)

    # bounding boxes of the coarse elements
    verts = mesh.vertices[mesh.triangles]
    lo = np.full((plan.n_coarse, 2), np.inf)
    hi = np.full((plan.n_coarse, 2), -np.inf)
    np.minimum.at(lo, cof, verts.min(axis=1))
    np.maximum.at(hi, cof, verts.max(axis=1))
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    rows, cols, vals = [], [], []
    deg = mesh.degree
    for p in np.unique(deg):
        for qq in np.unique(qc[cof[deg == p]]):
            elems = np.flatnonzero((deg == p) & (qc[cof] == qq))
            pts, wts = triangle_rule(int(p + qq))
            phi_ref, _ = ref_basis(pts, int(p))
            det = np.abs(space.det[elems])
            phi = phi_ref[None] / np.sqrt(det)[:, None, None]
            v0 = verts[elems, 0]
            x = v0[:, None, :] + np.einsum("eab,qb->eqa", space.jacobians[elems], pts)
            c = cof[elems]
            xs = (x - center[c][:, None, :]) / half[c][:, None, :]
            mono, _ = monomials(xs, int(qq))
            C = np.einsum("eq,eqa,eqi->eai", wts[None] * det[:, None], mono, phi)
            d, dq = poly_dim(int(p)), poly_dim(int(qq))
            a, i = np.meshgrid(np.arange(dq), np.arange(d), indexing="ij")
            for kj in range(n * nq1):
                r = c_off[c][:, None, None] + kj * dq + a[None]
                cc = space.offsets[elems][:, None, None] + kj * d + i[None]
                rows.append(np.broadcast_to(r, C.shape).ravel())
                cols.append(np.broadcast_to(cc, C.shape).ravel())
                vals.append(C.ravel())
    R0 = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(int(c_off[-1]), space.dim),
    )
    return Restriction("coarse", space.dim, matrix=R0, offsets=c_off)


def galerkin_coarse(A, R0: Restriction) -> sp.csr_matrix:
    """A_0 = R_0 A R_0^T."""
    Acsr = A.csr if isinstance(A, BlockSparseMatrix) else sp.csr_matrix(A)
    R = R0.as_matrix()
    return (R @ Acsr @ R.T).tocsr()


@dataclass
class FlopLedger:
    """Per-system counters; index 0 is the coarse system, 1..M the subdomains."""

    sizes: np.ndarray
    flfac: np.ndarray
    flass: np.ndarray
    factor_times: np.ndarray
    solve_times: np.ndarray
    n_factorizations: int = 0
    n_applies: int = 0


class TwoLevelPreconditioner:
    def __init__(self, space: STDGSpace, plan: DecompPlan, mode: str = "hybrid",
                 coarse: bool = True, repeats: int = 0):
        if mode not in ("additive", "hybrid"):
            raise ValueError(f"unknown preconditioner mode {mode!r}")
        self.space = space
        self.plan = plan
        self.mode = mode
        self.repeats = repeats
        self.locals = subdomain_restrictions(space, plan)
        self.R0 = build_coarse_restriction(space, plan) if coarse else None
        self._local_offsets = []
        for i in range(plan.M):
            bs = space.block_sizes[plan.subdomain_elements(i)]
            self._local_offsets.append(np.r_[0, np.cumsum(bs)])
        self.A = None
        self.A0 = None
        self.factors: list[SparseLU | None] = []
        self.ledger: FlopLedger | None = None
        self._n_factorizations = 0
        self._n_applies = 0

    @property
    def coarse_size(self) -> int:
        return 0 if self.R0 is None else self.R0.size

    def factorize(self, A) -> list[FactorStats]:
        Acsr = A.csr if isinstance(A, BlockSparseMatrix) else sp.csr_matrix(A)
        self.A = Acsr
        factors: list[SparseLU | None] = [None]
        if self.R0 is not None:
            self.A0 = galerkin_coarse(Acsr, self.R0)
            factors[0] = SparseLU(self.A0, self.R0.offsets, name="A_0 (coarse)", repeats=self.repeats)
        for i, R in enumerate(self.locals, start=1):
            Ai = Acsr[R.indices][:, R.indices]
            factors.append(SparseLU(Ai, self._local_offsets[i - 1], name=f"A_{i}", repeats=self.repeats))
        self.factors = factors
        self._n_factorizations += 1
        stats = [f.stats if f is not None else None for f in factors]

        def col(get):
            return np.array([get(s) if s is not None else 0.0 for s in stats])

        self.ledger = FlopLedger(
            sizes=col(lambda s: s.size),
            flfac=col(lambda s: s.flops_factor),
            flass=col(lambda s: s.flops_solve),
            factor_times=col(lambda s: float(np.median(s.factor_times)) if s.factor_times else 0.0),
            solve_times=col(lambda s: float(np.median(s.solve_times)) if s.solve_times else 0.0),
            n_factorizations=self._n_factorizations,
            n_applies=self._n_applies,
        )
        return stats

    def _check(self):
        if not self.factors:
            raise PreconditionerStateError("preconditioner used before factorize()")

    def _local_sum(self, x: np.ndarray) -> np.ndarray:
        y = np.zeros_like(x, dtype=float)
        for R, f in zip(self.locals, self.factors[1:]):
            y[R.indices] += f.solve(x[R.indices])
        return y

    def _coarse(self, x: np.ndarray) -> np.ndarray:
        return self.R0.prolong(self.factors[0].solve(self.R0.restrict(x)))

    def _count(self):
        self._n_applies += 1
        self.ledger.n_applies = self._n_applies

    def apply_additive(self, x: np.ndarray) -> np.ndarray:
        self._check()
        u = self._local_sum(x)
        if self.R0 is not None:
            u += self._coarse(x)
        self._count()
        return u

    def apply_hybrid(self, x: np.ndarray) -> np.ndarray:
        self._check()
        y = self._local_sum(x)
        if self.R0 is None:
            self._count()
            return y
        z = x - self.A @ y
        self._count()
        return y + self._coarse(z)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.apply_hybrid(x) if self.mode == "hybrid" else self.apply_additive(x)

    __call__ = apply


class IdentityPreconditioner:
    def factorize(self, A):
        return []

    def apply(self, x):
        return np.array(x, dtype=float)

    __call__ = apply


@dataclass
class GMRESResult:
    x: np.ndarray
    iters: int
    history: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "relative_preconditioned_residual"])
            for k, r in enumerate(self.history):
                w.writerow([k, f"{r:.5e}"])


def gmres(A, precond, rhs: np.ndarray, C_L: float = 1e-4, max_iter: int = 500) -> GMRESResult:
    """Full GMRES on N^{-1} A x = N^{-1} b from x = 0.

    Stops once ||N^{-1}(b - A x_k)|| <= C_L ||N^{-1} b||; the Givens residual
    estimate is exact for this quantity in exact arithmetic.
    """
    if not 0.0 < C_L < 1.0:
        raise ValueError("C_L must lie in (0, 1)")
    op = A.csr if isinstance(A, BlockSparseMatrix) else A
    b = np.asarray(rhs, dtype=float)
    N = b.size
    r0 = precond(b)
    beta = float(np.linalg.norm(r0))
    history = [1.0]
    if beta == 0.0:
        return GMRESResult(np.zeros(N), 0, history)
    m = min(max_iter, N)
    V = np.zeros((m + 1, N))
    H = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta
    k = 0
    converged = False
    for k in range(m):
        w = precond(op @ V[k])
        for j in range(k + 1):
            H[j, k] = V[j] @ w
            w -= H[j, k] * V[j]
        H[k + 1, k] = np.linalg.norm(w)
        breakdown = H[k + 1, k] <= 1e-14 * beta
        if not breakdown:
            V[k + 1] = w / H[k + 1, k]
        for j in range(k):
            t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
            H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
            H[j, k] = t
        rho = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = H[k, k] / rho, H[k + 1, k] / rho
        H[k, k], H[k + 1, k] = rho, 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        history.append(abs(g[k + 1]) / beta)
        if history[-1] <= C_L or breakdown:
            converged = True
            break
    iters = k + 1
    y = np.linalg.solve(np.triu(H[:iters, :iters]), g[:iters])
    x = V[:iters].T @ y
    if not converged:
        raise GMRESError(f"GMRES did not reach {C_L:g} in {iters} iterations "
                         f"(last relative residual {history[-1]:.3e})", history)
    return GMRESResult(x, iters, history)


class SchwarzSolver:
    """Linear-solver handle for Newton: keeps a factorized preconditioner and solves A d = F."""

    def __init__(self, precond, C_L: float = 1e-4, max_iter: int = 500):
        self.precond = precond
        self.C_L = C_L
        self.max_iter = max_iter
        self.A = None
        self.solves: list[GMRESResult] = []

    def refresh(self, A) -> None:
        self.A = A
        self.precond.factorize(A)

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, int]:
        res = gmres(self.A, self.precond, rhs, self.C_L, self.max_iter)
        self.solves.append(res)
        return res.x, res.iters
