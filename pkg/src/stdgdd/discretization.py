"""Space-time DG discretization of a scalar viscous convection-diffusion model.

Unknowns of one time slab are stored element by element; inside an element
the local index is ``(k * (q + 1) + j) * d_K + i`` for component k, temporal
mode j and spatial mode i. Spatial bases are L2-orthonormal on every physical
element, temporal bases are orthonormal Legendre polynomials on the slab.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, clip_convex, same_mesh
from .quadrature import (
    gauss_interval,
    interval_points_for_degree,
    legendre_interval,
    poly_dim,
    ref_basis,
    triangle_rule,
)

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def dof_count(mesh: TriMesh, q: int, n: int = 1) -> int:
    if q < 0 or n < 1:
        raise ValueError("need q >= 0 and n >= 1")
    p = mesh.degree
    return int((q + 1) * n * np.sum((p + 1) * (p + 2) // 2))


class Flux:
    """Convective flux f(u) = (f1(u), f2(u))."""

    def f(self, u):
        raise NotImplementedError

    def df(self, u):
        raise NotImplementedError

    def d2f(self, u):
        raise NotImplementedError


class BurgersFlux(Flux):
    """f(u) = (u^2/2, u^2/2)."""

    def f(self, u):
        v = 0.5 * u * u
        return np.stack([v, v], axis=-1)

    def df(self, u):
        return np.stack([u, u], axis=-1)

    def d2f(self, u):
        one = np.ones_like(u)
        return np.stack([one, one], axis=-1)


@dataclass
class LinearFlux(Flux):
    """f(u) = (c1 u, c2 u)."""

    velocity: tuple[float, float] = (1.0, 1.0)

    def f(self, u):
        c = np.asarray(self.velocity, dtype=float)
        return u[..., None] * c

    def df(self, u):
        return np.broadcast_to(np.asarray(self.velocity, dtype=float), u.shape + (2,))

    def d2f(self, u):
        return np.zeros(u.shape + (2,))


class NoFlux(Flux):
    def f(self, u):
        return np.zeros(u.shape + (2,))

    def df(self, u):
        return np.zeros(u.shape + (2,))

    def d2f(self, u):
        return np.zeros(u.shape + (2,))


def _zero(x, y, t):
    return np.zeros(np.broadcast(x, y, t).shape)


@dataclass
class ModelProblem:
    """u_t + div f(u) - eps * lap(u) = g with Dirichlet data on the whole boundary."""

    eps: float = 0.05
    flux: Flux = field(default_factory=BurgersFlux)
    source: Callable = _zero
    dirichlet: Callable = _zero
    C_W: float = 20.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.C_W <= 0:
            raise ValueError("C_W must be positive")

    @property
    def is_linear(self) -> bool:
        return not isinstance(self.flux, BurgersFlux)


class STDGSpace:
    """Discontinuous piecewise polynomial space on one time slab."""

    def __init__(self, mesh: TriMesh, q: int = 1, n: int = 1):
        if q < 0 or n < 1:
            raise ValueError("need q >= 0 and n >= 1")
        self.mesh = mesh
        self.q = q
        self.n = n
        self.spatial_dims = (mesh.degree + 1) * (mesh.degree + 2) // 2
        self.block_sizes = n * (q + 1) * self.spatial_dims
        self.offsets = np.r_[0, np.cumsum(self.block_sizes)].astype(np.int64)
        self.trace_offsets = np.r_[0, np.cumsum(n * self.spatial_dims)].astype(np.int64)

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    @property
    def trace_dim(self) -> int:
        return int(self.trace_offsets[-1])

    @cached_property
    def jacobians(self) -> np.ndarray:
        v = self.mesh.vertices[self.mesh.triangles]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)

    @cached_property
    def det(self) -> np.ndarray:
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def inv_t(self) -> np.ndarray:
        return np.transpose(np.linalg.inv(self.jacobians), (0, 2, 1))

    @cached_property
    def degree_groups(self) -> dict[int, np.ndarray]:
        deg = self.mesh.degree
        return {int(p): np.flatnonzero(deg == p) for p in np.unique(deg)}

    def to_reference(self, elems: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Map physical points (..., 2) in elements `elems` to reference coordinates."""
        v0 = self.mesh.vertices[self.mesh.triangles[elems, 0]]
        inv = np.linalg.inv(self.jacobians[elems])
        return np.einsum("...ab,...b->...a", inv, pts - v0)

    def element_dofs(self, elems) -> np.ndarray:
        elems = np.atleast_1d(elems)
        return np.concatenate([np.arange(self.offsets[e], self.offsets[e + 1]) for e in elems])

    def quad_degree(self, p: int) -> int:
        return max(2 * p + self.q + 2, 3 * p)


def _volume_tables(space: STDGSpace, p: int, elems: np.ndarray):
    pts, wts = triangle_rule(space.quad_degree(p))
    phi_ref, dphi_ref = ref_basis(pts, p)
    det = np.abs(space.det[elems])
    scale = 1.0 / np.sqrt(det)
    phi = phi_ref[None] * scale[:, None, None]
    dphi = np.einsum("eab,qib->eqia", space.inv_t[elems], dphi_ref) * scale[:, None, None, None]
    wq = wts[None] * det[:, None]
    v0 = space.mesh.vertices[space.mesh.triangles[elems, 0]]
    x = v0[:, None, :] + np.einsum("eab,qb->eqa", space.jacobians[elems], pts)
    return phi, dphi, wq, x


def _edge_ref_points(local_edge: int, s: np.ndarray) -> np.ndarray:
    a = REF_VERTICES[local_edge]
    b = REF_VERTICES[(local_edge + 1) % 3]
    return a[None] + s[:, None] * (b - a)[None]


def _edge_trace(space: STDGSpace, p: int, elems: np.ndarray, local: np.ndarray, s: np.ndarray, normal: np.ndarray):
    """Basis values and normal derivatives on edges: (f, nq, d) each."""
    d = poly_dim(p)
    phi_ref = np.empty((3, s.size, d))
    dphi_ref = np.empty((3, s.size, d, 2))
    for le in range(3):
        phi_ref[le], dphi_ref[le] = ref_basis(_edge_ref_points(le, s), p)
    scale = 1.0 / np.sqrt(np.abs(space.det[elems]))
    phi = phi_ref[local] * scale[:, None, None]
    grad = np.einsum("fab,fqib->fqia", space.inv_t[elems], dphi_ref[local])
    dn = np.einsum("fqia,fa->fqi", grad, normal) * scale[:, None, None]
    return phi, dn


@dataclass
class BlockSparseMatrix:
    """Element-block sparse matrix: a diagonal block per element plus edge-neighbour blocks."""

    csr: sp.csr_matrix
    offsets: np.ndarray
    pairs: np.ndarray

    @property
    def shape(self):
        return self.csr.shape

    @property
    def n_blocks(self) -> int:
        return len(self.pairs)

    def block(self, k: int, l: int) -> np.ndarray:
        o = self.offsets
        return self.csr[o[k]:o[k + 1], o[l]:o[l + 1]].toarray()

    def block_pattern(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pairs}

    def __matmul__(self, x):
        return self.csr @ x

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def write_matrix_market(self, path) -> None:
        import scipy.io

        scipy.io.mmwrite(str(path), self.csr)


def _check_dims(space: STDGSpace, W: np.ndarray, prev: np.ndarray | None):
    if space.n != 1:
        raise ValueError("assembly supports a single solution component (n = 1)")
    if W.shape != (space.dim,):
        raise ValueError(f"coefficient vector has size {W.shape}, space has dimension {space.dim}")
    if prev is not None and prev.shape != (space.trace_dim,):
        raise ValueError(f"previous trace has size {prev.shape}, expected {space.trace_dim}")


def _slab_time_data(q: int):
    t, w, L, dL, L0, L1 = legendre_interval(q)
    T = np.einsum("t,tj,tk->kj", w, dL, L)
    return t, w, L, T, L0


def _assemble(space: STDGSpace, problem: ModelProblem, W, prev, tau: float, t0: float, residual: bool, jacobian: bool):
    W = np.asarray(W, dtype=float)
    if prev is not None:
        prev = np.asarray(prev, dtype=float)
    _check_dims(space, W, prev)
    if tau <= 0:
        raise ValueError("tau must be positive")
    mesh = space.mesh
    q = space.q
    nq1 = q + 1
    eps = problem.eps
    flux = problem.flux
    tt, wt, Lt, Tm, L0 = _slab_time_data(q)
    times = t0 + tau * tt
    off = space.offsets
    F = np.zeros(space.dim) if residual else None

    diag: dict[int, np.ndarray] = {}
    pos = np.empty(mesh.n_elements, dtype=np.int64)
    rows, cols, vals, pairs = [], [], [], []

    def local_coeffs(elems, d):
        idx = off[elems][:, None] + np.arange(nq1 * d)[None]
        return W[idx].reshape(len(elems), nq1, d)

    # volume and slab-coupling terms
    for p, elems in space.degree_groups.items():
        d = poly_dim(p)
        pos[elems] = np.arange(elems.size)
        phi, dphi, wq, x = _volume_tables(space, p, elems)
        Wl = local_coeffs(elems, d)
        U = np.einsum("tj,eji->eti", Lt, Wl)
        w = np.einsum("eti,eqi->etq", U, phi)
        gw = np.einsum("eti,eqia->etqa", U, dphi)
        if residual:
            fl = flux.f(w)
            G = -fl + eps * gw
            g = problem.source(x[:, None, :, 0], x[:, None, :, 1], times[None, :, None])
            r = tau * (
                np.einsum("t,tk,eq,etqa,eqia->eki", wt, Lt, wq, G, dphi, optimize=True)
                - np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, wq, g, phi, optimize=True)
            )
            r += np.einsum("kj,eji->eki", Tm, Wl)
            start = np.einsum("j,eji->ei", L0, Wl)
            pr = prev[space.trace_offsets[elems][:, None] + np.arange(d)[None]]
            r += L0[None, :, None] * (start - pr)[:, None, :]
            idx = off[elems][:, None] + np.arange(nq1 * d)[None]
            F[idx] += r.reshape(len(elems), -1)
        if jacobian:
            fp = flux.df(w)
            C = np.einsum("eq,etqa,eqia,eqm->etim", wq, fp, dphi, phi, optimize=True)
            K = eps * np.einsum("eq,eqma,eqia->eim", wq, dphi, dphi, optimize=True)
            LL = np.einsum("t,tk,tj->tkj", wt, Lt, Lt)
            blk = -tau * np.einsum("tkj,etim->ekijm", LL, C, optimize=True)
            blk += tau * np.einsum("kj,eim->ekijm", LL.sum(0), K)
            blk += np.einsum("kj,im->kijm", Tm + np.outer(L0, L0), np.eye(d))[None]
            diag[p] = blk.reshape(len(elems), nq1 * d, nq1 * d)

    # interior faces
    E = mesh.edge_elements
    EL = mesh.edge_local
    verts = mesh.vertices[mesh.edges]
    tangent = verts[:, 1] - verts[:, 0]
    length = np.hypot(tangent[:, 0], tangent[:, 1])
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]
    deg = mesh.degree
    inner = mesh.interior_edges
    bnd = mesh.boundary_edges

    pairs_deg = np.column_stack([deg[E[inner, 0]], deg[E[inner, 1]]]) if inner.size else np.zeros((0, 2), int)
    for pL, pR in sorted({(int(a), int(b)) for a, b in pairs_deg}):
        faces = inner[(pairs_deg[:, 0] == pL) & (pairs_deg[:, 1] == pR)]
        dL, dR = poly_dim(pL), poly_dim(pR)
        s, ws = gauss_interval(interval_points_for_degree(max(space.quad_degree(pL), space.quad_degree(pR))))
        eL, eR = E[faces, 0], E[faces, 1]
        nrm = normal[faces]
        phiL, dnL = _edge_trace(space, pL, eL, EL[faces, 0], s, nrm)
        phiR, dnR = _edge_trace(space, pR, eR, EL[faces, 1], 1.0 - s, nrm)
        we = ws[None] * length[faces][:, None]
        sigma = problem.C_W * max(pL, pR) ** 2 / length[faces]
        xq = verts[faces, 0][:, None, :] + s[None, :, None] * tangent[faces][:, None, :]
        UL = np.einsum("tj,eji->eti", Lt, local_coeffs(eL, dL))
        UR = np.einsum("tj,eji->eti", Lt, local_coeffs(eR, dR))
        wL = np.einsum("eti,eqi->etq", UL, phiL)
        wR = np.einsum("eti,eqi->etq", UR, phiR)
        nx = nrm[:, None, None, :]
        fnL = np.sum(flux.f(wL) * nx, -1)
        fnR = np.sum(flux.f(wR) * nx, -1)
        aL = np.sum(flux.df(wL) * nx, -1)
        aR = np.sum(flux.df(wR) * nx, -1)
        lam = np.maximum(np.abs(aL), np.abs(aR))
        if residual:
            H = 0.5 * (fnL + fnR) - 0.5 * lam * (wR - wL)
            dnwL = np.einsum("eti,eqi->etq", UL, dnL)
            dnwR = np.einsum("eti,eqi->etq", UR, dnR)
            jump = wL - wR
            As = H - eps * 0.5 * (dnwL + dnwR) + eps * sigma[:, None, None] * jump
            Bs = -eps * 0.5 * jump
            rl = tau * (
                np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, we, As, phiL, optimize=True)
                + np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, we, Bs, dnL, optimize=True)
            )
            rr = tau * (
                -np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, we, As, phiR, optimize=True)
                + np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, we, Bs, dnR, optimize=True)
            )
            np.add.at(F, off[eL][:, None] + np.arange(nq1 * dL)[None], rl.reshape(len(faces), -1))
            np.add.at(F, off[eR][:, None] + np.arange(nq1 * dR)[None], rr.reshape(len(faces), -1))
        if jacobian:
            selL = np.abs(aL) >= np.abs(aR)
            d2L = np.sum(flux.d2f(wL) * nx, -1)
            d2R = np.sum(flux.d2f(wR) * nx, -1)
            dlamL = np.where(selL, np.sign(aL) * d2L, 0.0)
            dlamR = np.where(selL, 0.0, np.sign(aR) * d2R)
            dHL = 0.5 * aL + 0.5 * lam - 0.5 * (wR - wL) * dlamL
            dHR = 0.5 * aR - 0.5 * lam - 0.5 * (wR - wL) * dlamR
            LL = np.einsum("t,tk,tj->tkj", wt, Lt, Lt)
            Lsum = LL.sum(0)
            sides = {"L": (phiL, dnL, dHL, 1.0, eL, dL), "R": (phiR, dnR, dHR, -1.0, eR, dR)}
            for X in "LR":
                phX, dnX, _, sX, eX, dX = sides[X]
                for Y in "LR":
                    phY, dnY, dHY, sY, eY, dY = sides[Y]
                    C = sX * np.einsum("eq,eqi,etq,eqm->etim", we, phX, dHY, phY, optimize=True)
                    D = eps * (
                        sX * np.einsum("eq,eqi,eqm->eim", we, phX, -0.5 * dnY + sY * sigma[:, None, None] * phY)
                        - 0.5 * sY * np.einsum("eq,eqi,eqm->eim", we, dnX, phY)
                    )
                    blk = tau * np.einsum("tkj,etim->ekijm", LL, C, optimize=True)
                    blk += tau * np.einsum("kj,eim->ekijm", Lsum, D)
                    blk = blk.reshape(len(faces), nq1 * dX, nq1 * dY)
                    if X == Y:
                        np.add.at(diag[pL if X == "L" else pR], pos[eX], blk)
                    else:
                        _append_blocks(rows, cols, vals, pairs, off, eX, eY, blk)

    # boundary faces
    bdeg = deg[E[bnd, 0]]
    for p in sorted({int(a) for a in bdeg}):
        faces = bnd[bdeg == p]
        d = poly_dim(p)
        s, ws = gauss_interval(interval_points_for_degree(space.quad_degree(p)))
        eL = E[faces, 0]
        nrm = normal[faces]
        phiL, dnL = _edge_trace(space, p, eL, EL[faces, 0], s, nrm)
        we = ws[None] * length[faces][:, None]
        sigma = problem.C_W * p**2 / length[faces]
        xq = verts[faces, 0][:, None, :] + s[None, :, None] * tangent[faces][:, None, :]
        gD = problem.dirichlet(xq[:, None, :, 0], xq[:, None, :, 1], times[None, :, None])
        gD = np.broadcast_to(gD, (len(faces), times.size, s.size))
        UL = np.einsum("tj,eji->eti", Lt, local_coeffs(eL, d))
        wL = np.einsum("eti,eqi->etq", UL, phiL)
        nx = nrm[:, None, None, :]
        aL = np.sum(flux.df(wL) * nx, -1)
        aR = np.sum(flux.df(gD) * nx, -1)
        lam = np.maximum(np.abs(aL), np.abs(aR))
        if residual:
            fnL = np.sum(flux.f(wL) * nx, -1)
            fnR = np.sum(flux.f(gD) * nx, -1)
            H = 0.5 * (fnL + fnR) - 0.5 * lam * (gD - wL)
            dnw = np.einsum("eti,eqi->etq", UL, dnL)
            jump = wL - gD
            As = H - eps * dnw + eps * sigma[:, None, None] * jump
            Bs = -eps * jump
            rl = tau * (
                np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, we, As, phiL, optimize=True)
                + np.einsum("t,tk,eq,etq,eqi->eki", wt, Lt, we, Bs, dnL, optimize=True)
            )
            np.add.at(F, off[eL][:, None] + np.arange(nq1 * d)[None], rl.reshape(len(faces), -1))
        if jacobian:
            selL = np.abs(aL) >= np.abs(aR)
            d2L = np.sum(flux.d2f(wL) * nx, -1)
            dlamL = np.where(selL, np.sign(aL) * d2L, 0.0)
            dHL = 0.5 * aL + 0.5 * lam - 0.5 * (gD - wL) * dlamL
            LL = np.einsum("t,tk,tj->tkj", wt, Lt, Lt)
            C = np.einsum("eq,eqi,etq,eqm->etim", we, phiL, dHL, phiL, optimize=True)
            D = eps * (
                np.einsum("eq,eqi,eqm->eim", we, phiL, -dnL + sigma[:, None, None] * phiL)
                - np.einsum("eq,eqi,eqm->eim", we, dnL, phiL)
            )
            blk = tau * np.einsum("tkj,etim->ekijm", LL, C, optimize=True)
            blk += tau * np.einsum("kj,eim->ekijm", LL.sum(0), D)
            np.add.at(diag[p], pos[eL], blk.reshape(len(faces), nq1 * d, nq1 * d))

    if not jacobian:
        return F, None
    for p, elems in space.degree_groups.items():
        _append_blocks(rows, cols, vals, pairs, off, elems, elems, diag[p])
    n = space.dim
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    pairs = np.concatenate(pairs)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return F, BlockSparseMatrix(A, off.copy(), pairs[order])


def _append_blocks(rows, cols, vals, pairs, off, eX, eY, blk):
    nb, bx, by = blk.shape
    r = off[eX][:, None, None] + np.arange(bx)[None, :, None]
    c = off[eY][:, None, None] + np.arange(by)[None, None, :]
    rows.append(np.broadcast_to(r, blk.shape).ravel())
    cols.append(np.broadcast_to(c, blk.shape).ravel())
    vals.append(blk.ravel())
    pairs.append(np.column_stack([eX, eY]))


def assemble_residual(space: STDGSpace, problem: ModelProblem, W, W_prev_trace, tau: float, t0: float = 0.0) -> np.ndarray:
    """Residual vector F(W) of one slab, including the time-jump against the previous trace."""
    F, _ = _assemble(space, problem, W, W_prev_trace, tau, t0, True, False)
    return F


def assemble_jacobian(space: STDGSpace, problem: ModelProblem, W, tau: float, t0: float = 0.0) -> BlockSparseMatrix:
    """Exact linearisation of `assemble_residual` with respect to W."""
    _, A = _assemble(space, problem, W, None, tau, t0, False, True)
    return A


def assemble_system(space, problem, W, W_prev_trace, tau, t0=0.0):
    return _assemble(space, problem, W, W_prev_trace, tau, t0, True, True)


# -- projections and traces -------------------------------------------------

def project_function(space: STDGSpace, func: Callable) -> np.ndarray:
    """L2 projection of func(x, y) onto the spatial (trace) space."""
    out = np.zeros(space.trace_dim)
    for p, elems in space.degree_groups.items():
        phi, _, wq, x = _volume_tables(space, p, elems)
        vals = func(x[..., 0], x[..., 1])
        c = np.einsum("eq,eq,eqi->ei", wq, vals, phi)
        out[space.trace_offsets[elems][:, None] + np.arange(poly_dim(p))[None]] = c
    return out


def project_spacetime(space: STDGSpace, func: Callable, t0: float, tau: float) -> np.ndarray:
    """L2 projection of func(x, y, t) onto the slab space (t0, t0 + tau)."""
    tt, wt, Lt, _, _ = _slab_time_data(space.q)
    nt = interval_points_for_degree(2 * space.q + 6)
    tt, wt = gauss_interval(nt)
    from .quadrature import _legendre_values

    Lt, _ = _legendre_values(tt, space.q)
    out = np.zeros(space.dim)
    for p, elems in space.degree_groups.items():
        d = poly_dim(p)
        phi, _, wq, x = _volume_tables(space, p, elems)
        vals = func(x[:, None, :, 0], x[:, None, :, 1], (t0 + tau * tt)[None, :, None])
        c = np.einsum("t,tj,eq,etq,eqi->eji", wt, Lt, wq, vals, phi, optimize=True)
        out[space.offsets[elems][:, None] + np.arange((space.q + 1) * d)[None]] = c.reshape(len(elems), -1)
    return out


def evaluate_trace(space: STDGSpace, coeffs: np.ndarray, elems: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
    """Values of a spatial function at reference points (nq, 2) of the given elements."""
    out = np.empty((len(elems), len(ref_pts)))
    for i, e in enumerate(elems):
        p = int(space.mesh.degree[e])
        phi, _ = ref_basis(ref_pts, p)
        c = coeffs[space.trace_offsets[e]:space.trace_offsets[e + 1]]
        out[i] = phi @ c / np.sqrt(abs(space.det[e]))
    return out


def slab_end_trace(space: STDGSpace, W: np.ndarray) -> np.ndarray:
    """Spatial coefficients of w(t_m^-)."""
    return _time_trace(space, W, legendre_interval(space.q)[5])


def slab_start_trace(space: STDGSpace, W: np.ndarray) -> np.ndarray:
    return _time_trace(space, W, legendre_interval(space.q)[4])


def _time_trace(space, W, Lval):
    n, nq1 = space.n, space.q + 1
    out = np.empty(space.trace_dim)
    for p, elems in space.degree_groups.items():
        d = poly_dim(p)
        idx = space.offsets[elems][:, None] + np.arange(n * nq1 * d)[None]
        Wl = W[idx].reshape(len(elems), n, nq1, d)
        tr = np.einsum("j,ekji->eki", Lval, Wl).reshape(len(elems), n * d)
        out[space.trace_offsets[elems][:, None] + np.arange(n * d)[None]] = tr
    return out


def constant_in_time(space: STDGSpace, trace: np.ndarray) -> np.ndarray:
    """Slab coefficients of the time-constant extension of a spatial function."""
    n, nq1 = space.n, space.q + 1
    W = np.zeros(space.dim)
    for p, elems in space.degree_groups.items():
        d = poly_dim(p)
        tr = trace[space.trace_offsets[elems][:, None] + np.arange(n * d)[None]].reshape(len(elems), n, d)
        # L_0 = 1 on the slab, so the constant lives in temporal mode 0
        cols = space.offsets[elems][:, None, None] + (np.arange(n)[:, None] * nq1) * d + np.arange(d)[None, None]
        W[cols] = tr
    return W


def transfer_trace(old_space: STDGSpace, old_coeffs: np.ndarray, new_space: STDGSpace) -> np.ndarray:
    """Exact L2 projection of a spatial DG function between meshes of one refinement family."""
    old, new = old_space.mesh, new_space.mesh
    if old.family != new.family:
        raise ValueError("meshes are not related through a common base mesh")
    if old_space.n != 1 or new_space.n != 1:
        raise NotImplementedError("mesh transfer is implemented for scalar spaces")
    old_coeffs = np.asarray(old_coeffs, dtype=float)
    if same_mesh(old, new):
        return old_coeffs.copy()
    out = np.zeros(new_space.trace_dim)
    old_tri = old.vertices[old.triangles]
    new_tri = new.vertices[new.triangles]
    by_root: dict[int, list[int]] = {}
    for k, r in enumerate(old.root):
        by_root.setdefault(int(r), []).append(k)
    exact: dict[bytes, int] = {old_tri[k].tobytes(): k for k in range(old.n_elements)}
    for e in range(new.n_elements):
        pe = int(new.degree[e])
        de = poly_dim(pe)
        lo = new_space.trace_offsets[e]
        k = exact.get(new_tri[e].tobytes())
        if k is not None and int(old.degree[k]) == pe:
            out[lo:lo + de] = old_coeffs[old_space.trace_offsets[k]:old_space.trace_offsets[k + 1]]
            continue
        acc = np.zeros(de)
        for k in by_root.get(int(new.root[e]), ()):
            poly = clip_convex(new_tri[e], old_tri[k])
            if len(poly) < 3:
                continue
            pk = int(old.degree[k])
            pts, wts = triangle_rule(pe + pk)
            for j in range(1, len(poly) - 1):
                a, b, c = poly[0], poly[j], poly[j + 1]
                area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if area2 <= 1e-300:
                    continue
                x = a[None] + pts[:, :1] * (b - a)[None] + pts[:, 1:] * (c - a)[None]
                w = wts * area2
                wold = evaluate_trace(old_space, old_coeffs, [k], old_space.to_reference(np.full(len(x), k), x))[0]
                phi_new, _ = ref_basis(new_space.to_reference(np.full(len(x), e), x), pe)
                acc += (w * wold) @ phi_new / np.sqrt(abs(new_space.det[e]))
        out[lo:lo + de] = acc
    return out
