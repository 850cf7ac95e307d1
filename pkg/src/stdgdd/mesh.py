"""Triangular meshes, element graphs, red-green refinement and the moving-disc schedule."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .quadrature import poly_dim


@dataclass(eq=False)
class TriMesh:
    """Conforming triangulation with a per-element spatial degree.

    ``root`` maps every element to the base-mesh element it descends from and
    ``family`` identifies that base mesh; together they define which meshes are
    related through the refinement hierarchy. ``parent`` indexes the mesh this
    one was refined from (``None`` for base meshes).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    degree: np.ndarray
    root: np.ndarray
    family: str
    parent: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.degree = np.ascontiguousarray(np.broadcast_to(self.degree, (len(self.triangles),)), dtype=np.int64)
        self.root = np.ascontiguousarray(self.root, dtype=np.int64)
        if np.any(self.degree < 1):
            raise ValueError("element degrees must be >= 1")
        if np.any(self.signed_areas <= 0.0):
            raise ValueError("triangles must have positive signed area")

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_degree(self, degree) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles, degree, self.root, self.family, self.parent)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def _edge_data(self):
        tri = self.triangles
        nt = len(tri)
        # local edge e joins local vertices (e, e+1 mod 3)
        a = tri[:, [0, 1, 2]].ravel()
        b = tri[:, [1, 2, 0]].ravel()
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = lo * (self.n_vertices + 1) + hi
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        start = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        counts = np.diff(np.r_[start, sk.size])
        if np.any(counts > 2):
            raise ValueError("edge shared by more than two triangles")
        ne = start.size
        elems = -np.ones((ne, 2), dtype=np.int64)
        local = -np.ones((ne, 2), dtype=np.int64)
        first = order[start]
        elems[:, 0] = first // 3
        local[:, 0] = first % 3
        two = counts == 2
        second = order[start[two] + 1]
        elems[two, 1] = second // 3
        local[two, 1] = second % 3
        verts = np.column_stack([a[first], b[first]])
        elem_edges = np.empty(3 * nt, dtype=np.int64)
        elem_edges[order] = np.repeat(np.arange(ne), counts)
        return verts, elems, local, elem_edges.reshape(nt, 3)

    @property
    def edges(self) -> np.ndarray:
        """Edge vertex pairs (ne, 2), oriented as in the first adjacent element."""
        return self._edge_data[0]

    @property
    def edge_elements(self) -> np.ndarray:
        """(ne, 2) adjacent elements; column 1 is -1 on the boundary."""
        return self._edge_data[1]

    @property
    def edge_local(self) -> np.ndarray:
        """(ne, 2) local edge index of the edge within each adjacent element."""
        return self._edge_data[2]

    @property
    def element_edges(self) -> np.ndarray:
        return self._edge_data[3]

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_elements[:, 1] >= 0)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_elements[:, 1] < 0)

    @property
    def boundary_tags(self) -> np.ndarray:
        """Per-edge tag: 0 for interior edges, 1 for (Dirichlet) boundary edges."""
        return (self.edge_elements[:, 1] < 0).astype(np.int64)

    @cached_property
    def neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n_elements)]
        for k, l in self.edge_elements[self.interior_edges]:
            nb[k].append(int(l))
            nb[l].append(int(k))
        return nb

    @cached_property
    def element_keys(self) -> np.ndarray:
        """Geometric identity of each element (sorted vertex coordinates)."""
        v = self.vertices[self.triangles]
        order = np.lexsort((v[:, :, 1], v[:, :, 0]), axis=1)
        v = np.take_along_axis(v, order[:, :, None], axis=1)
        return v.reshape(len(v), 6)


def _family_id(vertices: np.ndarray, triangles: np.ndarray) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(vertices, dtype=float).tobytes())
    h.update(np.ascontiguousarray(triangles, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def build_structured_mesh(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0), degree=1) -> TriMesh:
    """Rectangle split into nx*ny cells, each cut by its diagonal into 2 triangles."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    x0, x1, y0, y1 = domain
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10 = v00 + 1
            v01 = v00 + nx + 1
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)
    nt = len(triangles)
    return TriMesh(vertices, triangles, degree, np.arange(nt), _family_id(vertices, triangles))


def point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> float:
    """Euclidean distance from point p to the closed triangle tri (3, 2)."""
    a, b, c = tri
    d1 = b - a
    d2 = c - a
    det = d1[0] * d2[1] - d1[1] * d2[0]
    r = p - a
    u = (r[0] * d2[1] - r[1] * d2[0]) / det
    v = (d1[0] * r[1] - d1[1] * r[0]) / det
    if u >= 0 and v >= 0 and u + v <= 1:
        return 0.0
    best = np.inf
    for s, e in ((a, b), (b, c), (c, a)):
        d = e - s
        t = np.clip(np.dot(p - s, d) / np.dot(d, d), 0.0, 1.0)
        best = min(best, float(np.hypot(*(p - s - t * d))))
    return best


class _Hierarchy:
    """Red refinement forest with hanging nodes, closed by red propagation and green splits."""

    def __init__(self, mesh: TriMesh):
        self.xy = [tuple(v) for v in mesh.vertices]
        self.mid: dict[tuple[int, int], int] = {}
        self.leaves: dict[tuple, tuple] = {}
        for k, (a, b, c) in enumerate(mesh.triangles):
            self.leaves[(k,)] = (int(a), int(b), int(c), 0, int(mesh.degree[k]))

    def _midpoint(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        m = self.mid.get(key)
        if m is None:
            (xa, ya), (xb, yb) = self.xy[a], self.xy[b]
            m = len(self.xy)
            self.xy.append((0.5 * (xa + xb), 0.5 * (ya + yb)))
            self.mid[key] = m
        return m

    def _has_mid(self, a: int, b: int) -> int | None:
        return self.mid.get((a, b) if a < b else (b, a))

    def red(self, key: tuple) -> None:
        a, b, c, lev, deg = self.leaves.pop(key)
        mab = self._midpoint(a, b)
        mbc = self._midpoint(b, c)
        mca = self._midpoint(c, a)
        kids = ((a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca))
        for i, (x, y, z) in enumerate(kids):
            self.leaves[key + (i,)] = (x, y, z, lev + 1, deg)

    def _split_state(self, leaf: tuple) -> tuple[int, bool]:
        a, b, c = leaf[:3]
        n_split = 0
        double = False
        for s, e in ((a, b), (b, c), (c, a)):
            m = self._has_mid(s, e)
            if m is not None:
                n_split += 1
                if self._has_mid(s, m) is not None or self._has_mid(m, e) is not None:
                    double = True
        return n_split, double

    def close(self) -> None:
        changed = True
        while changed:
            changed = False
            for key in sorted(self.leaves):
                leaf = self.leaves.get(key)
                if leaf is None:
                    continue
                n_split, double = self._split_state(leaf)
                if n_split >= 2 or double:
                    self.red(key)
                    changed = True

    def finalize(self, base: TriMesh) -> TriMesh:
        tris = []
        degs = []
        parents = []
        for key in sorted(self.leaves):
            a, b, c, _, deg = self.leaves[key]
            split = None
            for s, e, o in ((a, b, c), (b, c, a), (c, a, b)):
                m = self._has_mid(s, e)
                if m is not None:
                    split = (s, e, o, m)
            if split is None:
                tris.append((a, b, c))
                degs.append(deg)
                parents.append(key[0])
            else:
                s, e, o, m = split
                tris.extend([(s, m, o), (m, e, o)])
                degs.extend([deg, deg])
                parents.extend([key[0], key[0]])
        tris = np.array(tris, dtype=np.int64)
        used, inverse = np.unique(tris.ravel(), return_inverse=True)
        # renumber vertices in first-use order for determinism
        first_use = np.full(used.size, tris.size)
        np.minimum.at(first_use, inverse, np.arange(tris.size))
        rank = np.empty(used.size, dtype=np.int64)
        rank[np.argsort(first_use, kind="stable")] = np.arange(used.size)
        new_tris = rank[inverse].reshape(tris.shape)
        xy = np.array(self.xy)[used[np.argsort(rank)]]
        parents = np.array(parents, dtype=np.int64)
        return TriMesh(xy, new_tris, np.array(degs), base.root[parents], base.family, parents)


def refine(mesh: TriMesh, marked) -> TriMesh:
    """Red-refine the marked elements and close the mesh with red/green refinement.

    Children inherit the degree of their parent; ``parent`` of the result
    indexes ``mesh``.
    """
    marked = sorted({int(k) for k in marked})
    if not marked:
        return mesh
    h = _Hierarchy(mesh)
    for k in marked:
        h.red((k,))
    h.close()
    return h.finalize(mesh)


@dataclass
class ElementGraph:
    """Element adjacency graph with DoF node weights n*(q+1)*(p+1)(p+2)/2."""

    n_nodes: int
    edges: np.ndarray
    node_weight: np.ndarray

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        e = self.edges
        data = np.ones(2 * len(e))
        A = sp.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        A = A.tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A

    def neighbors(self, k: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[k]:A.indptr[k + 1]]

    def subgraph(self, nodes: np.ndarray) -> "ElementGraph":
        nodes = np.asarray(nodes)
        local = -np.ones(self.n_nodes, dtype=np.int64)
        local[nodes] = np.arange(nodes.size)
        keep = (local[self.edges[:, 0]] >= 0) & (local[self.edges[:, 1]] >= 0)
        return ElementGraph(nodes.size, local[self.edges[keep]], self.node_weight[nodes])


def adjacency_graph(mesh: TriMesh, n: int = 1, q: int = 1) -> ElementGraph:
    inner = mesh.interior_edges
    weights = n * (q + 1) * (mesh.degree + 1) * (mesh.degree + 2) // 2
    return ElementGraph(mesh.n_elements, mesh.edge_elements[inner].copy(), weights.astype(np.int64))


@dataclass
class AdaptSchedule:
    """Moving, growing disc driving refinement of a fixed base mesh.

    The disc center moves linearly from ``center_start`` to ``center_end`` and its
    radius from ``radius_start`` to ``radius_end`` over ``n_steps`` steps; the mesh
    is regenerated every ``remesh_every`` steps. Elements touching the disc are
    red-refined ``depth`` times; everything else returns to the base level.
    """

    base: TriMesh
    center_start: tuple[float, float] = (0.3, 0.3)
    center_end: tuple[float, float] = (0.7, 0.7)
    radius_start: float = 0.1
    radius_end: float = 0.3
    depth: int = 1
    n_steps: int = 40
    remesh_every: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def disc(self, step: int) -> tuple[np.ndarray, float]:
        cycle = (step // self.remesh_every) * self.remesh_every
        frac = 0.0 if self.n_steps <= 1 else min(1.0, cycle / (self.n_steps - 1))
        c0 = np.asarray(self.center_start, dtype=float)
        c1 = np.asarray(self.center_end, dtype=float)
        center = c0 + frac * (c1 - c0)
        radius = self.radius_start + frac * (self.radius_end - self.radius_start)
        return center, float(radius)

    def mesh_at(self, step: int) -> TriMesh:
        center, radius = self.disc(step)
        key = (float(center[0]), float(center[1]), radius)
        if key not in self._cache:
            self._cache.clear()
            self._cache[key] = disc_refined_mesh(self.base, center, radius, self.depth)
        return self._cache[key]


def disc_refined_mesh(base: TriMesh, center, radius: float, depth: int) -> TriMesh:
    """Base mesh refined `depth` times on elements intersecting the open disc."""
    if radius <= 0.0 or depth <= 0:
        return base
    center = np.asarray(center, dtype=float)
    h = _Hierarchy(base)
    for level in range(depth):
        marked = []
        for key, (a, b, c, lev, _) in h.leaves.items():
            if lev != level:
                continue
            tri = np.array([h.xy[a], h.xy[b], h.xy[c]])
            if point_triangle_distance(center, tri) < radius:
                marked.append(key)
        if not marked:
            break
        for key in sorted(marked):
            h.red(key)
        h.close()
    if len(h.leaves) == base.n_elements:
        return base
    out = h.finalize(base)
    return out


def same_mesh(a: TriMesh | None, b: TriMesh | None) -> bool:
    if a is None or b is None:
        return a is b
    if a is b:
        return True
    return (
        a.family == b.family
        and a.vertices.shape == b.vertices.shape
        and a.triangles.shape == b.triangles.shape
        and np.array_equal(a.vertices, b.vertices)
        and np.array_equal(a.triangles, b.triangles)
        and np.array_equal(a.degree, b.degree)
    )


def next_mesh(schedule: AdaptSchedule, step: int, current: TriMesh | None) -> tuple[TriMesh, bool]:
    """Mesh for `step` and whether it differs from `current`."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    new = schedule.mesh_at(step)
    if current is not None and same_mesh(new, current):
        return current, False
    return new, True


def write_mesh(mesh: TriMesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c} {p}" for (a, b, c), p in zip(mesh.triangles, mesh.degree)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    tokens = Path(path).read_text().split("\n")
    nv, nt = (int(t) for t in tokens[0].split())
    vertices = np.array([[float(t) for t in line.split()] for line in tokens[1:1 + nv]])
    rows = np.array([[int(t) for t in line.split()] for line in tokens[1 + nv:1 + nv + nt]], dtype=np.int64)
    tris = rows[:, :3]
    return TriMesh(vertices, tris, rows[:, 3], np.arange(nt), _family_id(vertices, tris))


def dof_weights(mesh: TriMesh, n: int, q: int) -> np.ndarray:
    return n * (q + 1) * np.array([poly_dim(int(p)) for p in mesh.degree], dtype=np.int64)


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman intersection of two counter-clockwise convex polygons."""
    out = [tuple(p) for p in subject]
    m = len(clip)
    for i in range(m):
        if not out:
            break
        a = clip[i]
        b = clip[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp = out
        out = []
        for j in range(len(inp)):
            p = inp[j]
            r = inp[(j + 1) % len(inp)]
            sp_, sr = side(p), side(r)
            if sp_ >= 0:
                out.append(p)
            if (sp_ >= 0) != (sr >= 0):
                t = sp_ / (sp_ - sr)
                out.append((p[0] + t * (r[0] - p[0]), p[1] + t * (r[1] - p[1])))
    return np.array(out, dtype=float).reshape(-1, 2)
