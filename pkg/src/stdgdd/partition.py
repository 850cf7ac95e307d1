"""Weighted partitioning of the element graph into connected, DoF-balanced parts.

Parts are grown greedily from farthest-point seeds and then balanced by
connectivity-preserving boundary moves. Subdomain and coarse-element indices
are 0-based.
"""
from __future__ import annotations

import csv
import heapq
import warnings
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components, shortest_path

from .mesh import ElementGraph


@dataclass(frozen=True)
class DecompPlan:
    M: int
    subdomain_of: np.ndarray
    weights: np.ndarray
    s: int = 0
    coarse_of: np.ndarray | None = None
    imbalanced: bool = False

    @property
    def n_coarse(self) -> int:
        return 0 if self.coarse_of is None else self.s * self.M

    def subdomain_elements(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.subdomain_of == i)

    def coarse_elements(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.coarse_of == c)

    def imbalance(self) -> float:
        """max part weight / mean part weight."""
        return float(self.weights.max() / self.weights.mean())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element_id", "subdomain", "coarse_element"])
            coarse = self.coarse_of if self.coarse_of is not None else np.full_like(self.subdomain_of, -1)
            for k, (a, b) in enumerate(zip(self.subdomain_of, coarse)):
                w.writerow([k, int(a), int(b)])


class PartitionError(ValueError):
    pass


def _peripheral_node(graph: ElementGraph, rng: np.random.Generator) -> int:
    """Farthest-point traversal from a random start, twice."""
    node = int(rng.integers(graph.n_nodes))
    for _ in range(2):
        d = shortest_path(graph.adjacency, unweighted=True, indices=node)
        d[~np.isfinite(d)] = -1
        node = int(np.argmax(d))
    return node


def _grow_region(graph: ElementGraph, seed: int, target: float) -> np.ndarray:
    """Greedily grow a connected region from seed until its weight reaches target.

    The next node is the frontier node with the most edges into the region,
    which keeps the region compact and its complement usually connected.
    """
    A = graph.adjacency
    w = graph.node_weight
    inside = np.zeros(graph.n_nodes, dtype=bool)
    conn = np.zeros(graph.n_nodes, dtype=np.int64)
    heap = [(0, seed)]
    weight = 0.0
    while heap and weight < target:
        c, v = heapq.heappop(heap)
        if inside[v] or -c != conn[v]:
            continue
        # stop short when overshooting is worse than undershooting
        if weight + w[v] > target and (weight + w[v] - target) > (target - weight):
            break
        inside[v] = True
        weight += w[v]
        for u in A.indices[A.indptr[v]:A.indptr[v + 1]]:
            if not inside[u]:
                conn[u] += 1
                heapq.heappush(heap, (-conn[u], int(u)))
    return inside


def _bisect(graph: ElementGraph, frac: float, rng) -> np.ndarray:
    """Boolean mask of a connected region holding about `frac` of the weight."""
    target = frac * graph.node_weight.sum()
    inside = _grow_region(graph, _peripheral_node(graph, rng), target)
    # the complement must stay connected: absorb its smaller components
    rest = np.flatnonzero(~inside)
    if rest.size:
        n_comp, lab = connected_components(graph.adjacency[rest][:, rest], directed=False)
        if n_comp > 1:
            big = np.argmax(np.bincount(lab, weights=graph.node_weight[rest]))
            inside[rest[lab != big]] = True
    return inside


def _recursive_parts(graph: ElementGraph, M: int, rng) -> np.ndarray:
    part = np.zeros(graph.n_nodes, dtype=np.int64)
    stack = [(np.arange(graph.n_nodes), M, 0)]
    while stack:
        nodes, k, base = stack.pop()
        if k == 1:
            part[nodes] = base
            continue
        k1 = k // 2
        sub = graph.subgraph(nodes)
        inside = _bisect(sub, k1 / k, rng)
        left, right = nodes[inside], nodes[~inside]
        # keep enough elements on each side for the parts it must hold
        if left.size < k1 or right.size < k - k1:
            d = shortest_path(sub.adjacency, unweighted=True, indices=_peripheral_node(sub, rng))
            order = np.argsort(d, kind="stable")
            cut = min(max(k1, round(nodes.size * k1 / k)), nodes.size - (k - k1))
            left, right = nodes[order[:cut]], nodes[order[cut:]]
        stack.append((right, k - k1, base + k1))
        stack.append((left, k1, base))
    return part


def _connected_without(graph: ElementGraph, part: np.ndarray, p: int, v: int) -> bool:
    members = np.flatnonzero(part == p)
    if members.size <= 1:
        return False
    keep = members[members != v]
    sub = graph.adjacency[keep][:, keep]
    n_comp, _ = connected_components(sub, directed=False)
    return n_comp == 1


def _boundary_moves(graph: ElementGraph, part: np.ndarray, src: int, dst: int, limit: int = 16):
    """Nodes of src adjacent to dst, best connected to dst first."""
    A = graph.adjacency
    members = np.flatnonzero(part == src)
    rows = A[members]
    owner = np.repeat(np.arange(members.size), np.diff(rows.indptr))
    nb = part[rows.indices]
    to_dst = np.bincount(owner, weights=nb == dst, minlength=members.size)
    to_src = np.bincount(owner, weights=nb == src, minlength=members.size)
    hit = np.flatnonzero(to_dst > 0)
    order = np.lexsort((members[hit], -(to_dst[hit] - to_src[hit])))
    return [int(v) for v in members[hit[order[:limit]]]]


def _part_graph(graph: ElementGraph, part: np.ndarray, M: int) -> list[set[int]]:
    e = graph.edges
    a, b = part[e[:, 0]], part[e[:, 1]]
    nb: list[set[int]] = [set() for _ in range(M)]
    for x, y in zip(a[a != b], b[a != b]):
        nb[int(x)].add(int(y))
        nb[int(y)].add(int(x))
    return nb


def _try_move(graph, part, pw, src, dst) -> bool:
    w = graph.node_weight
    for v in _boundary_moves(graph, part, src, dst):
        if _connected_without(graph, part, src, v):
            part[v] = dst
            pw[src] -= w[v]
            pw[dst] += w[v]
            return True
    return False


def _balance(graph: ElementGraph, part: np.ndarray, M: int, target: float, max_rounds: int) -> None:
    w = graph.node_weight
    pw = np.bincount(part, weights=w, minlength=M).astype(float)
    avg = pw.sum() / M
    # path balancing: push weight from the heaviest part towards a light one
    for _ in range(max_rounds):
        P = int(np.argmax(pw))
        if pw[P] <= target:
            break
        nbrs = _part_graph(graph, part, M)
        prev = {P: None}
        dq = deque([P])
        goal = None
        while dq:
            x = dq.popleft()
            if pw[x] + w.min() <= avg + 1e-9 and x != P:
                goal = x
                break
            for y in sorted(nbrs[x]):
                if y not in prev:
                    prev[y] = x
                    dq.append(y)
        if goal is None:
            break
        path = [goal]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()
        # move from the light end backwards so intermediate parts never shrink to zero
        ok = True
        for x, y in reversed(list(zip(path[:-1], path[1:]))):
            if not _try_move(graph, part, pw, x, y):
                ok = False
                break
        if not ok:
            break
    # pairwise smoothing: strictly decreases the sum of squared part weights
    improved = True
    rounds = 0
    while improved and rounds < max_rounds and pw.max() > target:
        improved = False
        rounds += 1
        nbrs = _part_graph(graph, part, M)
        for P in np.argsort(-pw, kind="stable"):
            for Q in sorted(nbrs[P], key=lambda q: (pw[q], q)):
                if pw[Q] + w.min() < pw[P] - 1e-9 and pw[Q] < pw[P]:
                    if _try_move_limited(graph, part, pw, int(P), int(Q)):
                        improved = True
                        break


def _try_move_limited(graph, part, pw, src, dst) -> bool:
    w = graph.node_weight
    for v in _boundary_moves(graph, part, src, dst):
        if pw[dst] + w[v] < pw[src] - 1e-9 and _connected_without(graph, part, src, v):
            part[v] = dst
            pw[src] -= w[v]
            pw[dst] += w[v]
            return True
    return False


def _reduce_cut(graph: ElementGraph, part: np.ndarray, M: int, target: float, passes: int) -> None:
    A = graph.adjacency
    w = graph.node_weight
    pw = np.bincount(part, weights=w, minlength=M).astype(float)
    for _ in range(passes):
        moved = False
        for v in range(graph.n_nodes):
            p = part[v]
            nb = part[A.indices[A.indptr[v]:A.indptr[v + 1]]]
            others = nb[nb != p]
            if others.size == 0:
                continue
            vals, counts = np.unique(others, return_counts=True)
            q = int(vals[np.argmax(counts)])
            gain = int(counts.max()) - int(np.sum(nb == p))
            if gain > 0 and pw[q] + w[v] <= target and _connected_without(graph, part, p, v):
                part[v] = q
                pw[p] -= w[v]
                pw[q] += w[v]
                moved = True
        if not moved:
            break


def _partition_once(graph: ElementGraph, M: int, rho: float, rng) -> np.ndarray:
    part = _recursive_parts(graph, M, rng)
    total = float(graph.node_weight.sum())
    target = (1.0 + rho) * total / M
    _balance(graph, part, M, target, max_rounds=4 * graph.n_nodes)
    _reduce_cut(graph, part, M, target, passes=3)
    return part


def partition_labels(graph: ElementGraph, M: int, balance_tol: float = 0.10, seed: int = 0, attempts: int = 4):
    """Connected labels 0..M-1 and a flag telling whether the balance target was missed."""
    n = graph.n_nodes
    if M < 1:
        raise PartitionError("M must be >= 1")
    if M > n:
        raise PartitionError(f"cannot split {n} elements into {M} parts")
    if M == 1:
        return np.zeros(n, dtype=np.int64), False
    if M == n:
        return np.arange(n, dtype=np.int64), False
    total = float(graph.node_weight.sum())
    target = (1.0 + balance_tol) * total / M
    best = None
    for a in range(attempts):
        rng = np.random.default_rng([seed, a])
        part = _partition_once(graph, M, balance_tol, rng)
        worst = np.bincount(part, weights=graph.node_weight, minlength=M).max()
        if best is None or worst < best[0]:
            best = (worst, part)
        if worst <= target + 1e-9:
            break
    return best[1], bool(best[0] > target + 1e-9)


def partition_elements(graph: ElementGraph, M: int, balance_tol: float = 0.10, seed: int = 0) -> DecompPlan:
    part, bad = partition_labels(graph, M, balance_tol, seed)
    if bad:
        warnings.warn(f"partition into {M} parts exceeds balance tolerance {balance_tol}", RuntimeWarning)
    weights = np.bincount(part, weights=graph.node_weight, minlength=M)
    return DecompPlan(M=M, subdomain_of=part, weights=weights, imbalanced=bad)


def split_coarse(plan: DecompPlan, s: int, graph: ElementGraph, seed: int = 0) -> DecompPlan:
    """Split every subdomain into s connected coarse elements."""
    if s < 1:
        raise PartitionError("s must be >= 1")
    if s == 1:
        return replace(plan, s=1, coarse_of=plan.subdomain_of.copy())
    coarse = np.empty_like(plan.subdomain_of)
    for i in range(plan.M):
        nodes = plan.subdomain_elements(i)
        if s > nodes.size:
            raise PartitionError(f"subdomain {i} has {nodes.size} elements, fewer than s={s}")
        labels, _ = partition_labels(graph.subgraph(nodes), s, seed=seed + i)
        coarse[nodes] = i * s + labels
    return replace(plan, s=s, coarse_of=coarse)


@dataclass
class BlockLayout:
    element_order: np.ndarray
    ranges: list[tuple[int, int]]
    sizes: np.ndarray
    max_size: int = field(init=False)

    def __post_init__(self):
        self.max_size = int(self.sizes.max())


def subdomain_block_layout(plan: DecompPlan, graph: ElementGraph) -> BlockLayout:
    """Contiguous DoF ranges per subdomain after renumbering elements subdomain by subdomain."""
    order = np.argsort(plan.subdomain_of, kind="stable")
    sizes = np.bincount(plan.subdomain_of, weights=graph.node_weight, minlength=plan.M).astype(np.int64)
    ends = np.cumsum(sizes)
    ranges = [(int(e - s), int(e)) for s, e in zip(sizes, ends)]
    return BlockLayout(order, ranges, sizes)


def is_connected(graph: ElementGraph, nodes: np.ndarray) -> bool:
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        return False
    sub = graph.subgraph(nodes)
    d = shortest_path(sub.adjacency, unweighted=True, indices=0)
    return bool(np.all(np.isfinite(d)))
