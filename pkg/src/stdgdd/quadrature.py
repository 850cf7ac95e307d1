"""Quadrature rules and orthonormal polynomial bases on the reference triangle.

The reference triangle is {(xi, eta): xi >= 0, eta >= 0, xi + eta <= 1}.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def poly_dim(p: int) -> int:
    """Dimension of P_p in two variables."""
    return (p + 1) * (p + 2) // 2


@lru_cache(maxsize=None)
def gauss_interval(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1] (exact for degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def interval_points_for_degree(degree: int) -> int:
    return max(1, (degree + 2) // 2)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle, exact for total degree `degree`.

    Returns points of shape (nq, 2) and weights summing to 1/2.
    """
    # The Duffy map adds one degree in the collapsed direction.
    n = interval_points_for_degree(degree + 1)
    s, ws = gauss_interval(n)
    u, v = np.meshgrid(s, s, indexing="ij")
    wu, wv = np.meshgrid(ws, ws, indexing="ij")
    xi = u * (1.0 - v)
    eta = v
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    wts = (wu * wv * (1.0 - v)).ravel()
    return pts, wts


def monomial_exponents(p: int) -> list[tuple[int, int]]:
    """Exponents (a, b) of x^a y^b with a + b <= p, ordered by total degree."""
    return [(k - b, b) for k in range(p + 1) for b in range(k + 1)]


def monomials(pts: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, d) and gradients (nq, d, 2) of graded monomials at pts."""
    x = pts[..., 0]
    y = pts[..., 1]
    exps = monomial_exponents(p)
    vals = np.stack([x**a * y**b for a, b in exps], axis=-1)
    gx = np.stack([a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x) for a, b in exps], axis=-1)
    gy = np.stack([b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(x) for a, b in exps], axis=-1)
    return vals, np.stack([gx, gy], axis=-1)


@lru_cache(maxsize=None)
def _orthonormal_transform(p: int) -> np.ndarray:
    # Shifted monomials around the centroid keep the Gram matrix well conditioned.
    pts, wts = triangle_rule(2 * p)
    vals, _ = monomials(pts - 1.0 / 3.0, p)
    gram = (vals * wts[:, None]).T @ vals
    chol = np.linalg.cholesky(gram)
    inv = np.linalg.inv(chol)
    # One re-orthonormalisation pass removes the rounding left by the first.
    phi = vals @ inv.T
    gram2 = (phi * wts[:, None]).T @ phi
    inv2 = np.linalg.inv(np.linalg.cholesky(gram2))
    return inv2 @ inv


def ref_basis(pts: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Hierarchical L2(ref)-orthonormal basis of P_p evaluated at reference points.

    Returns values (..., d) and reference gradients (..., d, 2). The first
    poly_dim(k) functions span P_k for every k <= p.
    """
    T = _orthonormal_transform(p)
    vals, grads = monomials(np.asarray(pts, dtype=float) - 1.0 / 3.0, p)
    return vals @ T.T, np.einsum("...mc,im->...ic", grads, T)


@lru_cache(maxsize=None)
def legendre_interval(q: int, n_points: int | None = None):
    """Orthonormal Legendre basis on [0, 1] with quadrature data.

    Returns (t, w, L, dL, L0, L1) where L[k, j] = L_j(t_k), dL its derivative,
    L0 = L_j(0) and L1 = L_j(1).
    """
    n = n_points if n_points is not None else q + 2
    t, w = gauss_interval(n)
    L, dL = _legendre_values(t, q)
    L0, _ = _legendre_values(np.array([0.0]), q)
    L1, _ = _legendre_values(np.array([1.0]), q)
    return t, w, L, dL, L0[0], L1[0]


def _legendre_values(t: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    s = 2.0 * t - 1.0
    L = np.empty((t.size, q + 1))
    dL = np.empty((t.size, q + 1))
    for j in range(q + 1):
        c = np.zeros(j + 1)
        c[j] = 1.0
        scale = np.sqrt(2 * j + 1)
        L[:, j] = scale * np.polynomial.legendre.legval(s, c)
        dL[:, j] = 2.0 * scale * np.polynomial.legendre.legval(s, np.polynomial.legendre.legder(c))
    return L, dL
