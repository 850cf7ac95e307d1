from __future__ import annotations

import numpy as np
import pytest

from stdgdd.discretization import (
    LinearFlux, ModelProblem, NoFlux, STDGSpace, assemble_jacobian, assemble_residual, constant_in_time,
    dof_count, project_function, project_spacetime, slab_end_trace, transfer_trace,
)
from stdgdd.mesh import build_structured_mesh, disc_refined_mesh, refine

from conftest import sine


def test_dof_count_examples():
    assert dof_count(build_structured_mesh(13, 349).with_degree(3), q=1, n=4) == 725920
    one = build_structured_mesh(1, 1)
    assert dof_count(one, q=0) == 6  # two elements, 3 each
    m = build_structured_mesh(2, 249).with_degree(3)  # 996 elements, 80 DoF each with n=4
    assert dof_count(m, q=1, n=4) == 79680


def test_orthonormal_basis():
    mesh = refine(build_structured_mesh(2, 2).with_degree(2), [0, 3])
    space = STDGSpace(mesh, 1)
    # for a function in the space, the coefficient norm is its L2 norm (Parseval)
    c = project_function(space, lambda x, y: 1 + 2 * x - y + x * y)
    xs, w = np.polynomial.legendre.leggauss(12)
    X, Y = np.meshgrid(0.5 * (xs + 1), 0.5 * (xs + 1))
    W = np.outer(w, w) / 4
    exact = float(np.sum(W * (1 + 2 * X - Y + X * Y) ** 2))
    assert abs(c @ c - exact) < 1e-10


def _ones(x, y, t=0.0):
    return np.ones(np.broadcast(x, y, t).shape)


def test_constant_steady_state():
    mesh = build_structured_mesh(3, 3).with_degree(2)
    space = STDGSpace(mesh, 1)
    prob = ModelProblem(eps=0.1, dirichlet=lambda x, y, t: 2.0 * _ones(x, y, t))
    trace = project_function(space, lambda x, y: 2.0 * _ones(x, y))
    F = assemble_residual(space, prob, constant_in_time(space, trace), trace, 0.1)
    assert np.linalg.norm(F) <= 1e-10


def test_zero_state_zero_residual():
    space = STDGSpace(build_structured_mesh(3, 3), 1)
    F = assemble_residual(space, ModelProblem(), np.zeros(space.dim), np.zeros(space.trace_dim), 0.1)
    assert np.linalg.norm(F) == 0.0


def test_dimension_mismatch():
    space = STDGSpace(build_structured_mesh(2, 2), 1)
    with pytest.raises(ValueError):
        assemble_residual(space, ModelProblem(), np.zeros(space.dim + 1), np.zeros(space.trace_dim), 0.1)


def _fd_check(mesh, n_dirs, seed):
    space = STDGSpace(mesh, 1)
    prob = ModelProblem(eps=0.05)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal(space.dim)
    prev = rng.standard_normal(space.trace_dim)
    A = assemble_jacobian(space, prob, W, 0.1).csr
    F0 = assemble_residual(space, prob, W, prev, 0.1)
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.standard_normal(space.dim)
        delta = 1e-7
        # central differences remove the O(delta) truncation of the quadratic flux
        fd = (assemble_residual(space, prob, W + delta * v, prev, 0.1)
              - assemble_residual(space, prob, W - delta * v, prev, 0.1)) / (2 * delta)
        Av = A @ v
        worst = max(worst, np.linalg.norm(fd - Av) / np.linalg.norm(Av))
    assert np.all(np.isfinite(F0))
    return worst


def test_jacobian_finite_differences_two_triangles():
    assert _fd_check(build_structured_mesh(1, 1).with_degree(2), 20, 0) <= 1e-6


def test_jacobian_finite_differences_8x8():
    assert _fd_check(build_structured_mesh(8, 8).with_degree(2), 20, 1) <= 1e-6


def test_linear_flux_jacobian_state_independent():
    space = STDGSpace(build_structured_mesh(3, 3).with_degree(2), 1)
    prob = ModelProblem(eps=0.05, flux=LinearFlux((1.0, -0.5)))
    rng = np.random.default_rng(0)
    A1 = assemble_jacobian(space, prob, rng.standard_normal(space.dim), 0.1).csr
    A2 = assemble_jacobian(space, prob, rng.standard_normal(space.dim), 0.1).csr
    assert abs(A1 - A2).max() <= 1e-12 * abs(A1).max()


def test_block_sparsity():
    mesh = build_structured_mesh(4, 4)
    space = STDGSpace(mesh, 1)
    A = assemble_jacobian(space, ModelProblem(), np.ones(space.dim), 0.1)
    owner = np.repeat(np.arange(mesh.n_elements), space.block_sizes)
    C = A.csr.tocoo()
    blocks = set(zip(owner[C.row].tolist(), owner[C.col].tolist()))
    expect = {(k, k) for k in range(mesh.n_elements)}
    for a, b in mesh.edge_elements[mesh.interior_edges]:
        expect |= {(int(a), int(b)), (int(b), int(a))}
    assert blocks == expect
    assert len(blocks) == mesh.n_elements + 2 * len(mesh.interior_edges)


def test_pure_diffusion_symmetric_for_q0():
    space = STDGSpace(build_structured_mesh(3, 3).with_degree(2), 0)
    A = assemble_jacobian(space, ModelProblem(eps=1.0, flux=NoFlux()), np.zeros(space.dim), 0.1).csr
    assert abs(A - A.T).max() <= 1e-10 * abs(A).max()


def test_transfer_identity_and_constants():
    base = build_structured_mesh(3, 3).with_degree(2)
    fine = disc_refined_mesh(base, (0.5, 0.5), 0.3, 1)
    S0, S1 = STDGSpace(base, 1), STDGSpace(fine, 1)
    c = project_function(S0, sine)
    np.testing.assert_array_equal(transfer_trace(S0, c, S0), c)
    one0 = project_function(S0, lambda x, y: _ones(x, y))
    np.testing.assert_allclose(transfer_trace(S0, one0, S1), project_function(S1, lambda x, y: _ones(x, y)),
                               atol=1e-12)


def test_transfer_children_to_parent_polynomial():
    base = build_structured_mesh(2, 2).with_degree(2)
    fine = disc_refined_mesh(base, (0.3, 0.3), 0.4, 2)
    S0, S1 = STDGSpace(base, 1), STDGSpace(fine, 1)

    def f(x, y):
        return 1 - x + 3 * y * x - y**2

    back = transfer_trace(S1, project_function(S1, f), S0)
    np.testing.assert_allclose(back, project_function(S0, f), atol=1e-12)


def test_transfer_unrelated_meshes():
    S0 = STDGSpace(build_structured_mesh(2, 2), 1)
    S1 = STDGSpace(build_structured_mesh(3, 3), 1)
    with pytest.raises(ValueError):
        transfer_trace(S0, np.zeros(S0.trace_dim), S1)


def test_manufactured_residual_decreases():
    eps = 0.05

    def u(x, y, t):
        return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.exp(-t)

    def g(x, y, t):
        ux = 2 * np.pi * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y) * np.exp(-t)
        uy = 2 * np.pi * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y) * np.exp(-t)
        return -u(x, y, t) + u(x, y, t) * (ux + uy) + eps * 8 * np.pi**2 * u(x, y, t)

    prob = ModelProblem(eps=eps, source=g)
    norms = []
    for n in (4, 8, 16):
        space = STDGSpace(build_structured_mesh(n, n).with_degree(2), 1)
        tau = 0.01
        W = project_spacetime(space, u, 0.0, tau)
        prev = project_function(space, lambda x, y: u(x, y, 0.0))
        norms.append(np.linalg.norm(assemble_residual(space, prob, W, prev, tau)))
    assert norms[0] > norms[1] > norms[2]
    assert np.log2(norms[1] / norms[2]) >= 1.0


def test_end_trace_of_constant_in_time():
    space = STDGSpace(build_structured_mesh(2, 2).with_degree(2), 2)
    c = project_function(space, sine)
    np.testing.assert_allclose(slab_end_trace(space, constant_in_time(space, c)), c, atol=1e-14)
