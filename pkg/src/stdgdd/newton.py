"""Damped Newton-like iteration over one time slab with lazy Jacobian refresh.

The monitor zeta_l = |F(W_l)| / |F(W_{l-1})| decides both the damping (a step
is accepted once zeta_l < 1) and the refresh: the Jacobian and the
preconditioner factorization are rebuilt only after an accepted step with
zeta_l >= refresh_threshold. Otherwise the stale pair is reused.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import ModelProblem, STDGSpace, assemble_jacobian, assemble_residual


@dataclass(frozen=True)
class NewtonConfig:
    damping_factor: float = 0.65
    refresh_threshold: float = 0.5
    max_iters: int = 30
    residual_tolerance: float = 1e-6
    max_damping_retries: int = 30

    def __post_init__(self):
        if not 0.0 < self.damping_factor < 1.0:
            raise ValueError("damping_factor must lie in (0, 1)")
        if not 0.0 <= self.refresh_threshold <= 1.0:
            raise ValueError("refresh_threshold must lie in [0, 1]")
        if self.max_iters < 1 or self.max_damping_retries < 0:
            raise ValueError("max_iters >= 1 and max_damping_retries >= 0 required")


@dataclass
class NewtonReport:
    iterN: int = 0
    iterL: int = 0
    callC: int = 0
    converged: bool = False
    zetas: list[float] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)
    gmres_iters: list[int] = field(default_factory=list)


class NewtonError(RuntimeError):
    def __init__(self, msg: str, report: NewtonReport, rejected: list[float] | None = None):
        super().__init__(msg)
        self.report = report
        self.rejected = rejected or []


def newton_solve(space: STDGSpace, problem: ModelProblem, W0: np.ndarray, prev_trace: np.ndarray,
                 tau: float, solver, config: NewtonConfig = NewtonConfig(), t0: float = 0.0):
    """Solve F(W) = 0 on one slab.

    `solver` needs ``refresh(A)`` (rebuild the preconditioner) and
    ``solve(rhs) -> (d, iterations)``. Returns (W, NewtonReport).
    """
    W = np.array(W0, dtype=float)
    F = assemble_residual(space, problem, W, prev_trace, tau, t0)
    norm = float(np.linalg.norm(F))
    rep = NewtonReport(residual_norms=[norm])
    goal = config.residual_tolerance * norm
    if norm == 0.0:
        rep.converged = True
        return W, rep
    solver.refresh(assemble_jacobian(space, problem, W, tau, t0))
    rep.callC = 1
    for _ in range(config.max_iters):
        d, its = solver.solve(F)
        rep.iterL += its
        rep.gmres_iters.append(its)
        lam = 1.0
        rejected = []
        while True:
            W_try = W - lam * d
            F_try = assemble_residual(space, problem, W_try, prev_trace, tau, t0)
            norm_try = float(np.linalg.norm(F_try))
            zeta = norm_try / norm
            if zeta < 1.0:
                break
            rejected.append(zeta)
            if len(rejected) > config.max_damping_retries:
                raise NewtonError(
                    f"no residual decrease after {config.max_damping_retries} damping retries "
                    f"(Newton step {rep.iterN + 1})", rep, rejected)
            lam *= config.damping_factor
        W, F, norm = W_try, F_try, norm_try
        rep.iterN += 1
        rep.zetas.append(zeta)
        rep.lambdas.append(lam)
        rep.residual_norms.append(norm)
        if norm <= goal:
            rep.converged = True
            break
        if zeta >= config.refresh_threshold:
            solver.refresh(assemble_jacobian(space, problem, W, tau, t0))
            rep.callC += 1
    return W, rep
