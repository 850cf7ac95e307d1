"""Time marching with a domain-decomposition strategy, sweeps and prediction reports."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..adaptdd import (
    FitError, History, HistoryRecord, InsufficientHistory, Prediction, bootstrap_choice,
    enumerate_candidates, fit_models, half_rule_s, predict_cost, rank_candidates,
)
from ..costmodel import StepCost, simulate_parallel_step, write_step_costs
from ..discretization import (
    BurgersFlux, LinearFlux, ModelProblem, NoFlux, STDGSpace, assemble_jacobian,
    constant_in_time, project_function, slab_end_trace, transfer_trace,
)
from ..mesh import AdaptSchedule, adjacency_graph, build_structured_mesh, next_mesh, read_mesh
from ..newton import NewtonConfig, NewtonError, newton_solve
from ..partition import PartitionError, partition_elements, split_coarse
from ..schwarz import GMRESError, SchwarzSolver, TwoLevelPreconditioner
from .config import RunConfig

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    """A run aborted in `phase` of time step `step`."""

    def __init__(self, step: int, phase: str, cause: Exception):
        super().__init__(f"step {step}, {phase}: {cause}")
        self.step = step
        self.phase = phase
        self.cause = cause


class ConvergenceError(RunError):
    pass


TOTAL_COLUMNS = ("iterN", "iterL", "callC", "flm", "Wtime", "Tcomm", "costs")


@dataclass
class SlabRecord:
    step: int
    residual_norms: list[float]
    zetas: list[float]
    lambdas: list[float]
    gmres_iters: list[int]


@dataclass
class RunSummary:
    rows: list[StepCost] = field(default_factory=list)
    trace: list[tuple[int, int, int]] = field(default_factory=list)  # (step, M, s) on every new mesh
    slabs: list[SlabRecord] = field(default_factory=list)
    predictions: list[tuple[int, float, float]] = field(default_factory=list)  # (step, predicted, actual)
    history: History | None = None
    max_local_size: int = 0
    coarse_size: int = 0

    @property
    def totals(self) -> dict[str, float]:
        return {c: sum(getattr(r, c) for r in self.rows) for c in TOTAL_COLUMNS}

    def to_json(self) -> str:
        out = {
            "totals": self.totals,
            "steps": len(self.rows),
            "trace": [list(t) for t in self.trace],
            "predictions": [list(p) for p in self.predictions],
        }
        return json.dumps(out, indent=2, sort_keys=True) + "\n"

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_step_costs(d / "steps.csv", self.rows)
        (d / "summary.json").write_text(self.to_json())
        with open(d / "predictions.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "predicted", "actual"])
            for step, pred, act in self.predictions:
                w.writerow([step, f"{pred:.5e}", f"{act:.5e}"])
        if self.history is not None:
            self.history.write_csv(d / "history.csv")


def make_problem(cfg: RunConfig) -> ModelProblem:
    flux = {"burgers": BurgersFlux, "none": NoFlux}.get(cfg.flux)
    flux = LinearFlux(cfg.velocity) if cfg.flux == "linear" else flux()
    return ModelProblem(eps=cfg.eps, flux=flux, C_W=cfg.C_W)


def initial_data(name: str):
    if name == "sine":
        return lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    return lambda x, y: np.exp(-50.0 * ((x - 0.3) ** 2 + (y - 0.3) ** 2))


def make_schedule(cfg: RunConfig) -> AdaptSchedule:
    base = read_mesh(cfg.mesh_file) if cfg.mesh_file else build_structured_mesh(cfg.nx, cfg.ny)
    base = base.with_degree(np.full(base.n_elements, cfg.degree))
    return AdaptSchedule(base, cfg.center_start, cfg.center_end, cfg.radius_start, cfg.radius_end,
                         depth=cfg.refine_depth if cfg.adapt_mesh else 0, n_steps=cfg.steps,
                         remesh_every=cfg.remesh_every)


def clamp_M(M: int, num_elements: int, cfg: RunConfig) -> int:
    """Core budget and at least n_min elements per subdomain."""
    return max(1, min(M, cfg.budget, num_elements // cfg.n_min))


def select_decomposition(cfg: RunConfig, Nh: int, num_elements: int, history: History | None):
    """(M, s, prediction or None) for a new mesh."""
    if cfg.strategy == "fix":
        M = clamp_M(cfg.M, num_elements, cfg)
        return M, cfg.s or half_rule_s(num_elements, M), None
    if cfg.strategy == "adapt" and history is not None and len(history) >= 2:
        try:
            models = fit_models(history, cfg.mlev)
        except InsufficientHistory:
            models = None
        if models is not None:
            cands = enumerate_candidates(num_elements, cfg.budget, cfg.n_min)
            best = rank_candidates(models, Nh, num_elements, cands)[0]
            return best.M, best.s, best
    M, _ = bootstrap_choice(Nh, num_elements, cfg.kappa)
    M = clamp_M(M, num_elements, cfg)
    return M, cfg.s or half_rule_s(num_elements, M), None


def history_record(step: int, mesh_key: str, cost: StepCost, st, cfg: RunConfig, n_elements: int) -> HistoryRecord:
    sizes = np.asarray(st.sizes)
    i1 = 1 + int(np.argmax(sizes[1:]))

    def speed(fl, T):
        return float(fl) / max(float(T), 1e-300) if fl > 0 else 0.0

    NH = int(sizes[0])
    return HistoryRecord(
        step=step, mesh_key=mesh_key, Nh=cost.Nhm, Nh1=int(sizes[i1]), NH=NH,
        flfac0=max(float(st.flfac[0]), 1.0), flfac1=max(float(st.flfac[i1]), 1.0),
        flass0=max(float(st.flass[0]), 1.0), flass1=max(float(st.flass[i1]), 1.0),
        spfac0=speed(st.flfac[0], st.Tfac[0]), spfac1=speed(st.flfac[i1], st.Tfac[i1]),
        spass0=speed(st.flass[0], st.Tass[0]), spass1=speed(st.flass[i1], st.Tass[i1]),
        callC=cost.callC, iterL=cost.iterL, M=cost.M,
        TgatherOne=cfg.profile.gather(cost.Nhm, cost.M), TbcastOne=cfg.profile.bcast(NH, cost.M),
        s=cost.s, n_elements=n_elements,
    )


def run(cfg: RunConfig, progress=None) -> RunSummary:
    """March cfg.steps slabs; returns the per-step costs and the (M, s) trace."""
    problem = make_problem(cfg)
    newton_cfg = NewtonConfig(cfg.damping, cfg.refresh, cfg.newton_max, cfg.newton_tol)
    schedule = make_schedule(cfg)
    u0 = initial_data(cfg.initial)
    history = History() if cfg.strategy == "adapt" else None
    summary = RunSummary(history=history)
    mesh = space = trace = precond = solver = None
    M = s = 0
    mesh_index = -1
    pending_pred: Prediction | None = None
    for step in range(cfg.steps):
        t0 = step * cfg.tau
        phase = "mesh"
        try:
            mesh, changed = next_mesh(schedule, step, mesh)
            if changed:
                mesh_index += 1
                new_space = STDGSpace(mesh, cfg.q, 1)
                trace = project_function(new_space, u0) if space is None else transfer_trace(space, trace, new_space)
                space = new_space
                graph = adjacency_graph(mesh, 1, cfg.q)
                phase = "strategy"
                M, s, pending_pred = select_decomposition(cfg, space.dim, mesh.n_elements, history)
                phase = "partition"
                plan = split_coarse(partition_elements(graph, M, seed=cfg.seed), s, graph, seed=cfg.seed)
                precond = TwoLevelPreconditioner(space, plan, cfg.mode,
                                                 repeats=cfg.repeats if cfg.timing == "measured" else 0)
                solver = SchwarzSolver(precond, cfg.C_L, cfg.max_gmres)
                summary.trace.append((step, M, s))
            phase = "newton"
            W, rep = newton_solve(space, problem, constant_in_time(space, trace), trace, cfg.tau, solver,
                                  newton_cfg, t0)
            if not rep.converged:
                raise ConvergenceError(step, phase, RuntimeError(
                    f"Newton did not converge in {cfg.newton_max} iterations "
                    f"(residual {rep.residual_norms[-1]:.3e} from {rep.residual_norms[0]:.3e})"))
            trace = slab_end_trace(space, W)
            phase = "cost"
            if precond.ledger is None:  # zero residual on a fresh mesh: factor once for the accounting
                precond.factorize(assemble_jacobian(space, problem, W, cfg.tau, t0))
            cost, st = simulate_parallel_step(precond.ledger, rep.callC, rep.iterL, rep.iterN, space.dim, M, s,
                                              cfg.profile, cfg.timing, cfg.mode, step, t0 + cfg.tau)
        except RunError:
            raise
        except (NewtonError, GMRESError) as err:
            raise ConvergenceError(step, phase, err) from err
        except (ValueError, RuntimeError, PartitionError) as err:
            raise RunError(step, phase, err) from err
        summary.rows.append(cost)
        summary.slabs.append(SlabRecord(step, rep.residual_norms, rep.zetas, rep.lambdas, rep.gmres_iters))
        summary.max_local_size = int(np.max(st.sizes[1:]))
        summary.coarse_size = int(st.sizes[0])
        if pending_pred is not None:
            summary.predictions.append((step, pending_pred.total, cost.costs))
            pending_pred = None
        if history is not None:
            history.record_step(history_record(step, f"mesh{mesh_index}", cost, st, cfg, mesh.n_elements))
        if progress is not None:
            progress(cost)
        log.debug("step %d: M=%d s=%d Nh=%d iterN=%d iterL=%d callC=%d costs=%.3e",
                  step, M, s, cost.Nhm, cost.iterN, cost.iterL, cost.callC, cost.costs)
    if cfg.output_dir:
        summary.write(cfg.output_dir)
    return summary


# -- sweeps ---------------------------------------------------------------------

SWEEP_COLUMNS = ("M", "s", "n_i", "n_0", "iterN", "iterL", "callC", "fl", "Wtime", "comm", "costs")


@dataclass
class SweepRow:
    M: int
    s: int
    n_i: int
    n_0: int
    iterN: int
    iterL: int
    callC: int
    fl: float
    Wtime: float
    comm: float
    costs: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    notes: list[str]

    def write_csv(self, target) -> None:
        """Write to a path or an open text stream."""
        if hasattr(target, "write"):
            self._write(csv.writer(target, lineterminator="\n"))
            return
        with open(target, "w", newline="") as fh:
            self._write(csv.writer(fh, lineterminator="\n"))

    def _write(self, w) -> None:
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([v if isinstance(v, int) else f"{v:.5e}" for v in asdict(r).values()])

    def lookup(self, M: int, s: int) -> SweepRow | None:
        return next((r for r in self.rows if r.M == M and r.s == s), None)


def sweep(cfg: RunConfig, M_list, s_list) -> SweepResult:
    """fix(M) runs with explicit s on the unadapted base mesh, over the full cross product.

    A pair is skipped with a note when M violates the n_min/budget clamp or a
    subdomain has fewer than s elements.
    """
    rows, notes = [], []
    base = make_schedule(cfg).base
    for M in M_list:
        if clamp_M(M, base.n_elements, cfg) != M:
            notes.append(f"M={M}: exceeds the budget or leaves fewer than {cfg.n_min} elements per subdomain")
            continue
        for s in s_list:
            c = cfg.with_(strategy="fix", M=M, s=s, adapt_mesh=False, output_dir=None)
            try:
                res = run(c)
            except RunError as err:
                if isinstance(err.cause, PartitionError):
                    notes.append(f"M={M}, s={s}: {err.cause}")
                    continue
                raise
            t = res.totals
            rows.append(SweepRow(M, s, res.max_local_size, res.coarse_size, int(t["iterN"]), int(t["iterL"]),
                                 int(t["callC"]), t["flm"], t["Wtime"], t["Tcomm"], t["costs"]))
    return SweepResult(rows, notes)


# -- prediction reports --------------------------------------------------------------

@dataclass
class PredictReport:
    ranked: list[Prediction]
    past: list[tuple[int, float, float]]  # (step, predicted, actual) replayed from the history

    @property
    def best(self) -> Prediction:
        return self.ranked[0]

    def format(self, limit: int | None = 20) -> str:
        lines = [f"{'M':>5} {'s':>4} {'compute':>12} {'comm':>12} {'total':>12}"]
        for k, p in enumerate(self.ranked[:limit]):
            mark = "  <- argmin" if k == 0 else ""
            lines.append(f"{p.M:5d} {p.s:4d} {p.compute:12.5e} {p.comm:12.5e} {p.total:12.5e}{mark}")
        if self.past:
            lines.append("")
            lines.append(f"{'step':>5} {'predicted':>12} {'actual':>12}")
            lines += [f"{k:5d} {a:12.5e} {b:12.5e}" for k, a, b in self.past]
        return "\n".join(lines)


def record_cost(r: HistoryRecord) -> float:
    """Step cost implied by a history record (largest local system plus coarse system)."""
    fac = max(r.flfac0 / r.spfac0 if r.spfac0 else 0.0, r.flfac1 / r.spfac1 if r.spfac1 else 0.0)
    ass = (r.flass1 / r.spass1 if r.spass1 else 0.0) + (r.flass0 / r.spass0 if r.spass0 else 0.0)
    return r.callC * fac + r.iterL * (ass + r.TgatherOne + r.TbcastOne)


def predict_report(history: History, Nh: int, num_elements: int, budget: int = 64, n_min: int = 10,
                   mlev: int = 5) -> PredictReport:
    if len(history) < 2:
        raise InsufficientHistory(f"prediction needs at least 2 history records, got {len(history)}; "
                                  "use the bootstrap choice until then")
    models = fit_models(history, mlev)
    ranked = rank_candidates(models, Nh, num_elements, enumerate_candidates(num_elements, budget, n_min))
    past = []
    for k in range(2, len(history)):
        prefix = History(history.records[:k])
        r = history.records[k]
        if not r.n_elements:
            continue
        try:
            m = fit_models(prefix, mlev)
        except FitError:
            continue
        past.append((r.step, predict_cost(m, r.Nh, r.n_elements, (r.M, r.s)).total, record_cost(r)))
    return PredictReport(ranked, past)


def relative_errors(pairs) -> np.ndarray:
    return np.array([abs(p - a) / a for _, p, a in pairs if a > 0 and math.isfinite(p)])
