"""Adaptive choice of the number of subdomains M and the coarse splitting s.

Past time steps are summarised in a History; least-squares fits of flops,
speeds and communication turn it into FittedModels, which predict the cost of
every admissible (M, s) for the next mesh. Index 1 refers to the largest
local system, index 0 to the coarse system.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np


class FitError(ValueError):
    pass


class InsufficientHistory(FitError):
    pass


@dataclass
class HistoryRecord:
    step: int
    mesh_key: str
    Nh: int
    Nh1: int
    NH: int
    flfac0: float
    flfac1: float
    flass0: float
    flass1: float
    spfac0: float
    spfac1: float
    spass0: float
    spass1: float
    callC: int
    iterL: int
    M: int
    TgatherOne: float
    TbcastOne: float
    # audit fields: let past predictions be replayed at the chosen (M, s)
    s: int = 1
    n_elements: int = 0

    def __post_init__(self):
        if min(self.Nh, self.Nh1, self.NH, self.M) < 1:
            raise ValueError("sizes and M must be >= 1")
        if min(self.callC, self.iterL) < 0:
            raise ValueError("counters must be >= 0")


_INT_FIELDS = {f.name for f in fields(HistoryRecord) if f.type in ("int", int)}


@dataclass
class History:
    """Per-step records; a mesh kept over several steps contributes only its last step."""

    records: list[HistoryRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def record_step(self, rec: HistoryRecord) -> None:
        if self.records and rec.step < self.records[-1].step:
            raise ValueError("records must arrive in step order")
        if self.records and self.records[-1].mesh_key == rec.mesh_key:
            self.records[-1] = rec
        else:
            self.records.append(rec)

    def last(self, k: int | None) -> list[HistoryRecord]:
        return self.records if k is None else self.records[-k:]

    def write_csv(self, path) -> None:
        names = [f.name for f in fields(HistoryRecord)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for r in self.records:
                w.writerow([getattr(r, n) if n in _INT_FIELDS or n == "mesh_key" else f"{getattr(r, n):.17g}"
                            for n in names])

    @classmethod
    def read_csv(cls, path) -> "History":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                kw = {k: (v if k == "mesh_key" else int(v) if k in _INT_FIELDS else float(v)) for k, v in row.items()}
                h.records.append(HistoryRecord(**kw))
        return h


# -- fits ---------------------------------------------------------------------

def fit_powerlaw(N, fl) -> tuple[float, float]:
    """(C, mu) with fl ~ C N^mu, by least squares in log-log coordinates."""
    N = np.asarray(N, dtype=float)
    fl = np.asarray(fl, dtype=float)
    if np.any(N <= 0) or np.any(fl <= 0):
        raise FitError("power-law samples must be positive")
    if np.unique(N).size < 2:
        raise InsufficientHistory("power-law fit needs at least 2 distinct sizes")
    mu, logC = np.polyfit(np.log(N), np.log(fl), 1)
    return float(np.exp(logC)), float(mu)


def fit_speed_affine(N, speed) -> tuple[float, float, bool]:
    """(a, b, degenerate) for speed ~ a N + b; the cap is applied at evaluation time."""
    N = np.asarray(N, dtype=float)
    speed = np.asarray(speed, dtype=float)
    if N.size < 1:
        raise InsufficientHistory("speed fit needs samples")
    if np.unique(N).size < 2:
        warnings.warn("all sizes equal: flat speed model", RuntimeWarning)
        return 0.0, float(speed.mean()), True
    a, b = np.polyfit(N, speed, 1)
    return float(a), float(b), False


_COMM_NAMES = ("alpha (log2 P)", "beta (N)", "gamma (constant)")


def fit_comm(P, N, T) -> tuple[float, float, float]:
    """(alpha, beta, gamma) with T ~ alpha log2 P + beta N + gamma."""
    X = _comm_design(P, N)
    T = np.asarray(T, dtype=float)
    if X.shape[0] < 3:
        raise InsufficientHistory("communication fit needs at least 3 samples")
    deficient = _deficient_columns(X)
    if deficient:
        raise FitError("rank-deficient communication design: " + ", ".join(_COMM_NAMES[j] for j in deficient))
    return tuple(float(v) for v in _scaled_lstsq(X, T))


def fit_comm_reduced(P, N, T) -> tuple[float, float, float]:
    """As fit_comm, but regressors the data cannot identify are fixed to zero."""
    X = _comm_design(P, N)
    T = np.asarray(T, dtype=float)
    keep = [j for j in range(3) if j not in _deficient_columns(X)]
    out = np.zeros(3)
    if X.shape[0] and keep:
        out[keep] = _scaled_lstsq(X[:, keep], T)
    return tuple(float(v) for v in out)


def _scaled_lstsq(X, T):
    # columns span many orders of magnitude (log2 P vs N); equilibrate them first
    scale = np.maximum(np.abs(X).max(axis=0), 1e-300)
    sol, *_ = np.linalg.lstsq(X / scale, T, rcond=None)
    return sol / scale


def _comm_design(P, N) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    N = np.asarray(N, dtype=float)
    return np.column_stack([np.log2(P), N, np.ones_like(N)])


def _deficient_columns(X: np.ndarray) -> list[int]:
    """Columns that are not identifiable, checked greedily from the constant term."""
    order = [2, 1, 0]
    kept: list[int] = []
    bad = []
    for j in order:
        cols = kept + [j]
        Xs = X[:, cols] / np.maximum(np.abs(X[:, cols]).max(axis=0), 1e-300)
        if X.shape[0] >= len(cols) and np.linalg.matrix_rank(Xs, tol=1e-10) == len(cols):
            kept.append(j)
        else:
            bad.append(j)
    return sorted(bad)


def running_averages(history: History, mlev: int = 5) -> tuple[float, float]:
    recs = history.last(mlev)
    if not recs:
        raise InsufficientHistory("empty history")
    return float(np.mean([r.callC for r in recs])), float(np.mean([r.iterL for r in recs]))


@dataclass
class FittedModels:
    fac: tuple[tuple[float, float], tuple[float, float]]  # (C, mu) for i = 0, 1
    ass: tuple[tuple[float, float], tuple[float, float]]  # (c, nu)
    spfac: tuple[tuple[float, float], tuple[float, float]]  # (a, b)
    spass: tuple[tuple[float, float], tuple[float, float]]
    smax_fac: float
    smax_ass: float
    comm_g: tuple[float, float, float]
    comm_b: tuple[float, float, float]
    callC_bar: float
    iterL_bar: float
    # affine speeds extrapolated to small N may turn nonpositive; they are floored here
    speed_floor: float = 1e-3

    def Flfac(self, i, N):
        C, mu = self.fac[i]
        return C * N**mu

    def Flass(self, i, N):
        c, nu = self.ass[i]
        return c * N**nu

    def _speed(self, ab, smax, N):
        a, b = ab
        return max(min(smax, a * N + b), self.speed_floor * smax)

    def Spfac(self, i, N):
        return self._speed(self.spfac[i], self.smax_fac, N)

    def Spass(self, i, N):
        return self._speed(self.spass[i], self.smax_ass, N)

    def TComg(self, N, P):
        a, b, g = self.comm_g
        return a * math.log2(P) + b * N + g

    def TComb(self, N, P):
        a, b, g = self.comm_b
        return a * math.log2(P) + b * N + g

    def describe(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in asdict(self).items())


# a slope fitted over sizes closer than this ratio is dominated by partition noise
MIN_SIZE_SPREAD = 2.0


def _powerlaw_window(history: History, mlev: int, size, value):
    """Last mlev records, widened backwards until the sizes span MIN_SIZE_SPREAD."""
    recs = history.records
    k = min(mlev, len(recs))
    while True:
        N = [size(r) for r in recs[-k:]]
        if (len(set(N)) >= 2 and max(N) >= MIN_SIZE_SPREAD * min(N)) or k == len(recs):
            break
        k += 1
    if len(set(N)) < 2:
        raise InsufficientHistory("need records with at least 2 distinct system sizes")
    return fit_powerlaw(N, [value(r) for r in recs[-k:]])


def fit_models(history: History, mlev: int = 5) -> FittedModels:
    """Fit every model; flops and averages use the last mlev records, speeds and comm all of them."""
    if len(history) < 2:
        raise InsufficientHistory("need at least 2 history records (use the bootstrap choice)")
    recs = history.records
    sizes = (lambda r: r.NH, lambda r: r.Nh1)
    fac = tuple(_powerlaw_window(history, mlev, sizes[i], lambda r, i=i: getattr(r, f"flfac{i}")) for i in (0, 1))
    ass = tuple(_powerlaw_window(history, mlev, sizes[i], lambda r, i=i: getattr(r, f"flass{i}")) for i in (0, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spfac = tuple(fit_speed_affine([sizes[i](r) for r in recs], [getattr(r, f"spfac{i}") for r in recs])[:2]
                      for i in (0, 1))
        spass = tuple(fit_speed_affine([sizes[i](r) for r in recs], [getattr(r, f"spass{i}") for r in recs])[:2]
                      for i in (0, 1))
    smax_fac = max(max(r.spfac0, r.spfac1) for r in recs)
    smax_ass = max(max(r.spass0, r.spass1) for r in recs)
    P = [r.M for r in recs]
    comm_g = fit_comm_reduced(P, [r.Nh for r in recs], [r.TgatherOne for r in recs])
    comm_b = fit_comm_reduced(P, [r.NH for r in recs], [r.TbcastOne for r in recs])
    callC_bar, iterL_bar = running_averages(history, mlev)
    return FittedModels(fac, ass, spfac, spass, smax_fac, smax_ass, comm_g, comm_b, callC_bar, iterL_bar)


# -- candidates and prediction -----------------------------------------------

def enumerate_candidates(num_elements: int, M_available: int, n_min: int = 10) -> list[tuple[int, int]]:
    """All (M, s) with M <= min(budget, #Th / n_min) and s <= max(1, #Th / M^2)."""
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    M_max = max(1, min(M_available, num_elements // n_min))
    return [(M, s) for M in range(1, M_max + 1) for s in range(1, max(1, num_elements // (M * M)) + 1)]


@dataclass(frozen=True)
class Prediction:
    M: int
    s: int
    compute: float
    comm: float

    @property
    def total(self) -> float:
        return self.compute + self.comm


def predict_cost(models: FittedModels | None, Nh: int, num_elements: int, candidate: tuple[int, int]) -> Prediction:
    if models is None:
        raise FitError("models are not fitted")
    M, s = candidate
    N1 = Nh / M
    N0 = Nh * s * M / num_elements
    m = models
    compute = m.callC_bar * max(m.Flfac(0, N0) / m.Spfac(0, N0), m.Flfac(1, N1) / m.Spfac(1, N1)) \
        + m.iterL_bar * (m.Flass(1, N1) / m.Spass(1, N1) + m.Flass(0, N0) / m.Spass(0, N0))
    # the gather assembles the whole vector, so it is evaluated at Nh like its fit
    comm = m.iterL_bar * (m.TComg(Nh, M) + m.TComb(N0, M))
    return Prediction(M, s, compute, comm)


def rank_candidates(models, Nh, num_elements, candidates) -> list[Prediction]:
    preds = [predict_cost(models, Nh, num_elements, c) for c in candidates]
    return sorted(preds, key=lambda p: (p.total, p.M, p.s))


def choose(models: FittedModels, Nh: int, num_elements: int, candidates) -> tuple[int, int]:
    """Argmin of the predicted cost; ties go to smaller M, then smaller s."""
    if not candidates:
        raise ValueError("no candidates")
    best = rank_candidates(models, Nh, num_elements, candidates)[0]
    return best.M, best.s


def half_rule_s(num_elements: int, M: int) -> int:
    """Largest s with s M <= #Th / (2 M), at least 1."""
    return max(1, num_elements // (2 * M * M))


def bootstrap_choice(Nh: int, num_elements: int, kappa: float) -> tuple[int, int]:
    """M ~ Nh / kappa and s by the one-half rule."""
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    M = max(1, math.floor(Nh / kappa + 0.5))
    return M, half_rule_s(num_elements, M)
