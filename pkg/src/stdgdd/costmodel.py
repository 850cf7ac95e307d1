"""Computational cost model: flop totals, speed curves, communication and per-step cost.

Index 0 of every per-system list is the coarse system, 1..M are the local ones.
Times are in seconds, speeds in flop/s.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares


def speed_saturating(N: float, a: float, b: float) -> float:
    """a N / (b + N): tends to a for large systems."""
    return a * N / (b + N)


def fit_saturating(N, speed) -> tuple[float, float]:
    """(a, b) of a N / (b + N) by least squares on log speed, with a, b > 0."""
    N = np.asarray(N, dtype=float)
    speed = np.asarray(speed, dtype=float)
    ok = (N > 0) & (speed > 0)
    if ok.sum() < 2:
        raise ValueError("need two positive samples")
    N, ls = N[ok], np.log(speed[ok])

    def resid(x):
        return x[0] + np.log(N) - np.logaddexp(x[1], np.log(N)) - ls

    x0 = np.array([ls.max() + 0.1, np.log(np.median(N))])
    x = least_squares(resid, x0).x
    return float(np.exp(x[0])), float(np.exp(x[1]))


def calibrate_profile(ledgers, base: "HardwareProfile | None" = None) -> "HardwareProfile":
    """Host profile whose speed curves fit the measured times of preconditioner ledgers."""
    base = base or HardwareProfile()
    vals = asdict(base)
    for phase, fl, T in (("fac", "flfac", "factor_times"), ("sub", "flass", "solve_times")):
        for grid, pick in (("tri", slice(1, None)), ("poly", slice(0, 1))):
            N = np.concatenate([np.asarray(lg.sizes)[pick] for lg in ledgers])
            f = np.concatenate([np.asarray(getattr(lg, fl))[pick] for lg in ledgers])
            t = np.concatenate([np.asarray(getattr(lg, T))[pick] for lg in ledgers])
            ok = (t > 0) & (f > 0)
            vals[f"a_{phase}_{grid}"], vals[f"b_{phase}_{grid}"] = fit_saturating(N[ok], f[ok] / t[ok])
    return HardwareProfile(**vals)


def speed_affine_capped(N: float, a: float, b: float, S_max: float) -> float:
    return min(S_max, a * N + b)


def comm_time_one(N: float, P: int, alpha: float, beta: float, gamma: float) -> float:
    """One collective call: alpha log2(P) + beta N + gamma."""
    return alpha * math.log2(P) + beta * N + gamma


@dataclass(frozen=True)
class HardwareProfile:
    # speed curves a N / (b + N), capped by smax_*; defaults from the fitted cluster values
    a_fac_tri: float = 5.5827e10
    b_fac_tri: float = 6.4325e4
    a_fac_poly: float = 4.7066e10
    b_fac_poly: float = 2.1832e4
    a_sub_tri: float = 1.1884e9
    b_sub_tri: float = 6.7913e3
    a_sub_poly: float = 1.1009e9
    b_sub_poly: float = 3.7104e3
    smax_fac: float = math.inf
    smax_sub: float = math.inf
    # one gather / broadcast: alpha log2(P) + beta N + gamma
    alpha_g: float = 1.0e-5
    beta_g: float = 1.0e-9
    gamma_g: float = 2.0e-5
    alpha_b: float = 1.0e-5
    beta_b: float = 1.0e-9
    gamma_b: float = 2.0e-5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name[0] in "ab" and f.name[1] == "_" and not v > 0:
                raise ValueError(f"{f.name} must be positive")
            if f.name.startswith("smax") and not v > 0:
                raise ValueError(f"{f.name} must be positive")
            if f.name.startswith(("alpha", "beta", "gamma")) and v < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def speed(self, phase: str, grid: str, N: float) -> float:
        """phase in {fac, sub}; grid 'tri' for local systems, 'poly' for the coarse one."""
        a = getattr(self, f"a_{phase}_{grid}")
        b = getattr(self, f"b_{phase}_{grid}")
        return min(getattr(self, f"smax_{phase}"), speed_saturating(N, a, b))

    def gather(self, N: float, P: int) -> float:
        return comm_time_one(N, P, self.alpha_g, self.beta_g, self.gamma_g)

    def bcast(self, N: float, P: int) -> float:
        return comm_time_one(N, P, self.alpha_b, self.beta_b, self.gamma_b)

    def write(self, path) -> None:
        lines = [f"{k} = {v!r}" for k, v in asdict(self).items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "HardwareProfile":
        return cls.from_mapping(parse_key_values(Path(path).read_text()))

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "HardwareProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})


def parse_key_values(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v.strip("\"'")
    return out


def _check(values, what):
    if len(values) == 0:
        raise ValueError(f"{what}: empty per-system list")


def substitution_per_apply(values, mode: str) -> float:
    """Per-apply cost: additive runs all solves at once, hybrid runs the coarse solve after."""
    _check(values, "substitution")
    v = np.asarray(values, dtype=float)
    if mode == "additive":
        return float(v.max())
    if mode == "hybrid":
        return float((v[1:].max() if v.size > 1 else 0.0) + v[0])
    raise ValueError(f"unknown mode {mode!r}")


def step_flops(callC: int, iterL: int, flfac, flass, mode: str = "hybrid") -> float:
    """callC max_i flfac_i + iterL FFass."""
    _check(flfac, "factorization")
    return callC * float(np.max(flfac)) + iterL * substitution_per_apply(flass, mode)


def system_times(fl, sizes, profile: HardwareProfile, phase: str) -> np.ndarray:
    """Synthetic per-system times; entry 0 uses the coarse (polygonal) channel."""
    out = np.zeros(len(fl))
    for i, (f, N) in enumerate(zip(fl, sizes)):
        if N > 0 and f > 0:
            out[i] = f / profile.speed(phase, "poly" if i == 0 else "tri", N)
    return out


def step_walltime(callC: int, iterL: int, Tfac, Tass, mode: str = "hybrid") -> float:
    _check(Tfac, "factorization")
    return callC * float(np.max(Tfac)) + iterL * substitution_per_apply(Tass, mode)


def step_comm(iterL: int, N_fine: float, N_coarse: float, P: int, profile: HardwareProfile) -> float:
    return iterL * (profile.gather(N_fine, P) + profile.bcast(N_coarse, P))


def task_level_time(levels) -> float:
    """Sum over task levels of (max over tasks of the level + the level's comm)."""
    return float(sum(max(tasks) + comm for tasks, comm in levels))


@dataclass
class StepCost:
    step: int
    t_m: float
    Nhm: int
    M: int
    s: int
    NH: int
    iterN: int
    iterL: int
    callC: int
    flm: float
    Wtime: float
    Tcomm: float
    costs: float

    COLUMNS = ("step", "t_m", "Nhm", "M", "s", "NH", "iterN", "iterL", "callC", "flm", "Wtime", "Tcomm", "costs")

    def row(self) -> list[str]:
        out = []
        for c in self.COLUMNS:
            v = getattr(self, c)
            out.append(str(v) if isinstance(v, (int, np.integer)) else f"{v:.5e}")
        return out


def write_step_costs(path, rows: list[StepCost]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(StepCost.COLUMNS)
        for r in rows:
            w.writerow(r.row())


@dataclass
class SystemTimes:
    """Per-system flops and times of one slab (index 0 = coarse)."""

    sizes: np.ndarray
    flfac: np.ndarray
    flass: np.ndarray
    Tfac: np.ndarray
    Tass: np.ndarray


def slab_system_times(ledger, profile: HardwareProfile, mode: str = "synthetic") -> SystemTimes:
    """Per-system times from a preconditioner ledger, synthetic or measured."""
    if mode == "synthetic":
        Tfac = system_times(ledger.flfac, ledger.sizes, profile, "fac")
        Tass = system_times(ledger.flass, ledger.sizes, profile, "sub")
    elif mode == "measured":
        Tfac = np.asarray(ledger.factor_times, dtype=float)
        Tass = np.asarray(ledger.solve_times, dtype=float)
    else:
        raise ValueError(f"unknown timing mode {mode!r}")
    return SystemTimes(ledger.sizes, ledger.flfac, ledger.flass, Tfac, Tass)


def simulate_parallel_step(ledger, callC: int, iterL: int, iterN: int, Nh: int, M: int, s: int,
                           profile: HardwareProfile, timing: str = "synthetic", precond_mode: str = "hybrid",
                           step: int = 0, t_m: float = 0.0) -> tuple[StepCost, SystemTimes]:
    """Compose per-system costs of one slab into the simulated parallel StepCost."""
    st = slab_system_times(ledger, profile, timing)
    NH = int(ledger.sizes[0])
    flm = step_flops(callC, iterL, st.flfac, st.flass, precond_mode)
    Wtime = step_walltime(callC, iterL, st.Tfac, st.Tass, precond_mode)
    Tcomm = step_comm(iterL, Nh, NH, M, profile)
    return StepCost(step, t_m, Nh, M, s, NH, iterN, iterL, callC, flm, Wtime, Tcomm, Wtime + Tcomm), st
