"""Run configuration: a flat `section.key = value` file.

Recognised keys and defaults are listed in KEYS. Unknown keys are an error,
so typos do not silently fall back to defaults. `profile.<name>` keys
override single HardwareProfile fields; `profile.path` loads a profile file
first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..costmodel import HardwareProfile, parse_key_values


class ConfigError(ValueError):
    pass


def _pair(text: str) -> tuple[float, float]:
    parts = [float(v) for v in str(text).replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return parts[0], parts[1]


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # problem
    eps: float = 0.01
    flux: str = "burgers"
    velocity: tuple[float, float] = (1.0, 0.5)
    C_W: float = 20.0
    initial: str = "sine"
    # mesh and schedule
    nx: int = 12
    ny: int = 12
    degree: int = 2
    q: int = 1
    adapt_mesh: bool = True
    refine_depth: int = 1
    center_start: tuple[float, float] = (0.2, 0.2)
    center_end: tuple[float, float] = (0.8, 0.8)
    radius_start: float = 0.1
    radius_end: float = 0.45
    remesh_every: int = 2
    mesh_file: str | None = None
    # time
    steps: int = 40
    tau: float = 0.02
    # strategy
    strategy: str = "adapt"
    M: int = 4
    s: int | None = None
    kappa: float = 2500.0
    budget: int = 64
    n_min: int = 10
    mlev: int = 5
    # solver
    mode: str = "hybrid"
    C_L: float = 1e-4
    max_gmres: int = 500
    damping: float = 0.65
    refresh: float = 0.5
    newton_tol: float = 1e-6
    newton_max: int = 30
    timing: str = "synthetic"
    repeats: int = 3
    # hardware profile and output
    profile: HardwareProfile = field(default_factory=HardwareProfile)
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.eps > 0, "problem.eps must be positive"),
            (self.flux in ("burgers", "linear", "none"), "problem.flux must be burgers, linear or none"),
            (self.initial in ("sine", "bump"), "problem.initial must be sine or bump"),
            (self.nx >= 1 and self.ny >= 1, "mesh.nx and mesh.ny must be >= 1"),
            (self.degree >= 1 and self.q >= 0, "mesh.degree >= 1 and mesh.q >= 0 required"),
            (self.refine_depth >= 0 and self.remesh_every >= 1, "bad refinement schedule"),
            (self.steps >= 1 and self.tau > 0, "time.steps >= 1 and time.tau > 0 required"),
            (self.strategy in ("fix", "equi", "adapt"), "strategy.kind must be fix, equi or adapt"),
            (self.M >= 1 and (self.s is None or self.s >= 1), "strategy.M and strategy.s must be positive"),
            (self.kappa >= 1, "strategy.kappa must be >= 1"),
            (self.budget >= 1 and self.n_min >= 1 and self.mlev >= 1, "budget, n_min and mlev must be positive"),
            (self.mode in ("hybrid", "additive"), "solver.mode must be hybrid or additive"),
            (0 < self.C_L < 1, "solver.C_L must lie in (0, 1)"),
            (self.timing in ("synthetic", "measured"), "solver.timing must be synthetic or measured"),
            (self.repeats >= 1, "solver.repeats must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def t_end(self) -> float:
        return self.steps * self.tau

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# file key -> (attribute, converter)
KEYS = {
    "problem.eps": ("eps", float),
    "problem.flux": ("flux", str),
    "problem.velocity": ("velocity", _pair),
    "problem.C_W": ("C_W", float),
    "problem.initial": ("initial", str),
    "mesh.nx": ("nx", int),
    "mesh.ny": ("ny", int),
    "mesh.degree": ("degree", int),
    "mesh.q": ("q", int),
    "mesh.adapt": ("adapt_mesh", _bool),
    "mesh.refine_depth": ("refine_depth", int),
    "mesh.center_start": ("center_start", _pair),
    "mesh.center_end": ("center_end", _pair),
    "mesh.radius_start": ("radius_start", float),
    "mesh.radius_end": ("radius_end", float),
    "mesh.remesh_every": ("remesh_every", int),
    "mesh.file": ("mesh_file", str),
    "time.steps": ("steps", int),
    "time.tau": ("tau", float),
    "strategy.kind": ("strategy", str),
    "strategy.M": ("M", int),
    "strategy.s": ("s", int),
    "strategy.kappa": ("kappa", float),
    "strategy.budget": ("budget", int),
    "strategy.n_min": ("n_min", int),
    "strategy.mlev": ("mlev", int),
    "solver.mode": ("mode", str),
    "solver.C_L": ("C_L", float),
    "solver.max_gmres": ("max_gmres", int),
    "solver.damping": ("damping", float),
    "solver.refresh": ("refresh", float),
    "solver.newton_tol": ("newton_tol", float),
    "solver.newton_max": ("newton_max", int),
    "solver.timing": ("timing", str),
    "solver.repeats": ("repeats", int),
    "run.seed": ("seed", int),
    "output.dir": ("output_dir", str),
}


def config_from_mapping(values: dict[str, str], base_dir: Path | None = None) -> RunConfig:
    kw = {}
    prof_over = {}
    prof_path = None
    for key, raw in values.items():
        if key == "profile.path":
            prof_path = Path(raw)
            if base_dir is not None and not prof_path.is_absolute():
                prof_path = base_dir / prof_path
        elif key.startswith("profile."):
            prof_over[key.split(".", 1)[1]] = raw
        elif key in KEYS:
            attr, conv = KEYS[key]
            try:
                kw[attr] = conv(raw)
            except ValueError as err:
                raise ConfigError(f"{key}: {err}") from err
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    try:
        profile = HardwareProfile.read(prof_path) if prof_path else HardwareProfile()
        if prof_over:
            merged = {f.name: getattr(profile, f.name) for f in fields(profile)}
            unknown = set(prof_over) - set(merged)
            if unknown:
                raise ConfigError(f"unknown profile keys: {sorted(unknown)}")
            merged.update({k: float(v) for k, v in prof_over.items()})
            profile = HardwareProfile(**merged)
    except (OSError, ValueError) as err:
        raise ConfigError(f"hardware profile: {err}") from err
    return RunConfig(profile=profile, **kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        values = parse_key_values(text)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return config_from_mapping(values, path.parent)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for key, (attr, _) in KEYS.items():
        v = getattr(cfg, attr)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = f"{v[0]!r}, {v[1]!r}"
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{key} = {v}")
    for f in fields(cfg.profile):
        v = getattr(cfg.profile, f.name)
        if not math.isinf(v):
            lines.append(f"profile.{f.name} = {v!r}")
    return "\n".join(lines) + "\n"
