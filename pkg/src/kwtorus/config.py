"""Experiment configuration: YAML text with five blocks (torus, weight, run,
solver, output).  Validation collects every violation before failing."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

TASKS = ("green", "minimize", "sweep", "testfn", "probe-beta", "probe-ray", "diagnose")
MINIMIZING = ("minimize", "sweep")


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))


@dataclass
class TorusBlock:
    Lx: float = 1.0
    Ly: float = 1.0
    N: int = 128


@dataclass
class WeightBlock:
    kind: str = "uniform"
    a: float = 0.0
    kappa: float = 1.0
    x0: float = 0.0
    y0: float = 0.0


@dataclass
class RunBlock:
    stages: list = field(default_factory=lambda: ["green"])
    alpha: float = 0.0
    ell: int = 0
    eps: Optional[float] = None
    eps_schedule: Optional[list] = None
    eps_grid: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    beta: Optional[float] = None
    ks: list = field(default_factory=lambda: [1e2, 1e3, 1e4])
    r: float = 0.05
    ts: list = field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0, 20.0, 40.0])
    p: Optional[list] = None
    method: str = "split"
    input: Optional[str] = None
    green: Optional[str] = None
    delta: float = 0.2
    dump_fields: bool = False


@dataclass
class SolverBlock:
    tol: float = 1e-9
    max_iter: int = 20000
    bounded_spread: float = 0.5
    window: int = 3


@dataclass
class OutputBlock:
    directory: Optional[str] = None
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    torus: TorusBlock = field(default_factory=TorusBlock)
    weight: WeightBlock = field(default_factory=WeightBlock)
    run: RunBlock = field(default_factory=RunBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def sha256(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


_BLOCKS = {"torus": TorusBlock, "weight": WeightBlock, "run": RunBlock,
           "solver": SolverBlock, "output": OutputBlock}

_FLOAT_KEYS = {("torus", "Lx"), ("torus", "Ly"), ("weight", "a"), ("weight", "kappa"),
               ("weight", "x0"), ("weight", "y0"), ("run", "alpha"), ("run", "eps"),
               ("run", "beta"), ("run", "r"), ("run", "delta"), ("solver", "tol"),
               ("solver", "bounded_spread")}
_INT_KEYS = {("torus", "N"), ("run", "ell"), ("solver", "max_iter"), ("solver", "window")}
_FLOAT_LISTS = {("run", "eps_schedule"), ("run", "eps_grid"), ("run", "ks"), ("run", "ts"), ("run", "p")}


def _as_float(v):
    if isinstance(v, bool):
        raise ValueError("boolean where a number was expected")
    return float(v)


def _as_int(v):
    if isinstance(v, bool):
        raise ValueError("boolean where an integer was expected")
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def from_dict(raw: Optional[dict]) -> ExperimentConfig:
    """Build and validate a config; raises :class:`ConfigError` listing every problem."""
    raw = copy.deepcopy(raw or {})
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    blocks = {}
    for name, cls in _BLOCKS.items():
        sub = raw.pop(name, None) or {}
        if not isinstance(sub, dict):
            errors.append(f"{name}: must be a mapping")
            sub = {}
        known = set(cls.__dataclass_fields__)
        kwargs = {}
        for key, val in sub.items():
            path = f"{name}.{key}"
            if key not in known:
                errors.append(f"{path}: unknown key")
                continue
            try:
                if (name, key) in _FLOAT_KEYS:
                    val = None if val is None else _as_float(val)
                elif (name, key) in _INT_KEYS:
                    val = _as_int(val)
                elif (name, key) in _FLOAT_LISTS:
                    val = None if val is None else [_as_float(x) for x in _listify(val)]
                elif key in ("stages", "formats"):
                    val = [str(x) for x in _listify(val)]
            except (TypeError, ValueError) as exc:
                errors.append(f"{path}: {exc}")
                continue
            kwargs[key] = val
        blocks[name] = cls(**kwargs)
    for key in raw:
        errors.append(f"{key}: unknown key")
    cfg = ExperimentConfig(**blocks)
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _listify(val):
    if isinstance(val, str):
        return [x for x in val.replace(",", " ").split() if x]
    if isinstance(val, (list, tuple)):
        return list(val)
    return [val]


def validate(cfg: ExperimentConfig) -> list[str]:
    from .surface import distinct_eigenvalue, first_eigenvalue, TorusGeometry

    errs = []
    t = cfg.torus
    geom = None
    try:
        geom = TorusGeometry(t.Lx, t.Ly, t.N)
    except ValueError as exc:
        errs.append(f"torus: {exc}")
    w = cfg.weight
    if w.kind not in ("uniform", "cosine", "bump"):
        errs.append(f"weight.kind: {w.kind!r} is not one of uniform, cosine, bump")
    elif w.kind == "cosine" and not abs(w.a) < 1:
        errs.append("weight.a: cosine weight needs |a| < 1")
    elif w.kind == "bump" and not w.a > -1:
        errs.append("weight.a: bump weight needs a > -1")
    r = cfg.run
    for s in r.stages:
        if s not in TASKS:
            errs.append(f"run.stages: unknown stage {s!r}")
    if r.ell < 0:
        errs.append("run.ell: must be >= 0")
    if r.method not in ("split", "extrapolate"):
        errs.append(f"run.method: {r.method!r} is not split or extrapolate")
    if r.eps is not None and not 0 < r.eps < 1:
        errs.append("run.eps: must lie in (0, 1)")
    if r.eps_schedule is not None:
        if any(e <= 0 or e >= 1 for e in r.eps_schedule):
            errs.append("run.eps_schedule: entries must lie in (0, 1)")
        if any(b >= a for a, b in zip(r.eps_schedule, r.eps_schedule[1:])):
            errs.append("run.eps_schedule: must be strictly decreasing")
    if any(b >= a for a, b in zip(r.eps_grid, r.eps_grid[1:])):
        errs.append("run.eps_grid: must be strictly decreasing")
    if any(b <= a for a, b in zip(r.ks, r.ks[1:])):
        errs.append("run.ks: must be increasing")
    if r.p is not None and len(r.p) != 2:
        errs.append("run.p: needs two coordinates")
    if "probe-beta" in r.stages and (r.beta is None or not r.beta > 8 * math.pi):
        errs.append("run.beta: the divergence probe needs beta > 8 pi")
    if "diagnose" in r.stages and not r.input and "minimize" not in r.stages:
        errs.append("run.input: the diagnose stage needs a field dump or a minimize stage")
    if "sweep" in r.stages and not r.eps_schedule:
        errs.append("run.eps_schedule: the sweep stage needs a schedule")
    if "minimize" in r.stages and r.eps is None:
        errs.append("run.eps: the minimize stage needs eps")
    if geom is not None and any(s in MINIMIZING for s in r.stages):
        try:
            ceiling = first_eigenvalue(geom) if r.ell == 0 else distinct_eigenvalue(geom, r.ell + 1)
            if not r.alpha < ceiling:
                which = "lambda_1" if r.ell == 0 else f"lambda_{r.ell + 1}"
                errs.append(f"run.alpha: minimization requires alpha < {which} = {ceiling:.10g}, got {r.alpha}")
        except ValueError as exc:
            errs.append(f"run.ell: {exc}")
    if "probe-ray" in r.stages and geom is not None and r.alpha < first_eigenvalue(geom) * (1 - 1e-14):
        errs.append("run.alpha: the eigen-ray probe needs alpha >= lambda_1")
    s = cfg.solver
    if not s.tol > 0:
        errs.append("solver.tol: must be positive")
    if s.max_iter < 1:
        errs.append("solver.max_iter: must be >= 1")
    for fmt in cfg.output.formats:
        if fmt not in ("csv", "json"):
            errs.append(f"output.formats: unknown format {fmt!r}")
    return errs


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"parse error: {exc}"]) from exc
    return from_dict(raw)


def merge_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Apply dotted-path overrides (``{"run.alpha": 3.0}``) and re-validate."""
    raw = cfg.to_dict()
    for dotted, val in overrides.items():
        if val is None:
            continue
        block, key = dotted.split(".", 1)
        raw.setdefault(block, {})[key] = val
    return from_dict(raw)
