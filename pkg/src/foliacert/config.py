"""Run configuration: YAML loading, validation and the shipped configs."""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .field_spec import VectorFieldSpec, parse_field
from .spectral import IN, OUT, UNKNOWN

REGION_MODES = ("lorenz-chain", "generic-box")
HEURISTIC = "heuristic"  # undeclared equilibria are classified by a long nearby orbit
SHIPPED = ("lorenz", "neg_x", "diagonal")


class ConfigError(ValueError):
    pass


@dataclass
class Declaration:
    point: tuple[float, ...]
    flag: str


@dataclass
class RunConfig:
    field_text: str
    field_path: str | None = None
    d_s: int | None = None
    search_box: list | None = None
    grid_density: int = 5
    declarations: list[Declaration] = field(default_factory=list)
    default_flag: str = HEURISTIC
    match_radius: float = 1e-2
    region_mode: str = "lorenz-chain"
    rounding: str = "paper"
    box: list | None = None
    box_grid: int = 41
    q_tol: float = 1e-4
    q_ceiling: float = 2.0
    tol: float = 1e-10
    seed: int = 0
    n_samples: int = 100
    transient: float = 50.0
    spacing: float = 1.0
    history: float = 5.0
    include_equilibria: bool = True
    sample_points: list | None = None
    fol_T: float = 0.5
    fol_steps: int = 20
    fol_rho: float = 0.2
    fol_grid: int = 65
    out_dir: str = "foliacert-out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("q_tol", "tol", "match_radius", "fol_T", "fol_rho"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.region_mode not in REGION_MODES:
            raise ConfigError(f"region mode must be one of {REGION_MODES}, got {self.region_mode!r}")
        if self.rounding not in ("paper", "exact"):
            raise ConfigError(f"rounding must be 'paper' or 'exact', got {self.rounding!r}")
        if self.region_mode == "generic-box" and self.box is None:
            raise ConfigError("generic-box mode needs a box")
        if self.default_flag not in (IN, OUT, UNKNOWN, HEURISTIC):
            raise ConfigError(f"unknown membership flag {self.default_flag!r}")
        for dcl in self.declarations:
            if dcl.flag not in (IN, OUT, UNKNOWN):
                raise ConfigError(f"unknown membership flag {dcl.flag!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.n_samples < 1 or self.fol_steps < 1 or self.fol_grid < 3 or self.box_grid < 2:
            raise ConfigError("sample counts and grid sizes must be positive")
        if self.history < 0 or self.transient < 0 or self.spacing <= 0:
            raise ConfigError("history and transient must be nonnegative, spacing positive")

    def spec(self) -> VectorFieldSpec:
        return parse_field(self.field_text, d_s=self.d_s, name=Path(self.field_path or "field").stem)

    def with_parameter(self, name: str, value: float) -> "RunConfig":
        """Copy with one ``param`` line of the field replaced."""
        pat = re.compile(rf"^(\s*param\s+{re.escape(name)}\s*=\s*)(.+?)\s*$", re.M)
        if not pat.search(self.field_text):
            raise ConfigError(f"field has no parameter {name!r}")
        new = copy.copy(self)
        new.field_text = pat.sub(lambda m: m.group(1) + repr(float(value)), self.field_text)
        return new

    def echo(self) -> dict:
        """Plain-data view of the configuration for reports."""
        return {
            "field_path": self.field_path,
            "field_text": self.field_text,
            "d_s": self.d_s,
            "equilibria": {
                "search_box": self.search_box,
                "grid_density": self.grid_density,
                "match_radius": self.match_radius,
                "default_flag": self.default_flag,
                "declare": [{"point": list(d.point), "flag": d.flag} for d in self.declarations],
            },
            "region": {"mode": self.region_mode, "rounding": self.rounding, "box": self.box, "grid": self.box_grid},
            "q_tol": self.q_tol,
            "q_ceiling": self.q_ceiling,
            "integrator": {"tol": self.tol},
            "seed": self.seed,
            "samples": {
                "count": self.n_samples,
                "transient": self.transient,
                "spacing": self.spacing,
                "history": self.history,
                "include_equilibria": self.include_equilibria,
                "points": self.sample_points,
            },
            "foliation": {"T": self.fol_T, "n_steps": self.fol_steps, "rho": self.fol_rho, "grid": self.fol_grid},
            "outputs": {"dir": self.out_dir},
        }


def _section(raw: dict, key: str) -> dict:
    v = raw.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    return v


def _box(v, what):
    if v is None:
        return None
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a list of [lo, hi] pairs") from exc
    if arr.ndim != 2 or arr.shape[1] != 2 or not np.all(np.isfinite(arr)) or np.any(arr[:, 1] < arr[:, 0]):
        raise ConfigError(f"{what} must be a list of finite [lo, hi] pairs")
    return arr.tolist()


def config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    base_dir = Path(base_dir or ".")
    if "field_text" in raw:
        text, path = str(raw["field_text"]), None
    elif "field" in raw:
        path = base_dir / str(raw["field"])
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read field file {path}: {exc}") from exc
        path = str(raw["field"])
    else:
        raise ConfigError("configuration needs 'field' (a path) or 'field_text'")
    eq = _section(raw, "equilibria")
    reg = _section(raw, "region")
    integ = _section(raw, "integrator")
    smp = _section(raw, "samples")
    fol = _section(raw, "foliation")
    out = _section(raw, "outputs")
    decl = []
    for item in eq.get("declare") or []:
        try:
            decl.append(Declaration(tuple(float(v) for v in item["point"]), str(item["flag"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad equilibrium declaration {item!r}") from exc
    try:
        cfg = RunConfig(
            field_text=text,
            field_path=path,
            d_s=None if raw.get("d_s") is None else int(raw["d_s"]),
            search_box=_box(eq.get("search_box"), "equilibria.search_box"),
            grid_density=int(eq.get("grid_density", 5)),
            declarations=decl,
            default_flag=str(eq.get("default_flag", HEURISTIC)),
            match_radius=float(eq.get("match_radius", 1e-2)),
            region_mode=str(reg.get("mode", "lorenz-chain")),
            rounding=str(reg.get("rounding", "paper")),
            box=_box(reg.get("box"), "region.box"),
            box_grid=int(reg.get("grid", 41)),
            q_tol=float(raw.get("q_tol", 1e-4)),
            q_ceiling=float(raw.get("q_ceiling", 2.0)),
            tol=float(integ.get("tol", 1e-10)),
            seed=raw.get("seed", 0),
            n_samples=int(smp.get("count", 100)),
            transient=float(smp.get("transient", 50.0)),
            spacing=float(smp.get("spacing", 1.0)),
            history=float(smp.get("history", 5.0)),
            include_equilibria=bool(smp.get("include_equilibria", True)),
            sample_points=smp.get("points"),
            fol_T=float(fol.get("T", 0.5)),
            fol_steps=int(fol.get("n_steps", 20)),
            fol_rho=float(fol.get("rho", 0.2)),
            fol_grid=int(fol.get("grid", 65)),
            out_dir=str(out.get("dir", "foliacert-out")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration value: {exc}") from exc
    if cfg.sample_points is not None:
        cfg.sample_points = _box_points(cfg.sample_points)
    return cfg


def _box_points(v):
    try:
        arr = np.atleast_2d(np.asarray(v, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError("samples.points must be a list of points") from exc
    if not np.all(np.isfinite(arr)):
        raise ConfigError("samples.points must be finite")
    return arr.tolist()


def load_config(path) -> RunConfig:
    """Load a YAML config; a bare shipped name (``lorenz``) is also accepted."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        p = shipped_config(str(path))
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {p} is not valid YAML: {exc}") from exc
    return config_from_dict(raw, p.parent)


def shipped_config(name: str) -> Path:
    if name not in SHIPPED:
        raise ConfigError(f"no shipped config {name!r}; choose from {SHIPPED}")
    return Path(str(resources.files("foliacert") / "configs" / f"{name}.yaml"))
