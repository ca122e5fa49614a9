"""Certificate reports and the command pipelines behind the CLI.

Reports are nested dicts with a fixed key order.  Every numeric result is
stored as ``{"value": ..., "provenance": ...}`` and every section carries a
tag: CERTIFIED-CONDITIONAL for the inequality chain, EMPIRICAL for anything
sampled or integrated.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import cocycle as cy
from . import foliation as fo
from .config import HEURISTIC, ConfigError, RunConfig
from .dissipativity import NoCertifiableQ, max_certified_q
from .field_spec import FieldValidationError, lorenz
from .expr import ExpressionError
from .region_bounds import (
    InvalidParameterError,
    generic_certificate,
    lorenz_chain,
    lorenz_ellipsoid_bound,
)
from .spectral import (
    IN,
    UNKNOWN,
    classify_membership,
    eigen_data,
    equilibrium_q_bound,
    find_equilibria,
)

VERSION = "foliacert-report/1"
CERTIFIED = "CERTIFIED-CONDITIONAL"
EMPIRICAL = "EMPIRICAL"
CONDITIONALITY = "conditional on Lambda being a sectional hyperbolic attractor"
EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_INVALID = 0, 2, 3, 4
JUMP_FLAG = 0.5


def entry(value, provenance: str) -> dict:
    return {"value": value, "provenance": provenance}


@dataclass
class CertificateReport:
    tree: dict
    exit_code: int
    timings: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.tree["status"]

    def document(self, canonical: bool = True) -> dict:
        doc = dict(self.tree)
        if not canonical:
            doc["timings"] = {k: entry(v, "wall clock, seconds") for k, v in self.timings.items()}
        return doc

    def to_json(self, canonical: bool = True) -> str:
        return dumps(self.document(canonical))

    def to_text(self, canonical: bool = True) -> str:
        return text_mirror(self.document(canonical))

    def write(self, path, canonical: bool = True) -> tuple[Path, Path]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(canonical))
        txt = path.with_suffix(".txt")
        txt.write_text(self.to_text(canonical))
        return path, txt


# --------------------------------------------------------------------------
# serialization


def _scalar(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return json.dumps(f"{v.numerator}/{v.denominator}" if v.denominator != 1 else str(v.numerator))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return '"nan"'
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return format(v, ".17g")
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, tuple):
        return list(v)
    return v


def dumps(obj, indent: int = 2) -> str:
    """JSON with insertion key order and 17 significant digits for floats."""
    out: list[str] = []

    def emit(v, level):
        v = _plain(v)
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(v, dict):
            if not v:
                out.append("{}")
                return
            out.append("{\n")
            for n, (k, item) in enumerate(v.items()):
                out.append(f"{pad}{json.dumps(str(k))}: ")
                emit(item, level + 1)
                out.append(",\n" if n < len(v) - 1 else "\n")
            out.append(end + "}")
        elif isinstance(v, list):
            if not v:
                out.append("[]")
                return
            if all(not isinstance(_plain(x), (dict, list)) for x in v):
                out.append("[" + ", ".join(_scalar(x) for x in v) + "]")
                return
            out.append("[\n")
            for n, item in enumerate(v):
                out.append(pad)
                emit(item, level + 1)
                out.append(",\n" if n < len(v) - 1 else "\n")
            out.append(end + "]")
        else:
            out.append(_scalar(v))

    emit(obj, 0)
    return "".join(out) + "\n"


def text_mirror(doc: dict) -> str:
    """Indented human-readable rendering of the report tree."""
    lines: list[str] = []

    def fmt(v):
        v = _plain(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        s = _scalar(v)
        return s[1:-1] if s.startswith('"') else s

    def walk(v, level, key):
        pad = "  " * level
        v = _plain(v)
        if isinstance(v, dict) and set(v) == {"value", "provenance"} and not isinstance(_plain(v["value"]), dict):
            lines.append(f"{pad}{key}: {fmt(v['value'])}    [{v['provenance']}]")
        elif isinstance(v, dict):
            lines.append(f"{pad}{key}:")
            for k, item in v.items():
                walk(item, level + 1, k)
        elif isinstance(v, list) and any(isinstance(_plain(x), dict) for x in v):
            lines.append(f"{pad}{key}:")
            for n, item in enumerate(v):
                walk(item, level + 1, f"[{n}]")
        elif isinstance(v, str) and "\n" in v:
            lines.append(f"{pad}{key}: |")
            lines.extend(f"{pad}  {ln}" for ln in v.rstrip("\n").split("\n"))
        else:
            lines.append(f"{pad}{key}: {fmt(v)}")

    for k, item in doc.items():
        walk(item, 0, k)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# certify


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}
        self.current = "config"

    def run(self, name, fn, *args, **kwargs):
        self.current = name
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001  reported with the failing stage
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def _exit_for(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, NoCertifiableQ):
        return "refuted", EXIT_FAIL
    if isinstance(exc, (ConfigError, InvalidParameterError, FieldValidationError, ExpressionError)):
        return "failed", EXIT_INVALID
    if isinstance(exc, ValueError):
        return "failed", EXIT_INVALID
    return "failed", EXIT_INCONCLUSIVE


def _flag_for(cfg: RunConfig, eq, spec=None) -> str:
    """Declared flag of the nearest matching declaration, else the configured default."""
    loc = eq.location
    best, flag = math.inf, cfg.default_flag
    for d in cfg.declarations:
        if len(d.point) != len(loc):
            raise ConfigError(f"declared point {d.point} has the wrong dimension")
        dist = float(np.linalg.norm(np.subtract(loc, d.point)))
        if dist <= cfg.match_radius and dist < best:
            best, flag = dist, d.flag
    if flag == HEURISTIC:
        flag = classify_membership(spec, eq, seed=cfg.seed)
    return flag


def _lorenz_parameters(spec):
    """``(sigma, r, b)`` if the field is the Lorenz family with those parameters."""
    try:
        sigma, r, b = (spec.parameters[k] for k in ("sigma", "r", "b"))
    except KeyError as exc:
        raise ConfigError("lorenz-chain mode needs parameters sigma, r and b") from exc
    ref = lorenz(str(sigma), str(r), str(b))
    if spec.dimension != 3 or spec.d_s != 1:
        raise ConfigError("lorenz-chain mode needs a three-dimensional field with d_s = 1")
    pts = np.random.default_rng(12345).uniform(-30, 30, (32, 3))
    scale = 1 + np.abs(ref.f(pts)).max()
    if np.abs(spec.f(pts) - ref.f(pts)).max() > 1e-12 * scale:
        raise ConfigError("lorenz-chain mode: the field is not the Lorenz system with its declared parameters")
    return sigma, r, b


def _search_box(cfg: RunConfig, spec):
    if cfg.search_box is not None:
        if len(cfg.search_box) != spec.dimension:
            raise ConfigError("equilibria.search_box has the wrong dimension")
        return cfg.search_box
    if cfg.box is not None:
        return cfg.box
    raise ConfigError("equilibria.search_box is required without a region box")


def _equilibria(stages, cfg, spec):
    found = stages.run("find_equilibria", find_equilibria, spec, _search_box(cfg, spec), cfg.grid_density)
    rows, used = [], []
    for eq in found:
        eq = eq.with_flag(stages.run("membership", _flag_for, cfg, eq, spec))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sd = stages.run("eigen_data", eigen_data, spec, eq)
        included = eq.in_attractor in (IN, UNKNOWN)
        try:
            qb = equilibrium_q_bound(sd, spec.d_s)
        except ValueError:
            qb = math.nan
        rows.append({
            "location": entry(list(eq.location), "Newton iteration, residual below 1e-10"),
            "residual": entry(eq.residual, "||G(x)|| at the converged point"),
            "flag": eq.in_attractor,
            "in_cond_a": included,
            "eigenvalues": entry([[z.real, z.imag] for z in sd.eigenvalues],
                                 "dense eigenvalue solver on DG(x), sorted by real part"),
            "trace": entry(float(np.trace(spec.jac(np.array(eq.location)))), "trace of DG(x)"),
            "hyperbolic": sd.hyperbolic,
            "lorenz_like": sd.lorenz_like,
            "q_bound": entry(qb, "sup q with Re(l_1 - l_{d_s+1} + q l_d) < 0"),
            "warnings": [str(w.message) for w in caught],
        })
        if included:
            used.append(sd)
    return rows, used


def _bound(stages, cfg, spec):
    if cfg.region_mode == "lorenz-chain":
        sigma, r, b = stages.run("lorenz_chain_parameters", _lorenz_parameters, spec)
        stages.run("lorenz_ellipsoid_bound", lorenz_ellipsoid_bound, b, r)
        return stages.run("lorenz_chain", lorenz_chain, sigma, b, r, rounding=cfg.rounding)
    if len(cfg.box) != spec.dimension:
        raise StageError("generic_box", ConfigError("region.box has the wrong dimension"))
    return stages.run("generic_box", generic_certificate, spec, cfg.box, cfg.box_grid)


def _bound_section(bound) -> dict:
    reg = bound.region
    steps = []
    for s in reg.steps:
        item = {"name": s.name, "value": entry(s.value, s.provenance)}
        if s.exact is not None:
            item["exact"] = entry(Fraction(s.exact), f"exact rational form: {s.provenance}")
        steps.append(item)
    return {
        "tag": CERTIFIED,
        "kind": reg.kind,
        "parameters": {k: entry(v, "field parameter") for k, v in reg.parameters.items()},
        "steps": steps,
        "div_sup": entry(bound.div_sup, "upper bound of div G on the trapping region"),
        "frob_sup": entry(bound.frob_sup, "upper bound of ||DG||_2 on the trapping region"),
    }


def _q_section(res) -> dict:
    cert = res.certificate
    return {
        "tag": CERTIFIED,
        "q_max": entry(res.q_max, f"bisection truncated to q_tol = {res.q_tol:g}"),
        "q_raw": entry(res.q_raw, "bisection lower end before truncation"),
        "binding": res.binding,
        "q1": entry(res.q1, "min over included equilibria of -Re(l_1 - l_{d_s+1}) / Re l_d"),
        "q2": entry(res.q2, "(1 - div_sup / frob_sup) / d_s"),
        "closed_form": entry(res.closed_form, "min(q1, q2, ceiling)"),
        "ceiling": entry(res.ceiling, "configured ceiling"),
        "cond_a_margins": entry(list(cert.cond_a), "Re(l_1 - l_{d_s+1} + q l_d) at q_max, each < 0"),
        "cond_a_vacuous": cert.cond_a_vacuous,
        "cond_b_margin": entry(cert.cond_b, "div_sup + (d_s q - 1) frob_sup at q_max, < 0"),
    }


def _base_tree(command: str, cfg: RunConfig | None) -> dict:
    return {
        "version": VERSION,
        "command": command,
        "status": "running",
        "exit_code": None,
        "seed": cfg.seed if cfg is not None else None,
        "config": cfg.echo() if cfg is not None else None,
    }


def _fail(tree, stage, exc) -> int:
    status, code = _exit_for(exc)
    tree["status"] = status
    tree["exit_code"] = code
    tree["failure"] = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    return code


def cmd_certify(config: RunConfig, *, q_tol: float | None = None, exact: bool = False) -> CertificateReport:
    """Equilibria, spectra, bound chain and the largest certified q."""
    stages = _Stages()
    tree = _base_tree("certify", config)
    try:
        if q_tol is not None and not (q_tol > 0):
            raise StageError("config", ConfigError("q_tol must be positive"))
        if exact:
            config = copy.copy(config)
            config.rounding = "exact"
            tree["config"] = config.echo()
        spec = stages.run("parse_field", config.spec)
        rows, used = _equilibria(stages, config, spec)
        tree["spectral"] = {"tag": CERTIFIED, "d_s": spec.d_s, "equilibria": rows}
        bound = _bound(stages, config, spec)
        tree["bound_chain"] = _bound_section(bound)
        res = stages.run("max_certified_q", max_certified_q, spec.d_s, used, bound,
                         q_tol if q_tol is not None else config.q_tol, config.q_ceiling)
    except StageError as err:
        code = _fail(tree, err.stage, err.exc)
        return CertificateReport(tree, code, stages.timings)
    tree["dissipativity"] = _q_section(res)
    tree["headline"] = {
        "tag": CERTIFIED,
        "q_max": entry(res.q_max, "largest q passing both strong-dissipativity clauses"),
        "statement": f"the stable foliation is C^q for q = {res.q_max:g}, {CONDITIONALITY}",
    }
    tree["status"] = "certified"
    tree["exit_code"] = EXIT_PASS
    return CertificateReport(tree, EXIT_PASS, stages.timings)


# --------------------------------------------------------------------------
# bunching


def _samples(config: RunConfig, spec, n_samples: int, seed: int, stages) -> cy.SampleSet:
    if config.sample_points is not None:
        pts = np.array(config.sample_points, dtype=float)
        if pts.shape[1] != spec.dimension:
            raise StageError("samples", ConfigError("samples.points has the wrong dimension"))
        pts = pts[:n_samples]
        return cy.SampleSet(pts, config.history, ["point"] * len(pts), seed)
    eqs = []
    if config.include_equilibria:
        found = stages.run("find_equilibria", find_equilibria, spec, _search_box(config, spec), config.grid_density)
        eqs = [e.location for e in found if stages.run("membership", _flag_for, config, e, spec) == IN]
    return stages.run("samples", cy.attractor_samples, spec, n_samples, seed=seed, transient=config.transient,
                      spacing=config.spacing, history=config.history, equilibria=eqs[:n_samples], tol=config.tol)


def _stats(v: np.ndarray, what: str) -> dict:
    return {
        "min": entry(float(v.min()), f"{EMPIRICAL}: min of {what} over samples"),
        "mean": entry(float(v.mean()), f"{EMPIRICAL}: mean of {what} over samples"),
        "max": entry(float(v.max()), f"{EMPIRICAL}: max of {what} over samples"),
    }


def cmd_bunching(config: RunConfig, q: float, t_list, n_samples: int | None = None, *,
                 seed: int | None = None, jobs: int | None = None) -> CertificateReport:
    """Bunching exponent statistics; passes when every sample is negative at the largest t."""
    stages = _Stages()
    seed = config.seed if seed is None else seed
    tree = _base_tree("bunching", config)
    tree["seed"] = seed
    n_samples = config.n_samples if n_samples is None else n_samples
    try:
        t_list = sorted(float(t) for t in t_list)
        if not t_list or t_list[0] <= 0 or not q > 0 or n_samples < 1:
            raise StageError("config", ConfigError("need q > 0, positive times and at least one sample"))
        spec = stages.run("parse_field", config.spec)
        samples = _samples(config, spec, n_samples, seed, stages)
        cc = stages.run("sample_cocycle", cy.sample_cocycle, spec, samples, t_list[-1],
                        tol=config.tol, jobs=jobs)
    except StageError as err:
        code = _fail(tree, err.stage, err.exc)
        return CertificateReport(tree, code, stages.timings)
    per_t = []
    last = None
    for t in t_list:
        j = cc.index(t)
        eta = cc.eta(cc.i0, j, q)
        per_t.append({"t": t, "eta": _stats(eta, f"eta_t at q = {q:g}"),
                      "negative": int((eta < 0).sum())})
        last = eta
    passed = bool(np.all(last < 0))
    worst = int(np.argmax(last))
    tree["bunching"] = {
        "tag": EMPIRICAL,
        "q": q,
        "n_samples": len(samples),
        "labels": {lab: samples.labels.count(lab) for lab in sorted(set(samples.labels))},
        "per_t": per_t,
        "criterion": "eta_t < 0 at every sample for the largest t",
        "worst_sample": {
            "label": samples.labels[worst],
            "point": entry(cc.points(cc.i0)[worst].tolist(), f"{EMPIRICAL}: sample point"),
            "eta": entry(float(last[worst]), f"{EMPIRICAL}: eta_t at the largest t"),
        },
        "passed": passed,
    }
    tree["status"] = "pass" if passed else "fail"
    tree["exit_code"] = EXIT_PASS if passed else EXIT_FAIL
    return CertificateReport(tree, tree["exit_code"], stages.timings)


# --------------------------------------------------------------------------
# foliate


def read_points(path) -> np.ndarray:
    """Points file: one point per row, comma or whitespace separated, ``#`` comments."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            try:
                rows.append([float(v) for v in line.replace(",", " ").split()])
            except ValueError as exc:
                raise ConfigError(f"bad point row {line!r} in {path}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path} must hold rows of equal length")
    return np.array(rows)


def foliate_point(spec, x, config: RunConfig, rho: float, grid: int, seed: int) -> dict:
    """Charts, graph transform and contraction test for one base point."""
    orbit = fo.build_charts(spec, x, T=config.fol_T, n_steps=config.fol_steps, rho=rho,
                            seed=seed, tol=min(config.tol, 1e-11))
    order = 3 if spec.d_s == 1 else 1
    hp = fo.hadamard_perron(orbit.maps, orbit.hp, rho, grid_N=grid, order=order)
    frame, patch = orbit.frames[0][0], hp.patches[0][0]
    leaf = fo.leaf_contraction_test(spec, frame.base, (frame, patch))
    control = fo.leaf_contraction_test(spec, frame.base, (frame, patch), offset=0.01 * rho * frame.Pcu[:, 0])
    Es_ref = cy.estimate_Es(spec, frame.base, t_back=10.0, seed=seed + 1)
    return {
        "orbit": orbit, "hp": hp, "leaf": leaf, "control": control,
        "tangency": fo.tangency_angle(frame, patch, Es_ref),
    }


def cmd_foliate(config: RunConfig, base_points, *, rho: float | None = None, grid: int | None = None,
                out_dir=None, seed: int | None = None) -> CertificateReport:
    """Local stable leaves at each base point, with per-point failures isolated."""
    stages = _Stages()
    seed = config.seed if seed is None else seed
    rho = config.fol_rho if rho is None else rho
    grid = config.fol_grid if grid is None else grid
    tree = _base_tree("foliate", config)
    tree["seed"] = seed
    try:
        if not rho > 0 or grid < 3:
            raise StageError("config", ConfigError("rho must be positive and grid at least 3"))
        spec = stages.run("parse_field", config.spec)
        pts = np.atleast_2d(np.asarray(base_points, dtype=float))
        if pts.shape[1] != spec.dimension:
            raise StageError("config", ConfigError("base points have the wrong dimension"))
    except StageError as err:
        code = _fail(tree, err.stage, err.exc)
        return CertificateReport(tree, code, stages.timings)
    out = Path(out_dir) if out_dir is not None else None
    results = []
    for k, x in enumerate(pts):
        row = {"index": k, "point": entry(x.tolist(), "input")}
        try:
            r = stages.run("foliate", foliate_point, spec, x, config, rho, grid, seed + k)
        except StageError as err:
            row["status"] = "failed"
            row["failure"] = {"error": type(err.exc).__name__, "message": str(err.exc)}
            results.append(row)
            continue
        leaf, control, hp = r["leaf"], r["control"], r["hp"]
        ok = leaf.passed and leaf.fitted_rate < 1 and not control.passed
        row["status"] = "pass" if ok else "fail"
        row["sweeps"] = hp.sweeps
        row["invariance_defect"] = entry(hp.invariance_defect, f"{EMPIRICAL}: sup |f_n(graph) - graph| after the last sweep")
        row["kappa"] = entry(float(r["orbit"].kappa.max()), f"{EMPIRICAL}: cu nonlinearity relative to the co-norm")
        row["fitted_rate"] = entry(leaf.fitted_rate, f"{EMPIRICAL}: exp of the log-ratio slope per unit time")
        row["fitted_C"] = entry(leaf.fitted_C, f"{EMPIRICAL}: sup ratio / nu^t with nu = {leaf.nu_claim:g}")
        row["monotone"] = leaf.monotone
        row["control_C"] = entry(control.fitted_C, f"{EMPIRICAL}: off-leaf control, should fail")
        row["tangency"] = entry(r["tangency"], f"{EMPIRICAL}: angle between the leaf tangent and an independent E^s")
        if out is not None and spec.d_s == 1:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"leaf_{k:03d}.csv"
            fo.export_leaf_csv(path, r["orbit"].frames[0][0], hp.patches[0][0])
            row["leaf_csv"] = path.name
        results.append(row)
    n_ok = sum(r["status"] == "pass" for r in results)
    tree["foliation"] = {
        "tag": EMPIRICAL,
        "rho": rho,
        "grid": grid,
        "points": results,
        "passed": n_ok,
        "total": len(results),
    }
    tree["status"] = "pass" if n_ok else "fail"
    tree["exit_code"] = EXIT_PASS if n_ok else EXIT_FAIL
    return CertificateReport(tree, tree["exit_code"], stages.timings)


# --------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    value: float
    status: str
    q_max: float | None
    q1: float | None
    q2: float | None
    binding: str
    stage: str
    flag: str = ""


def _sweep_point(config: RunConfig, parameter: str, value: float) -> SweepRow:
    try:
        cfg = config.with_parameter(parameter, value)
    except ConfigError as exc:
        return SweepRow(value, "failed", None, None, None, "", f"config: {exc}")
    rep = cmd_certify(cfg)
    if rep.status != "certified":
        fail = rep.tree.get("failure", {})
        return SweepRow(value, rep.status, None, None, None, "", fail.get("stage", ""))
    d = rep.tree["dissipativity"]
    return SweepRow(value, "certified", d["q_max"]["value"], d["q1"]["value"], d["q2"]["value"], d["binding"], "")


def cmd_sweep(config: RunConfig, parameter: str, lo: float, hi: float, steps: int, *,
              jobs: int | None = None) -> list[SweepRow]:
    """Independent certifications along a parameter range; jumps above 0.5 are flagged."""
    if steps < 1:
        raise ConfigError("steps must be at least 1")
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("sweep range must be finite")
    config.with_parameter(parameter, lo)  # validates the name up front
    values = [float(lo)] if steps == 1 else [float(v) for v in np.linspace(lo, hi, steps)]
    jobs = cy.default_jobs() if jobs is None else max(1, jobs)
    if jobs == 1:
        rows = [_sweep_point(config, parameter, v) for v in values]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(lambda v: _sweep_point(config, parameter, v), values))
    prev = None
    for row in rows:
        if row.q_max is not None:
            if not math.isfinite(row.q_max):
                row.flag = "nan"
            elif prev is not None and abs(row.q_max - prev) > JUMP_FLAG:
                row.flag = "jump"
            prev = row.q_max
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_sweep_csv(dest, parameter: str, rows: list[SweepRow]) -> None:
    """Write the sweep table to a path or an open text stream."""
    if hasattr(dest, "write"):
        _sweep_rows(dest, parameter, rows)
        return
    with open(dest, "w", newline="") as fh:
        _sweep_rows(fh, parameter, rows)


def _sweep_rows(fh, parameter, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([parameter, "status", "q_max", "q1", "q2", "binding", "failed_stage", "flag"])
    for r in rows:
        w.writerow([_cell(r.value), r.status, _cell(r.q_max), _cell(r.q1), _cell(r.q2),
                    r.binding, r.stage, r.flag])


def sweep_exit_code(rows: list[SweepRow]) -> int:
    if all(r.status == "certified" for r in rows) and not any(r.flag for r in rows):
        return EXIT_PASS
    if any(r.status == "certified" for r in rows):
        return EXIT_INCONCLUSIVE
    return EXIT_FAIL
