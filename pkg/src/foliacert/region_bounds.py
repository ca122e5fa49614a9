"""Upper bounds for div G and ||DG||_2 over a trapping region.

Two routes:

* ``lorenz_chain`` -- the analytic chain for the Lorenz family: trapping
  ellipsoid, cross bound, x1 quadratic for x1, then V = 2 x1^2 + x2^2 +
  (x3 - r)^2 and ``||DG||_2^2 = 2 sigma^2 + 1 + b^2 + V``.
* ``generic_sup_over_box`` -- grid maximum plus a Lipschitz correction whose
  constant comes from interval enclosures of symbolic second derivatives.

Note: a bound of the form ``(x3 - (r+sigma)/2)^2 <= (r+sigma)^2/4`` that
circulates in the literature would imply ``x3 <= r + sigma``, which orbits
visibly violate; it is deliberately not used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import expr as ex
from .field_spec import VectorFieldSpec

CLASSICAL_X1_LAMBDA = 11


class InvalidParameterError(ValueError):
    pass


class NoRealRootError(ArithmeticError):
    pass


class UnavailableBoundError(ValueError):
    pass


@dataclass(frozen=True)
class RegionStep:
    name: str
    value: float
    provenance: str
    exact: Fraction | None = None


@dataclass
class RegionBound:
    kind: str  # "lorenz-chain" | "generic-box"
    parameters: dict
    steps: list[RegionStep] = field(default_factory=list)

    def add(self, name, value, provenance, exact=None) -> float:
        if exact is None and isinstance(value, Fraction):
            exact = value
        value = float(value)
        if not math.isfinite(value):
            raise ArithmeticError(f"bound step {name!r} is not finite")
        self.steps.append(RegionStep(name, value, provenance, exact))
        return value

    def step(self, name: str) -> RegionStep:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass
class BoundCertificate:
    div_sup: float
    frob_sup: float
    region: RegionBound


# ---------------------------------------------------------------------------
# rounding helpers


def round_up(value, decimals: int) -> Fraction:
    """Round toward +inf at ``decimals`` places."""
    scale = Fraction(10) ** decimals
    return Fraction(math.ceil(Fraction(value) * scale)) / scale


def round_down(value, decimals: int) -> Fraction:
    scale = Fraction(10) ** decimals
    return Fraction(math.floor(Fraction(value) * scale)) / scale


# digits used when reproducing the printed chain (836.27, 3239.7, 4.7644, 680, 837, 208.12)
PAPER_DIGITS = {"R2": 2, "cross": 1, "a": 4, "x1_sq": 0, "R2_in_V": 0, "V": 0, "const": 2}


# ---------------------------------------------------------------------------
# Lorenz chain


def _as_number(v):
    if isinstance(v, (int, Fraction)):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    return float(v)


def lorenz_ellipsoid_bound(b, r):
    """``R^2 = b^2 r^2 / (4 (b - 1))``; exact when ``b`` and ``r`` are rational."""
    b, r = _as_number(b), _as_number(r)
    if b <= 1:
        raise InvalidParameterError(f"trapping ellipsoid needs b > 1, got b = {b}")
    return b * b * r * r / (4 * (b - 1))


def lorenz_cross_bound(r, R2) -> float:
    """Upper bound ``(r + R)^2`` for ``x2^2 + x3^2``."""
    if R2 < 0:
        raise InvalidParameterError("R^2 must be nonnegative")
    return (float(r) + math.sqrt(float(R2))) ** 2


def x1_quadratic(sigma, r, lam=CLASSICAL_X1_LAMBDA) -> tuple[float, float, float]:
    """Coefficients of ``(10 a - 28)^2 + a (20 - lam)(2 - lam)``.

    Only the classical case ``sigma = 10, r = 28`` is available.
    """
    if Fraction(_as_number(sigma)) != 10 or Fraction(_as_number(r)) != 28:
        raise UnavailableBoundError(
            "the x1 quadratic is only known for sigma = 10, r = 28; supply coefficients explicitly"
        )
    lam = float(lam)
    return 100.0, -560.0 + (20.0 - lam) * (2.0 - lam), 784.0


def largest_real_root(a: float, b: float, c: float) -> float:
    if a == 0:
        if b == 0:
            raise NoRealRootError("degenerate quadratic")
        return -c / b
    disc = b * b - 4 * a * c
    if disc < 0:
        raise NoRealRootError(f"negative discriminant {disc!r}")
    s = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(s, b)) if b != 0 else -0.5 * s
    roots = [q / a]
    if q != 0:
        roots.append(c / q)
    else:
        roots.append(-q / a)
    return max(roots)


def x1_quadratic_root(sigma=10, r=28, lam=CLASSICAL_X1_LAMBDA, *, coefficients=None) -> float:
    """Largest real root ``a`` with ``a x1^2 <= x2^2 + x3^2`` on the attractor."""
    if coefficients is None:
        coefficients = x1_quadratic(sigma, r, lam)
    return largest_real_root(*map(float, coefficients))


def lorenz_chain(
    sigma=10,
    b=Fraction(8, 3),
    r=28,
    *,
    lam=CLASSICAL_X1_LAMBDA,
    rounding: str = "paper",
    coefficients=None,
) -> BoundCertificate:
    """Certified bounds for the Lorenz family via the trapping ellipsoid.

    ``rounding="paper"`` rounds every intermediate toward the safe side at
    the digits of the published chain; ``rounding="exact"`` carries full
    precision.  When the x1 quadratic is unavailable (non-classical
    parameters) the slab bound ``x1^2 <= R^2`` is used instead: if
    ``|x1| > R >= |x2|`` then ``d(x1^2)/dt = 2 sigma x1 (x2 - x1) < 0``.
    """
    if rounding not in ("paper", "exact"):
        raise ValueError(f"rounding must be 'paper' or 'exact', got {rounding!r}")
    paper = rounding == "paper"
    sig, bb, rr = _as_number(sigma), _as_number(b), _as_number(r)
    region = RegionBound(
        "lorenz-chain",
        {"sigma": float(sig), "b": float(bb), "r": float(rr), "lambda": float(lam), "rounding": rounding},
    )

    def up(v, key):
        return round_up(v, PAPER_DIGITS[key]) if paper else v

    R2_exact = lorenz_ellipsoid_bound(bb, rr)
    R2 = up(R2_exact, "R2")
    region.add(
        "R2", R2, "x2^2 + (x3 - r)^2 <= R^2 with R^2 = b^2 r^2 / (4 (b - 1))",
        R2_exact if isinstance(R2_exact, Fraction) else None,
    )
    cross = up(lorenz_cross_bound(rr, R2), "cross")
    region.add("cross", cross, "x2^2 + x3^2 <= (r + R)^2")

    try:
        a = x1_quadratic_root(sig, rr, lam, coefficients=coefficients)
    except UnavailableBoundError:
        a = None
    if a is not None:
        if a <= 0:
            raise NoRealRootError(f"x1 quadratic root a = {a} is not positive")
        a_used = round_down(a, PAPER_DIGITS["a"]) if paper else a
        region.add("a", a_used, f"a x1^2 <= x2^2 + x3^2, a = largest root of (10a - 28)^2 + a(20 - l)(2 - l), l = {lam}")
        x1_sq = up(Fraction(cross) / Fraction(a_used) if paper else float(cross) / a_used, "x1_sq")
        region.add("x1_sq", x1_sq, "x1^2 <= (x2^2 + x3^2) / a <= (r + R)^2 / a")
    else:
        x1_sq = up(R2, "x1_sq")
        region.add("x1_sq", x1_sq, "x1^2 <= R^2 (slab |x1| <= R is attracting since |x2| <= R)")

    R2_in_V = up(R2, "R2_in_V")
    V = up(2 * (Fraction(x1_sq) if paper else float(x1_sq)) + (Fraction(R2_in_V) if paper else float(R2_in_V)), "V")
    region.add("V", V, "V = 2 x1^2 + x2^2 + (x3 - r)^2 <= 2 x1^2_bound + R^2")
    const_exact = 2 * sig * sig + 1 + bb * bb
    const = up(const_exact, "const")
    region.add(
        "frob_const", const, "||DG||_2^2 = 2 sigma^2 + 1 + b^2 + V",
        const_exact if isinstance(const_exact, Fraction) else None,
    )
    frob_sq = Fraction(const) + Fraction(V) if paper else float(const) + float(V)
    frob_sup = math.sqrt(float(frob_sq))
    # sqrt is rounded to nearest; nudge up so the reported value stays an upper bound
    frob_sup = float(np.nextafter(frob_sup, np.inf))
    region.add("frob_sup", frob_sup, "sup ||DG||_2 <= sqrt(frob_const + V)")
    div = -(sig + 1 + bb)
    region.add("div_sup", div, "div G = -(sigma + 1 + b), constant", div if isinstance(div, Fraction) else None)
    return BoundCertificate(float(div), frob_sup, region)


# ---------------------------------------------------------------------------
# generic box fallback


class LipschitzUnavailableError(ValueError):
    pass


def _sup_abs(e: ex.Expr, box) -> float:
    try:
        lo, hi = ex.interval_eval(e, box)
    except ArithmeticError as exc:
        raise LipschitzUnavailableError(str(exc)) from exc
    m = max(abs(lo), abs(hi))
    if not math.isfinite(m):
        raise LipschitzUnavailableError("unbounded derivative on the box")
    return m


def lipschitz_bounds(spec: VectorFieldSpec, box) -> tuple[float, float]:
    """Lipschitz constants of ``div G`` and ``||DG||_2`` over ``box``."""
    d = spec.dimension
    H = spec.jacobian_form.second_derivatives  # H[i][j][k] = d/dx_k of J_ij
    grad_div = [ex.sum_exprs([H[i][i][k] for i in range(d)]) for k in range(d)]
    L_div = math.sqrt(sum(_sup_abs(g, box) ** 2 for g in grad_div))
    L_frob = math.sqrt(
        sum(_sup_abs(H[i][j][k], box) ** 2 for i in range(d) for j in range(d) for k in range(d))
    )
    return _nudge_up(L_div), _nudge_up(L_frob)


def _nudge_up(v: float) -> float:
    return float(np.nextafter(v, np.inf)) if v != 0 else 0.0


@dataclass
class GenericBound:
    value: float
    grid_max: float
    lipschitz: float
    cell_diameter: float


def generic_sup_over_box(
    spec: VectorFieldSpec,
    box: Sequence[tuple[float, float]],
    expression="frob",
    grid: int = 41,
    *,
    chunk: int = 200_000,
) -> GenericBound:
    """Certified upper bound of ``expression`` over ``box``.

    ``expression`` is ``"div"``, ``"frob"`` or a pair ``("div+c*frob", c)``.
    The bound is the grid maximum plus ``L h / 2`` with ``h`` the grid cell
    diameter, so every box point is within ``h / 2`` of a grid vertex.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != spec.dimension or any(not (math.isfinite(lo) and math.isfinite(hi) and hi >= lo) for lo, hi in box):
        raise ValueError("box must be finite with lo <= hi on every axis")
    if grid < 2:
        raise ValueError("grid needs at least 2 points per axis")
    if isinstance(expression, str):
        kind, c = expression, None
    else:
        kind, c = expression
        c = float(c)
    L_div, L_frob = lipschitz_bounds(spec, box)
    if kind == "div":
        L = L_div
        fn = spec.div
    elif kind == "frob":
        L = L_frob
        fn = lambda X: np.sqrt(spec.frob_sq(X))  # noqa: E731
    elif kind == "div+c*frob":
        L = L_div + abs(c) * L_frob
        fn = lambda X: spec.div(X) + c * np.sqrt(spec.frob_sq(X))  # noqa: E731
    else:
        raise ValueError(f"unknown expression {kind!r}")
    axes = [np.linspace(lo, hi, grid) for lo, hi in box]
    h = math.sqrt(sum(((hi - lo) / (grid - 1)) ** 2 for lo, hi in box))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dimension)
    best = -math.inf
    for start in range(0, len(mesh), chunk):
        best = max(best, float(np.max(fn(mesh[start:start + chunk]))))
    value = best + L * h / 2
    if value != best:
        value = float(np.nextafter(value, np.inf))
    return GenericBound(value, best, L, h)


def generic_certificate(spec: VectorFieldSpec, box, grid: int = 41) -> BoundCertificate:
    region = RegionBound("generic-box", {"box": [list(map(float, b)) for b in box], "grid": grid})
    gd = generic_sup_over_box(spec, box, "div", grid)
    gf = generic_sup_over_box(spec, box, "frob", grid)
    region.add("div_grid_max", gd.grid_max, "max of div G over grid vertices")
    region.add("div_lipschitz", gd.lipschitz, "interval enclosure of grad div G on the box")
    region.add("div_sup", gd.value, "grid max + L h / 2")
    region.add("frob_grid_max", gf.grid_max, "max of ||DG||_2 over grid vertices")
    region.add("frob_lipschitz", gf.lipschitz, "interval enclosure of second derivatives of G on the box")
    region.add("frob_sup", gf.value, "grid max + L h / 2")
    return BoundCertificate(gd.value, gf.value, region)
