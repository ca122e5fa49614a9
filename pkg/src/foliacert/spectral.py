"""Equilibria, their spectra, and the equilibrium clause of strong dissipativity."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .field_spec import VectorFieldSpec
from .ode import StepSizeUnderflow, solve

NEWTON_TOL = 1e-10
MERGE_DIST = 1e-6
HYPERBOLIC_TOL = 1e-8

IN, OUT, UNKNOWN = "declared-in", "declared-out", "unknown"


class EigenSolverError(RuntimeError):
    pass


class UndefinedQBound(ValueError):
    pass


@dataclass(frozen=True)
class Equilibrium:
    location: tuple[float, ...]
    residual: float
    in_attractor: str = UNKNOWN

    def with_flag(self, flag: str) -> "Equilibrium":
        if flag not in (IN, OUT, UNKNOWN):
            raise ValueError(f"unknown membership flag {flag!r}")
        return Equilibrium(self.location, self.residual, flag)


@dataclass(frozen=True)
class SpectralData:
    eigenvalues: tuple[complex, ...]
    hyperbolic: bool
    lorenz_like: bool
    location: tuple[float, ...] = ()

    @property
    def real_parts(self) -> np.ndarray:
        return np.array([z.real for z in self.eigenvalues])


def _newton(spec: VectorFieldSpec, X: np.ndarray, iters: int = 60) -> np.ndarray:
    X = X.copy()
    with np.errstate(all="ignore"):
        for _ in range(iters):
            F = spec._f.raw(X)
            J = spec._jac.raw(X).reshape(X.shape + (spec.dimension,))
            ok = np.isfinite(F).all(axis=1) & np.isfinite(J).all(axis=(1, 2))
            ok &= np.abs(np.linalg.det(np.where(ok[:, None, None], J, np.eye(spec.dimension)))) > 1e-300
            step = np.zeros_like(X)
            if ok.any():
                step[ok] = np.linalg.solve(J[ok], F[ok][..., None])[..., 0]
            X = np.where(ok[:, None], X - step, np.nan)
    return X


def find_equilibria(
    spec: VectorFieldSpec,
    search_box,
    grid_density: int = 5,
) -> list[Equilibrium]:
    """Newton iteration from a uniform grid of seeds in ``search_box``.

    ``search_box`` is a sequence of ``(lo, hi)`` pairs bounding the seeds,
    not the roots.  Non-convergent seeds
    are dropped; converged points are merged within ``1e-6``.
    """
    box = np.asarray(search_box, dtype=float)
    if box.shape != (spec.dimension, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("search box must be a nondegenerate (lo, hi) pair per axis")
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in box]
    seeds = np.array(list(itertools.product(*axes)))
    roots = _newton(spec, seeds)
    with np.errstate(all="ignore"):
        res = np.linalg.norm(spec._f.raw(roots), axis=1)
    # roots are kept even when Newton walks out of the seed box
    good = roots[np.isfinite(res) & (res <= NEWTON_TOL)]
    # deterministic merge: lexicographic order, then greedy clustering
    good = good[np.lexsort(good.T[::-1])] if len(good) else good
    merged: list[np.ndarray] = []
    for p in good:
        if not any(np.linalg.norm(p - q) <= MERGE_DIST for q in merged):
            merged.append(p)
    out = []
    for p in merged:
        p = np.where(np.abs(p) < 1e-13, 0.0, p)
        r = float(np.linalg.norm(spec.f(p)))
        out.append(Equilibrium(tuple(float(v) for v in p), r))
    if not out:
        warnings.warn("no equilibria found in the search box", RuntimeWarning, stacklevel=2)
    return out


def _sort_key(z: complex):
    return (z.real, z.imag)


def eigen_data(spec: VectorFieldSpec, eq: Equilibrium) -> SpectralData:
    if eq.residual > NEWTON_TOL:
        raise ValueError(f"equilibrium residual {eq.residual:.3g} exceeds {NEWTON_TOL}")
    J = spec.jac(np.array(eq.location))
    try:
        ev = np.linalg.eigvals(J)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    if not np.all(np.isfinite(ev)):
        raise EigenSolverError("eigenvalue solver returned non-finite values")
    scale = max(1.0, float(np.abs(ev).max()))
    evs = []
    for z in ev:
        z = complex(z)
        if abs(z.imag) <= 1e-12 * scale:
            z = complex(z.real, 0.0)
        evs.append(z)
    evs.sort(key=_sort_key)
    hyperbolic = all(abs(z.real) > HYPERBOLIC_TOL for z in evs)
    n_neg = sum(z.real < 0 for z in evs)
    if n_neg not in (spec.d_s, spec.d_s + spec.d_cu - 1):
        warnings.warn(
            f"equilibrium at {eq.location} has {n_neg} contracting eigenvalues; "
            f"the global stable dimension d_s={spec.d_s} is used anyway",
            RuntimeWarning,
            stacklevel=2,
        )
    return SpectralData(tuple(evs), hyperbolic, is_lorenz_like(evs), eq.location)


def is_lorenz_like(eigenvalues) -> bool:
    if len(eigenvalues) != 3 or any(z.imag != 0 for z in eigenvalues):
        return False
    l1, l2, l3 = (z.real for z in eigenvalues)
    return l1 < l2 < 0 < -l2 < l3


def cond_a_margin(sd: SpectralData, d_s: int, q: float) -> float:
    ev = sd.eigenvalues
    return (ev[0] - ev[d_s] + q * ev[-1]).real


def equilibrium_q_bound(sd: SpectralData, d_s: int) -> float:
    """Supremum of ``q > 0`` with ``Re(l_1 - l_{d_s+1} + q l_d) < 0``."""
    d = len(sd.eigenvalues)
    if not 1 <= d_s < d:
        raise ValueError(f"need 1 <= d_s < d, got d_s={d_s}, d={d}")
    gap = sd.eigenvalues[0].real - sd.eigenvalues[d_s].real  # always <= 0
    top = sd.eigenvalues[-1].real
    if top > 0:
        return -gap / top
    if top == 0 and gap == 0:
        raise UndefinedQBound("Re l_d = 0 and Re(l_1 - l_{d_s+1}) = 0: the clause never holds")
    if top == 0 or gap < 0 or top < 0:
        return math.inf
    raise UndefinedQBound("degenerate spectrum")


def classify_membership(
    spec: VectorFieldSpec,
    eq: Equilibrium,
    *,
    horizon: float = 500.0,
    radius: float = 0.5,
    offset: float = 1e-3,
    seed: int = 0,
) -> str:
    """Heuristic attractor membership for an equilibrium.

    Seeds an orbit at distance ``offset`` and follows it for ``horizon``.  If
    the orbit leaves the ``radius`` ball and never comes back, the
    equilibrium is declared out; if it returns (or never leaves) it is
    declared in.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(spec.dimension)
    x0 = np.array(eq.location) + offset * v / np.linalg.norm(v)
    times = np.arange(0.0, horizon + 1e-9, 0.01)
    try:
        sol = solve(spec.flow_rhs(), x0, times, rtol=1e-9, atol=1e-9)
    except (StepSizeUnderflow, RuntimeError):
        return OUT
    dist = np.linalg.norm(sol.y - np.array(eq.location), axis=1)
    outside = dist > radius
    if not outside.any():
        return IN
    first_exit = int(np.argmax(outside))
    return IN if (~outside[first_exit:]).any() else OUT
