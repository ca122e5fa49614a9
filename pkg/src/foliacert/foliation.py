"""Local stable leaves by graph transform along orbit charts.

Charts are affine: chart n along the orbit of ``x`` sends ``p = (u, v)`` to
``x_n + Ps_n u + Pcu_n v`` with ``Ps_n`` spanning the estimated stable
direction and ``Pcu_n`` the estimated center-unstable one.  The time-T map
read in consecutive charts is ``f_n(p) = P_{n+1}^{-1}(X_T(x_n + P_n p) -
X_T(x_n))``, which fixes the origin exactly.

The stable leaf in chart n is the graph of ``phi_n`` over a grid of the
``d_s``-ball of radius ``rho``.  Given ``phi_{n+1}``, ``phi_n(u)`` is the
``v`` solving ``F^cu(u, v) = phi_{n+1}(F^s(u, v))``; each sweep updates all
``n`` at once from the previous sweep's values.

Several independent orbits ("chains") are handled together so that one
batched integration serves all of them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .cocycle import (
    DEFAULT_DT,
    Cocycle,
    SampleSet,
    _prod_norms,
    _steps,
    past_point,
    sample_cocycle,
    trajectory,
    write_csv,
)
from .field_spec import VectorFieldSpec
from .ode import solve


class HPInfeasible(ValueError):
    def __init__(self, message: str, inequality: str):
        super().__init__(message)
        self.inequality = inequality


class ChartError(RuntimeError):
    def __init__(self, message: str, suggested_rho: float):
        super().__init__(message)
        self.suggested_rho = suggested_rho


class NonContraction(RuntimeError):
    def __init__(self, message: str, expansion: float):
        super().__init__(message)
        self.expansion = expansion


class HolonomyError(RuntimeError):
    pass


KAPPA_MAX = 0.5


# --------------------------------------------------------------------------
# constants


@dataclass
class HPConstants:
    lam_min: float
    sigma: float
    gamma: float
    delta: float
    lam: np.ndarray
    mu: np.ndarray
    lam_p: np.ndarray
    mu_p: np.ndarray
    nu_n: np.ndarray
    nu: float


def hp_constants(lam_seq, mu_seq, sigma: float, lam_min: float) -> HPConstants:
    """Pick gamma and delta at half their admissible bounds and derive the rates."""
    lam = np.asarray(lam_seq, dtype=float).ravel()
    mu = np.asarray(mu_seq, dtype=float).ravel()
    if not 0 < sigma < 1:
        bound = max(0.0, sigma ** -0.5 - 1) if sigma > 0 else math.inf
        raise HPInfeasible(f"sigma must lie in (0, 1); gamma bound is {bound:.3g}", "sigma < 1")
    if lam_min <= 0:
        raise HPInfeasible("lambda_min must be positive", "lambda_min > 0")
    if np.any(lam < lam_min * (1 - 1e-12)):
        raise HPInfeasible(f"lambda_n = {lam.min():.6g} below lambda_min = {lam_min:.6g}",
                           "lambda_n >= lambda_min")
    if np.any(lam / mu > sigma * (1 + 1e-12)):
        raise HPInfeasible(f"lambda_n/mu_n = {(lam / mu).max():.6g} exceeds sigma = {sigma:.6g}",
                           "lambda_n/mu_n <= sigma")
    gamma = 0.5 * min(1.0, sigma ** -0.5 - 1)
    g1 = 1 + gamma
    delta = 0.5 * lam_min * min(
        (1 / sigma - 1) / (gamma + 1 / gamma + 2),
        (1 / sigma - g1**2) / ((2 + gamma) * g1),
    )
    lam_p = g1 * (lam + delta * g1)
    mu_p = mu / g1 - delta
    # midpoint of (lambda', mu'), pulled below 1 when mu' exceeds 1
    nu_n = 0.5 * (lam_p + mu_p)
    nu_n = np.where(nu_n >= 1, 0.5 * (lam_p + np.minimum(mu_p, 1.0)), nu_n)
    if not np.all(lam_p < mu_p):
        raise HPInfeasible("lambda'_n < nu_n < mu'_n fails", "lambda' < nu < mu'")
    if lam.max() < 1 and lam_p.max() >= 1:
        raise HPInfeasible(f"sup lambda'_n = {lam_p.max():.6g} is not below 1", "sup lambda' < 1")
    nu = float(nu_n.max())
    if nu >= 1:
        raise HPInfeasible(f"nu = {nu:.6g} is not below 1", "nu < 1")
    return HPConstants(lam_min, sigma, gamma, delta, lam, mu, lam_p, mu_p, nu_n, nu)


def block_rates(linear: np.ndarray, d_s: int):
    """``(lambda_n, mu_n)`` = (||A_n||, ||B_n^-1||^-1) of the diagonal blocks."""
    A = linear[..., :d_s, :d_s]
    B = linear[..., d_s:, d_s:]
    lam = np.linalg.svd(A, compute_uv=False)[..., 0]
    mu = np.linalg.svd(B, compute_uv=False)[..., -1]
    return lam, mu


def hp_from_linear(linear: np.ndarray, d_s: int) -> HPConstants:
    lam, mu = block_rates(linear, d_s)
    return hp_constants(lam, mu, float((lam / mu).max()), float(lam.min()))


# --------------------------------------------------------------------------
# charts


@dataclass
class ChartFrame:
    base: np.ndarray
    Ps: np.ndarray
    Pcu: np.ndarray
    rho: float
    C1: float = field(init=False)

    def __post_init__(self):
        self.C1 = float(np.linalg.cond(self.P))

    @property
    def P(self) -> np.ndarray:
        return np.concatenate([self.Ps, self.Pcu], axis=1)

    def to_ambient(self, p) -> np.ndarray:
        return self.base + np.asarray(p, dtype=float) @ self.P.T

    def to_chart(self, y) -> np.ndarray:
        return np.linalg.solve(self.P, (np.asarray(y, dtype=float) - self.base).T).T


class ChartMaps:
    """Maps ``f_{k,n}`` for chains ``k`` and steps ``n``; ``linear[k, n] = Df_{k,n}(0)``."""

    d_s: int
    linear: np.ndarray
    noise: float = 1e-15  # absolute accuracy of one map evaluation

    @property
    def shape(self):
        return self.linear.shape[:2]

    @property
    def d(self) -> int:
        return self.linear.shape[-1]

    def apply(self, P: np.ndarray) -> np.ndarray:  # (K, n, M, d) -> same
        raise NotImplementedError


class MapCharts(ChartMaps):
    """Chart maps given directly as a vectorised function of ``(K, n, M, d)`` arrays."""

    def __init__(self, fn, linear, d_s: int):
        self.fn = fn
        self.linear = np.asarray(linear, dtype=float)
        self.d_s = d_s

    def apply(self, P):
        return self.fn(P)


class FlowCharts(ChartMaps):
    def __init__(self, spec: VectorFieldSpec, frames, T: float, linear, tol: float = 1e-11):
        self.spec = spec
        self.frames = frames
        self.T = T
        self.tol = tol
        self.d_s = spec.d_s
        self.base = np.array([[f.base for f in chain] for chain in frames])
        self.P = np.array([[f.P for f in chain] for chain in frames])
        self.Pinv = np.linalg.inv(self.P)
        self.linear = linear
        self.noise = 100 * tol

    def apply(self, P):
        K, n, M, d = P.shape
        y = self.base[:, :n, None] + P @ np.swapaxes(self.P[:, :n], -1, -2)
        y = np.concatenate([y, self.base[:, :n, None]], axis=2)
        z = solve(self.spec.flow_rhs(), y.reshape(-1, d), [0.0, self.T],
                  rtol=self.tol, atol=self.tol).y[-1].reshape(K, n, M + 1, d)
        diff = z[:, :, :M] - z[:, :, M:]
        return diff @ np.swapaxes(self.Pinv[:, 1 : n + 1], -1, -2)


@dataclass
class ChartOrbit:
    frames: list[list[ChartFrame]]  # [chain][n], n = 0..n_steps
    maps: FlowCharts
    hp: HPConstants | None
    cocycle: Cocycle
    nonlinearity: np.ndarray  # measured C^1 size of the nonlinear part, per chain and step
    kappa: np.ndarray  # nonlinearity of the cu rows relative to B_n
    domination: np.ndarray  # ||A_n|| * ||B_n^-1|| per chain and step


def _flow_matrices(cc: Cocycle, i: int, j: int) -> np.ndarray:
    """``DX_{t_j - t_i}`` at the checkpoint-i points, as full matrices."""
    d = cc.run.Q.shape[-1]
    eye = np.broadcast_to(np.eye(d), (cc.m, d, d))
    V, log_s = cc.push(i, j, eye)
    return V * np.exp(log_s)[:, None, None]


def build_charts(
    spec: VectorFieldSpec,
    x=None,
    T: float = DEFAULT_DT,
    n_steps: int = 50,
    rho: float = 0.05,
    *,
    past=None,
    t_fwd: float = 1.0,
    t_back: float = 5.0,
    seed: int = 0,
    tol: float = 1e-11,
    check: bool = True,
    n_probe: int = 8,
) -> ChartOrbit:
    """Charts along the orbits of one or several base points.

    ``x`` (or ``past``) may be a single point or an array of points; each
    gives one chain.  Without ``past`` the base points are integrated back
    by ``t_fwd`` (reproducibility checked) to obtain their center-unstable
    directions.  With ``check`` the C^1 size of the nonlinear part on the
    ``rho``-ball is compared against the graph-transform ``delta``.
    """
    if past is None:
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        pasts = np.array([past_point(spec, p, t_fwd) if t_fwd > 0 else p for p in xs])
    else:
        pasts = np.atleast_2d(np.asarray(past, dtype=float))
    k = _steps(T, DEFAULT_DT)
    if k == 0:
        raise ValueError("T must be a positive multiple of the renormalisation step")
    samples = SampleSet(pasts, t_fwd, ["chart"] * len(pasts), seed)
    cc = sample_cocycle(spec, samples, n_steps * T, t_back=t_back, tol=min(tol, 1e-10), jobs=1)
    K = cc.m
    idx = [cc.i0 + n * k for n in range(n_steps + 1)]
    frames = [
        [ChartFrame(cc.points(i)[c].copy(), cc.Es(i)[c], cc.Ecu(i)[c], rho) for i in idx]
        for c in range(K)
    ]
    P = np.array([[f.P for f in chain] for chain in frames])
    linear = np.empty((K, n_steps, spec.dimension, spec.dimension))
    for n in range(n_steps):
        M = _flow_matrices(cc, idx[n], idx[n + 1])
        linear[:, n] = np.linalg.solve(P[:, n + 1], M @ P[:, n])
    maps = FlowCharts(spec, frames, T, linear, tol)
    lam, mu = block_rates(linear, spec.d_s)
    dom = lam / mu
    hp = None
    nonlin = kappa = np.zeros((K, n_steps))
    if check:
        hp = hp_from_linear(linear, spec.d_s)
        nonlin, kappa = nonlinearity(maps, rho, n_probe, seed)
        worst = float(kappa.max())
        if worst >= KAPPA_MAX:
            raise ChartError(
                f"center-unstable nonlinearity {worst:.3g} (relative to the co-norm) exceeds "
                f"{KAPPA_MAX} on the rho = {rho} stable disk; the graph transform is not "
                "well posed there",
                rho * 0.5 * KAPPA_MAX / worst,
            )
    return ChartOrbit(frames, maps, hp, cc, nonlin, kappa, dom)


def nonlinearity(maps: ChartMaps, rho: float, n_probe: int = 8, seed: int = 0):
    """Size of the nonlinear part of ``f_n`` near the stable disk, by central differences.

    Probes sit on the stable disk of radius ``rho`` (where the leaf lives).
    Returns ``(c1, kappa)``: the sup of ``||Df_n(p) - diag(A_n, B_n)||`` and
    the sup of ``||B_n^{-1} (D F^cu(p) - D F^cu(0))||``, both per chain and step.
    """
    K, n = maps.shape
    d, ds = maps.d, maps.d_s
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_probe, ds))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if ds == 1:
        dirs = np.array([[1.0], [-1.0]])
    radii = rho * np.array([1.0, 0.5])
    pts = np.zeros((len(dirs) * len(radii), d))
    pts[:, :ds] = (radii[:, None, None] * dirs[None]).reshape(-1, ds)
    h = 1e-3 * rho
    steps = np.concatenate([h * np.eye(d), -h * np.eye(d)])
    probe = (pts[:, None, :] + steps[None]).reshape(-1, d)
    out = maps.apply(np.broadcast_to(probe, (K, n) + probe.shape).copy())
    out = out.reshape(K, n, len(pts), 2, d, d)
    J = np.swapaxes((out[:, :, :, 0] - out[:, :, :, 1]) / (2 * h), -1, -2)
    L = maps.linear.copy()
    L[..., :ds, ds:] = 0
    L[..., ds:, :ds] = 0
    c1 = np.linalg.norm(J - L[:, :, None], ord=2, axis=(-2, -1)).max(axis=2)
    Binv = np.linalg.inv(maps.linear[..., ds:, ds:])
    dcu = J[..., ds:, :] - maps.linear[:, :, None, ds:, :]
    kappa = np.linalg.norm(Binv[:, :, None] @ dcu, ord=2, axis=(-2, -1)).max(axis=2)
    return c1, kappa


# --------------------------------------------------------------------------
# graphs


@dataclass
class GraphPatch:
    """Graph of ``phi`` over a uniform grid of ``[-rho, rho]^{d_s}``."""

    axis: np.ndarray
    values: np.ndarray  # (N,)*d_s + (d_cu,)
    order: int = 1

    @property
    def rho(self) -> float:
        return float(self.axis[-1])

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        ds = self.values.ndim - 1
        q = u.reshape(-1, ds)
        out = _interp(self.axis, self.values[None, None], q[None, None], self.order)[0, 0]
        return out.reshape(u.shape[:-1] + (self.values.shape[-1],)) if u.ndim > 1 else out[0]

    def lipschitz(self) -> float:
        h = self.axis[1] - self.axis[0]
        ds = self.values.ndim - 1
        worst = 0.0
        for a in range(ds):
            dv = np.diff(self.values, axis=a)
            worst = max(worst, float(np.linalg.norm(dv, axis=-1).max() / h))
        return worst

    def slope_at_zero(self) -> np.ndarray:
        """Central-difference ``D phi(0)`` as a (d_cu, d_s) matrix."""
        ds = self.values.ndim - 1
        h = self.axis[1] - self.axis[0]
        cols = []
        for a in range(ds):
            e = np.zeros(ds)
            e[a] = h
            cols.append((self(e[None])[0] - self(-e[None])[0]) / (2 * h))
        return np.array(cols).T


def _interp(axis: np.ndarray, values: np.ndarray, q: np.ndarray, order: int = 1) -> np.ndarray:
    """Multilinear (``order=1``) or 4-point cubic (``order=3``, ``d_s = 1``) interpolation.

    ``values``: (K, n) + (N,)*d_s + (c,); ``q``: (K, n, M, d_s) -> (K, n, M, c).
    Queries are clamped to the grid.
    """
    if order == 3:
        return _interp_cubic(axis, values, q)
    N = len(axis)
    ds = q.shape[-1]
    h = axis[1] - axis[0]
    s = np.clip((q - axis[0]) / h, 0.0, N - 1)
    i0 = np.minimum(np.floor(s).astype(int), N - 2)
    w = s - i0
    K, n = values.shape[:2]
    flat = values.reshape(K, n, N**ds, values.shape[-1])
    strides = N ** np.arange(ds - 1, -1, -1)
    out = np.zeros(q.shape[:-1] + (values.shape[-1],))
    for corner in itertools.product((0, 1), repeat=ds):
        c = np.array(corner)
        lin = ((i0 + c) * strides).sum(axis=-1)
        wt = np.prod(np.where(c == 1, w, 1 - w), axis=-1)
        out += wt[..., None] * np.take_along_axis(flat, lin[..., None], axis=2)
    return out


def _interp_cubic(axis, values, q):
    if q.shape[-1] != 1:
        raise ValueError("cubic interpolation is implemented for one stable dimension")
    N = len(axis)
    h = axis[1] - axis[0]
    s = np.clip((q[..., 0] - axis[0]) / h, 0.0, N - 1)
    i0 = np.clip(np.floor(s).astype(int) - 1, 0, N - 4)
    x = s - i0  # position inside the stencil i0..i0+3
    out = 0.0
    for j in range(4):
        w = np.ones_like(x)
        for m in range(4):
            if m != j:
                w = w * (x - m) / (j - m)
        out = out + w[..., None] * np.take_along_axis(values, (i0 + j)[..., None], axis=2)
    return out


@dataclass
class HPResult:
    patches: list[list[GraphPatch]]  # [chain][n]
    sweeps: int
    changes: list[float]
    contraction_ratio: float  # largest ratio of successive changes in the tail
    invariance_defect: float
    growth_ratio: float  # sup ||f_n(q)|| / (lambda'_n ||q||) over graph points
    chord_iterations: int


def hadamard_perron(
    maps: ChartMaps,
    hp: HPConstants | None,
    rho: float,
    grid_N: int = 65,
    max_iter: int = 60,
    fix_tol: float = 1e-10,
    chord_tol: float | None = None,
    order: int = 1,
) -> HPResult:
    """Jacobi sweeps of the stable graph transform from ``phi = 0``.

    ``order`` selects multilinear (1) or cubic (3) interpolation of the graphs.
    """
    if hp is not None and hp.nu >= 1:
        raise HPInfeasible("graph transform constants are not contracting", "nu < 1")
    K, n = maps.shape
    d, ds = maps.d, maps.d_s
    c = d - ds
    axis = np.linspace(-rho, rho, grid_N)
    U = np.array(list(itertools.product(axis, repeat=ds)))
    Mg = len(U)
    grid_shape = (grid_N,) * ds
    phi = np.zeros((K, n + 1, Mg, c))
    Uq = np.broadcast_to(U, (K, n, Mg, ds))
    Binv = np.linalg.inv(maps.linear[..., ds:, ds:])
    if chord_tol is None:
        chord_tol = max(0.01 * fix_tol, maps.noise)
    changes: list[float] = []
    growing = 0
    total_chord = 0
    sweeps = 0

    def residual(v, target):
        F = maps.apply(np.concatenate([Uq, v], axis=-1))
        vals = target.reshape((K, n) + grid_shape + (c,))
        return F, F[..., ds:] - _interp(axis, vals, F[..., :ds], order)

    for sweeps in range(1, max_iter + 1):
        target = phi[:, 1:]
        v = phi[:, :n].copy()
        last = np.inf
        for _ in range(50):
            _, r = residual(v, target)
            total_chord += 1
            step = np.einsum("knij,knmj->knmi", Binv, r)
            v -= step
            size = float(np.abs(step).max())
            if size <= chord_tol or size >= last:
                break
            last = size
        change = float(np.abs(v - phi[:, :n]).max())
        phi[:, :n] = v
        changes.append(change)
        if change <= fix_tol:
            break
        if len(changes) > 1 and change > changes[-2]:
            growing += 1
            if growing >= 5:
                raise NonContraction(
                    f"graph-transform changes grew for 5 consecutive sweeps (last ratio "
                    f"{change / changes[-2]:.3g})",
                    change / changes[-2],
                )
        else:
            growing = 0
    F, r = residual(phi[:, :n], phi[:, 1:])
    defect = float(np.linalg.norm(r, axis=-1).max())
    qn = np.linalg.norm(np.concatenate([Uq, phi[:, :n]], axis=-1), axis=-1)
    fn = np.linalg.norm(F, axis=-1)
    lam_p = hp.lam_p.reshape(K, n)[..., None] if hp is not None else np.ones((K, n, 1))
    mask = qn > 0
    growth = float((fn[mask] / (lam_p * qn)[mask]).max()) if mask.any() else 0.0
    tail = [b / a for a, b in zip(changes, changes[1:]) if a > 0 and b > 0]
    ratio = max(tail[-3:]) if tail else 0.0
    patches = [
        [GraphPatch(axis, phi[k, i].reshape(grid_shape + (c,)).copy(), order) for i in range(n + 1)]
        for k in range(K)
    ]
    return HPResult(patches, sweeps, changes, ratio, defect, growth, total_chord)


# --------------------------------------------------------------------------
# leaves


def leaf_points(frame: ChartFrame, patch: GraphPatch, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1, frame.Ps.shape[1])
    return frame.to_ambient(np.concatenate([u, patch(u)], axis=1))


@dataclass
class LeafContractionReport:
    times: np.ndarray
    ratios: np.ndarray  # sup_y d(X_t x, X_t y) / d(x, y)
    fitted_rate: float  # per unit time, least squares on log ratios
    fitted_C: float  # smallest C with ratios <= C nu_claim^t
    nu_claim: float
    monotone: bool
    passed: bool


def leaf_contraction_test(
    spec: VectorFieldSpec,
    x,
    leaf: tuple[ChartFrame, GraphPatch],
    horizon: int = 10,
    nu_claim: float = 0.5,
    *,
    n_points: int = 8,
    offset=None,
    tol: float = 1e-12,
    C_max: float = 10.0,
    floor: float = 1e-8,
) -> LeafContractionReport:
    """Forward distance ratios from ``x`` to points of the computed leaf.

    ``offset`` (a vector added to every leaf point) turns this into the
    off-leaf control.  Ratios below ``floor`` are dominated by the leaf
    interpolation error and integrator noise, so monotonicity is only
    required until the ratio first reaches the floor.
    """
    frame, patch = leaf
    ds = frame.Ps.shape[1]
    r = patch.rho
    u = np.linspace(-r, r, n_points + 2)[1:-1] if ds == 1 else (
        np.random.default_rng(0).uniform(-r, r, (n_points, ds)))
    u = u[np.abs(u.reshape(len(u), -1)).max(axis=1) > 0.1 * r]
    ys = leaf_points(frame, patch, u)
    if offset is not None:
        ys = ys + np.asarray(offset, dtype=float)
    x = np.asarray(x, dtype=float)
    times = np.arange(0, horizon + 1, dtype=float)
    pts = np.concatenate([x[None], ys])
    sol = trajectory(spec, pts, times, tol).y  # (t, 1 + m, d)
    dist = np.linalg.norm(sol[:, 1:] - sol[:, :1], axis=-1)
    ratios = (dist / dist[0]).max(axis=1)
    slope = np.polyfit(times, np.log(ratios), 1)[0]
    C = float((ratios / nu_claim**times).max())
    below = np.nonzero(ratios <= floor)[0]
    head = ratios[: below[0] + 1] if len(below) else ratios
    monotone = bool(np.all(np.diff(head) < 0))
    return LeafContractionReport(times, ratios, float(math.exp(slope)), C, nu_claim, monotone,
                                 C <= C_max)


def export_leaf_csv(path, frame: ChartFrame, patch: GraphPatch, n: int = 101) -> None:
    """Leaf polyline as rows ``s, x1..xd`` (``d_s = 1``)."""
    s = np.linspace(-patch.rho, patch.rho, n)
    pts = leaf_points(frame, patch, s[:, None])
    write_csv(path, ["s"] + [f"x{i + 1}" for i in range(pts.shape[1])], np.column_stack([s, pts]))


# --------------------------------------------------------------------------
# linear graph transform


def linear_graph_transform(block, ell) -> np.ndarray:
    """``(C + D ell)(A + B ell)^{-1}``; ``block`` is ``(A, B, C, D)`` or the full matrix."""
    A, B, C, D = _split(block, np.asarray(ell).shape[1])
    M = A + B @ ell
    if np.linalg.cond(M) > 1e14:
        raise np.linalg.LinAlgError("A + B ell is singular")
    return np.linalg.solve(M.T, (C + D @ ell).T).T


def _split(block, ds: int):
    if isinstance(block, (tuple, list)):
        return tuple(np.asarray(b, dtype=float) for b in block)
    M = np.asarray(block, dtype=float)
    return M[:ds, :ds], M[:ds, ds:], M[ds:, :ds], M[ds:, ds:]


def graph_basis(ell) -> np.ndarray:
    ell = np.asarray(ell, dtype=float)
    return np.vstack([np.eye(ell.shape[1]), ell])


def lipschitz_estimate(block, ds: int, n_probe: int = 64, seed: int = 0) -> float:
    """Lower estimate of Lip(Gamma) on the unit disk of ``L(F^s, F^cu)``.

    Combines random pairs with the norm of the derivative
    ``E -> (D - Gamma(ell) B) E (A + B ell)^{-1}`` at sampled ``ell``.
    """
    A, B, C, D = _split(block, ds)
    c = D.shape[0]
    rng = np.random.default_rng(seed)

    def disk():
        e = rng.standard_normal((c, ds))
        return e / max(1.0, np.linalg.norm(e, 2)) * rng.uniform() ** (1 / (c * ds))

    best = 0.0
    ells = [np.zeros((c, ds))] + [disk() for _ in range(n_probe)]
    for ell in ells:
        G = linear_graph_transform((A, B, C, D), ell)
        Minv = np.linalg.inv(A + B @ ell)
        L = D - G @ B
        if ds == 1:
            best = max(best, float(np.linalg.norm(L, 2) * abs(Minv[0, 0])))
        else:
            for _ in range(8):
                E = rng.standard_normal((c, ds))
                best = max(best, np.linalg.norm(L @ E @ Minv, 2) / np.linalg.norm(E, 2))
    for _ in range(n_probe):
        l1, l2 = disk(), disk()
        num = np.linalg.norm(linear_graph_transform((A, B, C, D), l1)
                             - linear_graph_transform((A, B, C, D), l2), 2)
        den = np.linalg.norm(l1 - l2, 2)
        if den > 0:
            best = max(best, num / den)
    return best


def split_blocks(cc: Cocycle, j: int, i: int, Fs_j, Fcu_j, Fs_i, Fcu_i) -> np.ndarray:
    """``DX_{-(t_j - t_i)}`` from ``F_j = Fs_j + Fcu_j`` to ``F_i``, as block matrices (m, d, d)."""
    Fj = np.concatenate([Fs_j, Fcu_j], axis=-1)
    Fi = np.concatenate([Fs_i, Fcu_i], axis=-1)
    V, log_s = cc.pull(j, i, Fj)
    return np.linalg.solve(Fi, V) * np.exp(log_s)[:, None, None]


@dataclass
class FiberReport:
    q: float
    T: float
    lip: np.ndarray
    norm_q: np.ndarray  # ||DX_T(hx)||^q
    products: np.ndarray
    eta: np.ndarray
    passed: bool
    margin_tol: float


def fiber_contraction_check(
    spec: VectorFieldSpec,
    samples: SampleSet,
    q: float,
    T: float,
    *,
    cocycle: Cocycle | None = None,
    n_probe: int = 32,
    seed: int = 0,
    margin_tol: float = 1e-9,
    jobs: int | None = None,
) -> FiberReport:
    """Lip(Gamma_x) * ||DX_T(hx)||^q and the bunching exponent at every sample.

    ``h = X_{-T}``; ``x`` is the sample advanced by ``T`` and the fibres use
    the estimated splitting.  Both quantities must stay below 1 (resp. 0)
    by ``margin_tol`` to pass.
    """
    cc = cocycle or sample_cocycle(spec, samples, T, jobs=jobs)
    i, j = cc.i0, cc.index(T)
    blocks = split_blocks(cc, j, i, cc.Es(j), cc.Ecu(j), cc.Es(i), cc.Ecu(i))
    ds = cc.d_s
    lip = np.array([lipschitz_estimate(b, ds, n_probe, seed) for b in blocks])
    full = cc.run.R[:, i + 1 : j + 1]
    log_norm, _, _ = _prod_norms(full)
    norm_q = np.exp(q * log_norm)
    prod = lip * norm_q
    eta = cc.eta(i, j, q)
    passed = bool(np.all(prod < 1 - margin_tol) and np.all(eta < -margin_tol))
    return FiberReport(q, T, lip, norm_q, prod, eta, passed, margin_tol)


def invariant_section(blocks, ds: int, ell0=None) -> np.ndarray:
    """Iterate ``ell <- Gamma(ell)`` along a sequence of blocks (applied in order)."""
    blocks = list(blocks)
    c = blocks[0].shape[0] - ds
    ell = np.zeros((c, ds)) if ell0 is None else np.asarray(ell0, dtype=float)
    for b in blocks:
        ell = linear_graph_transform(b, ell)
    return ell


# --------------------------------------------------------------------------
# holonomy


@dataclass
class HolonomyReport:
    """EMPIRICAL: stable holonomy between two transversal hyperplanes."""

    source: np.ndarray  # coordinates on the first transversal
    image: np.ndarray  # coordinates on the second transversal
    exponent: float
    exponent_coarse: float
    missed: list[int]
    label: str = "EMPIRICAL"


def _fit_exponent(src, img) -> float:
    a, b = [], []
    for i, j in itertools.combinations(range(len(src)), 2):
        ds = np.linalg.norm(src[i] - src[j])
        di = np.linalg.norm(img[i] - img[j])
        if ds > 0 and di > 0:
            a.append(math.log(ds))
            b.append(math.log(di))
    if len(a) < 2 or np.ptp(a) == 0:
        return float("nan")
    return float(np.polyfit(a, b, 1)[0])


def holonomy_sample(
    spec: VectorFieldSpec,
    x,
    n_points: int,
    *,
    distance: float = 0.1,
    spread: float = 0.05,
    T: float = DEFAULT_DT,
    n_steps: int = 10,
    rho: float | None = None,
    grid_N: int = 65,
    t_fwd: float = 1.0,
    seed: int = 0,
) -> HolonomyReport:
    """Slide ``n_points`` points of the transversal ``x + E^cu_x`` along their stable leaves
    onto the parallel transversal shifted by ``distance`` along ``E^s_x``.

    Only ``d_s = 1`` is supported: the transversals are then hyperplanes.
    """
    if n_points < 2:
        raise ValueError("holonomy needs at least two points")
    if spec.d_s != 1:
        raise ValueError("holonomy sampling is implemented for d_s = 1")
    x = np.asarray(x, dtype=float)
    rho = 1.5 * distance if rho is None else rho
    ref = build_charts(spec, x, T, 1, rho, t_fwd=t_fwd, seed=seed, check=False)
    Es = ref.frames[0][0].Ps[:, 0]
    Ecu = ref.frames[0][0].Pcu
    normal = Es - Ecu @ (Ecu.T @ Es)
    normal /= np.linalg.norm(normal)
    coef = np.linspace(-spread, spread, n_points)
    src = np.column_stack([coef, np.zeros_like(coef)])
    starts = x + src @ Ecu.T
    orbit = build_charts(spec, starts, T, n_steps, rho, t_fwd=t_fwd, seed=seed, check=False)
    hp = hadamard_perron(orbit.maps, None, rho, grid_N)
    c2 = x + distance * Es
    image = np.full((n_points, Ecu.shape[1]), np.nan)
    missed = []
    s = np.linspace(-rho, rho, 4 * grid_N)
    for k in range(n_points):
        pts = leaf_points(orbit.frames[k][0], hp.patches[k][0], s[:, None])
        sd = (pts - c2) @ normal
        cross = np.nonzero(np.sign(sd[:-1]) * np.sign(sd[1:]) <= 0)[0]
        if len(cross) == 0:
            missed.append(k)
            continue
        a = cross[0]
        w = sd[a] / (sd[a] - sd[a + 1]) if sd[a] != sd[a + 1] else 0.0
        y = pts[a] + w * (pts[a + 1] - pts[a])
        image[k] = np.linalg.lstsq(Ecu, y - c2, rcond=None)[0]
    if missed:
        raise HolonomyError(f"leaves {missed} miss the second transversal")
    expo = _fit_exponent(src, image)
    coarse = _fit_exponent(src[::2], image[::2]) if n_points >= 6 else expo
    return HolonomyReport(src, image, expo, coarse, missed)


def export_holonomy_csv(path, report: HolonomyReport) -> None:
    c = report.source.shape[1]
    names = [f"a{i + 1}" for i in range(c)] + [f"b{i + 1}" for i in range(c)]
    write_csv(path, names, np.hstack([report.source, report.image]))


def tangency_angle(frame: ChartFrame, patch: GraphPatch, Es_ref) -> float:
    """Angle between the leaf tangent at the base point and a reference E^s."""
    slope = patch.slope_at_zero()
    tangent = frame.Ps + frame.Pcu @ slope
    return float(subspace_angles(tangent, np.asarray(Es_ref, dtype=float).reshape(len(tangent), -1)).max())
