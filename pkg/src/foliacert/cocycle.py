"""Tangent-cocycle numerics: flows, Lyapunov spectra, splittings, bunching.

Everything is built on one primitive, :func:`run_cocycle`, which integrates
a batch of base points together with full tangent frames and renormalises
the frames by QR every ``dt`` time units.  With ``Q_k`` the frame at the
k-th checkpoint the factors satisfy ``DX_dt(x_{k-1}) Q_{k-1} = Q_k R_k``.

From these factors the splitting is read off without ever pushing a
stable vector forward (which is numerically hopeless):

* ``E^cu`` at checkpoint k is the span of the leading ``d_cu`` columns of
  ``Q_k``, provided the run started far enough in the past;
* ``E^s`` is obtained by iterating ``R_k^{-1}`` backwards from a generic
  frame placed far enough in the future.

Norms of the cocycle restricted to either bundle are then products of small
triangular blocks, accumulated with log rescaling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .field_spec import VectorFieldSpec
from .ode import Solution, solve

DEFAULT_DT = 0.5
DEFAULT_TRANSIENT = 50.0
STABLE_TARGET = 1 / 150
MIN_GAP = 5.0
PAST_STEPS_PER_UNIT = 20_000  # backward orbits needing more steps are rejected


class DominationError(RuntimeError):
    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class BackwardIntegrationError(RuntimeError):
    pass


class LyapunovConvergenceError(RuntimeError):
    def __init__(self, message: str, spectrum: "LyapunovSpectrum"):
        super().__init__(message)
        self.spectrum = spectrum


def _check_tol(tol: float) -> float:
    if not 1e-13 <= tol <= 1e-6:
        raise ValueError(f"tolerance must lie in [1e-13, 1e-6], got {tol}")
    return tol


def _steps(t: float, dt: float) -> int:
    n = round(t / dt)
    if n < 0 or abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a non-negative multiple of dt={dt}")
    return n


def _qr_pos(M: np.ndarray):
    """Batched QR with a non-negative diagonal in R."""
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diagonal(R, axis1=-2, axis2=-1)).copy()
    s[s == 0] = 1.0
    return Q * s[..., None, :], R * s[..., :, None]


def random_frames(rng: np.random.Generator, m: int, d: int, k: int | None = None) -> np.ndarray:
    k = d if k is None else k
    Q, _ = _qr_pos(rng.standard_normal((m, d, k)))
    return Q


# --------------------------------------------------------------------------
# flows


def integrate_flow(spec: VectorFieldSpec, x0, t: float, tol: float = 1e-10,
                   max_steps: int = 10_000_000) -> np.ndarray:
    """``X_t(x0)``; ``t`` may be negative."""
    _check_tol(tol)
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    return solve(spec.flow_rhs(), x0, [0.0, t], rtol=tol, atol=tol, max_steps=max_steps).y[-1]


def trajectory(spec: VectorFieldSpec, x0, times, tol: float = 1e-10, dense: bool = False) -> Solution:
    """Orbit sampled at ``times`` (and a Hermite interpolant with ``dense``)."""
    _check_tol(tol)
    return solve(spec.flow_rhs(), np.asarray(x0, dtype=float), times, rtol=tol, atol=tol, dense=dense)


@dataclass
class FlowState:
    """Base point and QR-renormalised tangent frame after time ``t``.

    ``DX_t(x0) @ frame0 == frame @ coeffs * exp(log_scale)``.
    """

    x: np.ndarray
    frame: np.ndarray
    log_norms: np.ndarray
    t: float
    coeffs: np.ndarray
    log_scale: float

    def tangent_map(self) -> np.ndarray:
        return self.frame @ self.coeffs * math.exp(self.log_scale)


@dataclass
class CocycleRun:
    dt: float
    points: np.ndarray  # (m, n+1, d)
    Q: np.ndarray  # (m, n+1, d, k)
    R: np.ndarray  # (m, n+1, k, k); R[:, 0] factors the initial frame


def run_cocycle(
    spec: VectorFieldSpec,
    starts,
    n_steps: int,
    dt: float = DEFAULT_DT,
    frames=None,
    tol: float = 1e-10,
) -> CocycleRun:
    """QR-renormalised tangent runs from each row of ``starts`` for ``n_steps`` checkpoints."""
    return _run(spec, starts, dt * np.arange(n_steps + 1), frames, tol, dt)


def _run(spec, starts, times, frames, tol, dt) -> CocycleRun:
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    m, d = starts.shape
    if d != spec.dimension:
        raise ValueError(f"points must lie in R^{spec.dimension}")
    if frames is None:
        frames = np.eye(d)
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = np.broadcast_to(frames, (m,) + frames.shape)
    k = frames.shape[-1]
    sv = np.linalg.svd(frames, compute_uv=False)
    if np.any(sv[..., -1] <= 1e-12 * sv[..., 0]):
        raise ValueError("tangent frame must have full column rank")
    n1 = len(times)
    pts = np.empty((m, n1, d))
    Qs = np.empty((m, n1, d, k))
    Rs = np.empty((m, n1, k, k))

    def renorm(i, Y):
        Q, R = _qr_pos(Y[..., 1:])
        pts[:, i], Qs[:, i], Rs[:, i] = Y[..., 0], Q, R
        Y = Y.copy()
        Y[..., 1:] = Q
        return Y

    Y0 = np.concatenate([starts[..., None], frames], axis=-1)
    solve(spec.tangent_rhs(), Y0, times, rtol=tol, atol=tol, on_output=renorm, keep=False)
    return CocycleRun(dt, pts, Qs, Rs)


def integrate_tangent(
    spec: VectorFieldSpec,
    x0,
    t: float,
    frame=None,
    renorm_every: float = DEFAULT_DT,
    tol: float = 1e-10,
) -> FlowState:
    """Joint integration of ``x0`` and the columns of ``frame`` (default I).

    Renormalisation happens on a uniform grid ending exactly at ``t`` with
    spacing at most ``renorm_every``.
    """
    _check_tol(tol)
    x0 = np.asarray(x0, dtype=float)
    d = spec.dimension
    frame = np.eye(d) if frame is None else np.asarray(frame, dtype=float).reshape(d, -1)
    n = max(1, math.ceil(abs(t) / renorm_every - 1e-9))
    times = np.linspace(0.0, t, n + 1)
    run = _run(spec, x0[None], times, frame[None], tol, t / n)
    R = run.R[0]
    coeffs = R[0]
    log_scale = 0.0
    for Rk in R[1:]:
        coeffs = Rk @ coeffs
        s = np.abs(coeffs).max()
        coeffs = coeffs / s
        log_scale += math.log(s)
    logs = np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1))).sum(axis=0)
    return FlowState(run.points[0, -1], run.Q[0, -1], logs, t, coeffs, log_scale)


# --------------------------------------------------------------------------
# Lyapunov spectrum


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray  # ascending, per unit time
    horizon: float
    tail_slope: float
    renorm_every: float
    running: np.ndarray = field(repr=False, default=None)  # (n, d) running means


def lyapunov_spectrum(
    spec: VectorFieldSpec,
    x0,
    horizon: float = 1000.0,
    renorm_every: float = DEFAULT_DT,
    *,
    transient: float = DEFAULT_TRANSIENT,
    tol: float = 1e-8,
    tail_tol: float = 0.05,
) -> LyapunovSpectrum:
    """Benettin QR exponents along the orbit of ``x0``.

    ``tail_slope`` is the largest drift of a running mean over the last
    fifth of the horizon.
    """
    if horizon < 500:
        raise ValueError("horizon must be at least 500 time units")
    _check_tol(tol)
    x = integrate_flow(spec, x0, transient, tol) if transient > 0 else np.asarray(x0, float)
    n = _steps(horizon, renorm_every)
    run = run_cocycle(spec, x[None], n, renorm_every, tol=tol)
    logs = np.log(np.diagonal(run.R[0, 1:], axis1=-2, axis2=-1))
    running = np.cumsum(logs, axis=0) / (renorm_every * np.arange(1, n + 1))[:, None]
    order = np.argsort(running[-1])
    running = running[:, order]
    tail = running[int(0.8 * n):]
    slope = float(np.abs(tail - running[-1]).max())
    spec_ = LyapunovSpectrum(running[-1].copy(), horizon, slope, renorm_every, running)
    if slope > tail_tol:
        raise LyapunovConvergenceError(
            f"running exponents drift by {slope:.3g} over the last 20% of the horizon", spec_
        )
    return spec_


def flow_direction_exponent(spec: VectorFieldSpec, x0, t: float, dt: float = DEFAULT_DT,
                            tol: float = 1e-10) -> float:
    """Finite-time stretching exponent of the flow direction.

    The vector field is re-seeded at each checkpoint so the unstable
    component of rounding errors never builds up.
    """
    n = _steps(t, dt)
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for _ in range(n):
        g = spec.f(x)
        ng = float(np.linalg.norm(g))
        if ng == 0:
            raise ValueError("flow direction undefined at an equilibrium")
        st = integrate_tangent(spec, x, dt, (g / ng)[:, None], dt, tol)
        total += float(st.log_norms[0])
        x = st.x
    return total / t


# --------------------------------------------------------------------------
# splittings and restricted norms


@dataclass
class SplittingEstimate:
    Es: np.ndarray
    Ecu: np.ndarray
    angle_margin: float

    @classmethod
    def from_bases(cls, Es, Ecu) -> "SplittingEstimate":
        Es = np.linalg.qr(np.asarray(Es, dtype=float))[0]
        Ecu = np.linalg.qr(np.asarray(Ecu, dtype=float))[0]
        return cls(Es, Ecu, float(subspace_angles(Es, Ecu).min()))


@dataclass
class ConeParams:
    a: float
    reference: SplittingEstimate | None = None

    def __post_init__(self):
        if not 0 < self.a <= 0.25:
            raise ValueError(f"cone width must lie in (0, 1/4], got {self.a}")


@dataclass
class FiniteTimeNorms:
    log_ns: np.ndarray | float
    log_ncu_inv: np.ndarray | float
    log_ncu: np.ndarray | float

    @property
    def ns(self):
        return np.exp(self.log_ns)

    @property
    def ncu_inv(self):
        return np.exp(self.log_ncu_inv)

    @property
    def ncu(self):
        return np.exp(self.log_ncu)

    def eta(self, q: float):
        return self.log_ns + self.log_ncu_inv + q * self.log_ncu

    def as_tuple(self):
        return (self.ns, self.ncu_inv, self.ncu)


def _prod_norms(mats, inverse=False):
    """log sigma_max of ``M_L ... M_1`` (or of ``M_1^-1 ... M_L^-1`` with ``inverse``).

    ``mats`` has shape (m, L, c, c) in application order.  Returns the log
    norm together with the rescaled product and its log scale.
    """
    m, L, c, _ = mats.shape
    P = np.broadcast_to(np.eye(c), (m, c, c)).copy()
    log_s = np.zeros(m)
    inv = np.linalg.inv(mats) if inverse else None
    for k in range(L):
        P = P @ inv[:, k] if inverse else mats[:, k] @ P
        s = np.abs(P).max(axis=(1, 2))
        P /= s[:, None, None]
        log_s += np.log(s)
    top = np.linalg.svd(P, compute_uv=False)[:, 0]
    return log_s + np.log(top), P, log_s


class Cocycle:
    """Splitting and restricted norms along a batch of QR cocycle runs.

    ``i0`` is the checkpoint index of the sample points; the run extends
    ``i0`` checkpoints into their past and beyond any queried time into
    their future.
    """

    def __init__(self, run: CocycleRun, d_s: int, i0: int, rng: np.random.Generator):
        self.run = run
        self.d_s = d_s
        self.i0 = i0
        m, n1, d, _ = run.Q.shape
        self.c = d - d_s
        self.n = n1 - 1
        W = np.empty((m, n1, d, d_s))
        T = np.ones((m, n1, d_s, d_s))
        w = random_frames(rng, m, d, d_s)
        W[:, -1] = w
        for k in range(self.n, 0, -1):
            w, T[:, k] = _qr_pos(np.linalg.solve(run.R[:, k], w))
            W[:, k - 1] = w
        self.W = W
        self.T = T

    @property
    def dt(self) -> float:
        return self.run.dt

    @property
    def m(self) -> int:
        return self.run.Q.shape[0]

    def index(self, t: float) -> int:
        return self.i0 + _steps(t, self.dt)

    def points(self, i: int) -> np.ndarray:
        return self.run.points[:, i]

    def Es(self, i: int) -> np.ndarray:
        return self.run.Q[:, i] @ self.W[:, i]

    def Ecu(self, i: int) -> np.ndarray:
        return self.run.Q[:, i, :, : self.c]

    def splitting(self, i: int, k: int = 0) -> SplittingEstimate:
        return SplittingEstimate.from_bases(self.Es(i)[k], self.Ecu(i)[k])

    def forward_gap(self) -> np.ndarray:
        """Accumulated log gap between the cu and s diagonal blocks over the past."""
        return self._gap(1, self.i0 + 1)

    def backward_gap(self, i: int | None = None) -> np.ndarray:
        i = self.i0 if i is None else i
        return self._gap(i + 1, self.n + 1)

    def _gap(self, a: int, b: int) -> np.ndarray:
        diag = np.log(np.diagonal(self.run.R[:, a:b], axis1=-2, axis2=-1))
        return (diag[..., self.c - 1] - diag[..., self.c]).sum(axis=1)

    def norms(self, i: int, j: int) -> FiniteTimeNorms:
        """Restricted norms over checkpoints ``i -> j`` (``j > i``)."""
        if not 0 <= i < j <= self.n:
            raise ValueError(f"bad checkpoint segment {i}..{j}")
        T = self.T[:, i + 1 : j + 1]
        if self.d_s == 1:
            log_ns = -np.log(T[..., 0, 0]).sum(axis=1)
        else:
            # R_k W_{k-1} = W_k T_k^{-1}, so the restricted map is T_j^{-1} ... T_{i+1}^{-1}
            log_ns, _, _ = _prod_norms(np.linalg.inv(T))
        B = self.run.R[:, i + 1 : j + 1, : self.c, : self.c]
        log_ncu, _, _ = _prod_norms(B)
        log_ncu_inv, _, _ = _prod_norms(B, inverse=True)
        return FiniteTimeNorms(log_ns, log_ncu_inv, log_ncu)

    def eta(self, i: int, j: int, q: float) -> np.ndarray:
        return self.norms(i, j).eta(q)

    def log_det_cu(self, i: int, j: int) -> np.ndarray:
        B = self.run.R[:, i + 1 : j + 1, : self.c, : self.c]
        return np.log(np.abs(np.diagonal(B, axis1=-2, axis2=-1))).sum(axis=(1, 2))

    def sectional(self, i: int, j: int, n_planes: int = 32, rng=None) -> np.ndarray:
        """``(1/t) log |det|`` on E^cu (d_cu = 2) or its minimum over sampled 2-planes."""
        t = (j - i) * self.dt
        if self.c == 2:
            return self.log_det_cu(i, j) / t
        B = self.run.R[:, i + 1 : j + 1, : self.c, : self.c]
        _, P, log_s = _prod_norms(B)
        rng = rng or np.random.default_rng(0)
        planes = [np.eye(self.c)[:, [a, b]] for a in range(self.c) for b in range(a + 1, self.c)]
        planes += [np.linalg.qr(rng.standard_normal((self.c, 2)))[0] for _ in range(n_planes)]
        vals = []
        for U in planes:
            PU = P @ U
            g = np.linalg.det(np.swapaxes(PU, -1, -2) @ PU)
            vals.append(0.5 * np.log(g) + 2 * log_s)
        return np.min(vals, axis=0) / t

    def pull(self, j: int, i: int, V: np.ndarray):
        """``DX_{-(t_j - t_i)}`` applied to vectors ``V`` (m, d, p) based at checkpoint j.

        Returns ``(vectors, log_scale)`` with the true image equal to
        ``vectors * exp(log_scale)``.
        """
        C = np.swapaxes(self.run.Q[:, j], -1, -2) @ V
        log_s = np.zeros(self.m)
        for k in range(j, i, -1):
            C = np.linalg.solve(self.run.R[:, k], C)
            s = np.abs(C).max(axis=(1, 2))
            C /= s[:, None, None]
            log_s += np.log(s)
        return self.run.Q[:, i] @ C, log_s

    def push(self, i: int, j: int, V: np.ndarray):
        """``DX_{t_j - t_i}`` applied to vectors based at checkpoint i."""
        C = np.swapaxes(self.run.Q[:, i], -1, -2) @ V
        log_s = np.zeros(self.m)
        for k in range(i + 1, j + 1):
            C = self.run.R[:, k] @ C
            s = np.abs(C).max(axis=(1, 2))
            C /= s[:, None, None]
            log_s += np.log(s)
        return self.run.Q[:, j] @ C, log_s

    def empirical_T(self, target: float = STABLE_TARGET) -> float | None:
        """Smallest multiple of dt with stable contraction <= target at every sample."""
        log_target = math.log(target)
        for j in range(self.i0 + 1, self.n + 1):
            if np.all(self.norms(self.i0, j).log_ns <= log_target):
                return (j - self.i0) * self.dt
        return None

    @staticmethod
    def concat(parts: list["Cocycle"]) -> "Cocycle":
        if len(parts) == 1:
            return parts[0]
        first = parts[0]
        out = object.__new__(Cocycle)
        out.run = CocycleRun(
            first.dt,
            np.concatenate([p.run.points for p in parts]),
            np.concatenate([p.run.Q for p in parts]),
            np.concatenate([p.run.R for p in parts]),
        )
        out.d_s, out.i0, out.c, out.n = first.d_s, first.i0, first.c, first.n
        out.W = np.concatenate([p.W for p in parts])
        out.T = np.concatenate([p.T for p in parts])
        return out


# --------------------------------------------------------------------------
# sampling


@dataclass
class SampleSet:
    """Attractor samples given by their pasts: sample k is ``X_history(pasts[k])``."""

    pasts: np.ndarray
    history: float
    labels: list[str]
    seed: int

    def __len__(self):
        return len(self.pasts)


def attractor_samples(
    spec: VectorFieldSpec,
    n: int,
    *,
    seed: int = 0,
    transient: float = DEFAULT_TRANSIENT,
    spacing: float = 1.0,
    history: float = 5.0,
    x0=None,
    equilibria=(),
    tol: float = 1e-10,
) -> SampleSet:
    """Points along one post-transient orbit, plus the given equilibria.

    Equilibria count towards ``n`` and are listed first.
    """
    equilibria = [np.asarray(e, dtype=float) for e in equilibria]
    n_orbit = n - len(equilibria)
    if n_orbit < 0:
        raise ValueError("more equilibria than requested samples")
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(spec.dimension) if x0 is None else np.asarray(x0, dtype=float)
    pasts = list(equilibria)
    if n_orbit:
        times = transient + spacing * np.arange(n_orbit)
        sol = trajectory(spec, x0, np.concatenate([[0.0], times]), tol)
        pasts += list(sol.y[1:])
    labels = ["equilibrium"] * len(equilibria) + ["orbit"] * n_orbit
    return SampleSet(np.array(pasts).reshape(n, spec.dimension), history, labels, seed)


def default_jobs() -> int:
    import os

    try:
        return max(1, int(os.environ.get("FC_JOBS", "1")))
    except ValueError:
        return 1


def sample_cocycle(
    spec: VectorFieldSpec,
    samples: SampleSet,
    t_max: float,
    *,
    t_back: float = 5.0,
    dt: float = DEFAULT_DT,
    tol: float = 1e-10,
    chunk: int = 50,
    jobs: int | None = None,
) -> Cocycle:
    """Cocycle runs covering ``[-history, t_max + t_back]`` around every sample.

    Samples are processed in fixed chunks with per-chunk seeds, so the
    result does not depend on ``jobs``.
    """
    i0 = _steps(samples.history, dt)
    n = i0 + _steps(t_max, dt) + _steps(t_back, dt)
    jobs = default_jobs() if jobs is None else max(1, jobs)
    bounds = list(range(0, len(samples), chunk))

    def work(ci):
        a = bounds[ci]
        rng = np.random.default_rng([samples.seed, ci])
        pasts = samples.pasts[a : a + chunk]
        frames = random_frames(rng, len(pasts), spec.dimension)
        run = run_cocycle(spec, pasts, n, dt, frames, tol)
        return Cocycle(run, spec.d_s, i0, rng)

    if jobs == 1:
        parts = [work(ci) for ci in range(len(bounds))]
    else:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(work, range(len(bounds))))
    return Cocycle.concat(parts)


def past_point(spec: VectorFieldSpec, x, t_fwd: float, tol: float = 1e-12) -> np.ndarray:
    """``X_{-t_fwd}(x)``, rejected unless re-integration returns to ``x`` within 1e-6."""
    x = np.asarray(x, dtype=float)
    budget = int(PAST_STEPS_PER_UNIT * max(1.0, t_fwd))
    try:
        xp = integrate_flow(spec, x, -t_fwd, tol, max_steps=budget)
        back = integrate_flow(spec, xp, t_fwd, tol, max_steps=budget)
    except RuntimeError as exc:
        raise BackwardIntegrationError(
            f"backward integration over {t_fwd} failed ({exc}); pass the orbit history explicitly"
        ) from exc
    err = float(np.linalg.norm(back - x))
    if not np.isfinite(err) or err > 1e-6 * max(1.0, float(np.linalg.norm(x))):
        raise BackwardIntegrationError(
            f"backward integration over {t_fwd} is not reproducible (error {err:.3g}); "
            "pass the orbit history explicitly"
        )
    return xp


def point_cocycle(
    spec: VectorFieldSpec,
    x=None,
    t: float = 0.0,
    *,
    past=None,
    t_fwd: float = 5.0,
    t_back: float = 5.0,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    tol: float = 1e-10,
) -> Cocycle:
    """Single-sample cocycle around ``x`` (given directly or via its past)."""
    if past is None:
        if x is None:
            raise ValueError("need x or past")
        past = past_point(spec, x, t_fwd) if t_fwd > 0 else np.asarray(x, dtype=float)
    samples = SampleSet(np.asarray(past, dtype=float)[None], t_fwd, ["point"], seed)
    return sample_cocycle(spec, samples, t, t_back=t_back, dt=dt, tol=tol, jobs=1)


def _require_gaps(cc: Cocycle, forward: bool, backward: bool):
    if backward:
        g = float(cc.backward_gap().min())
        if g < MIN_GAP:
            raise DominationError(f"domination gap {g:.3g} over the backward window is below {MIN_GAP}", g)
    if forward:
        g = float(cc.forward_gap().min())
        if g < MIN_GAP:
            raise DominationError(f"domination gap {g:.3g} over the forward window is below {MIN_GAP}", g)


def estimate_Es(spec: VectorFieldSpec, x=None, t_back: float = 5.0, *, past=None, seed: int = 0,
                tol: float = 1e-10, dt: float = DEFAULT_DT) -> np.ndarray:
    """Orthonormal basis (d x d_s) of the most contracted direction at ``x``.

    Only the future of ``x`` matters; ``past`` is accepted for symmetry.
    """
    if past is None:
        cc = point_cocycle(spec, x, 0.0, t_fwd=0.0, t_back=t_back, dt=dt, seed=seed, tol=tol)
    else:
        cc = point_cocycle(spec, past=past, t_back=t_back, dt=dt, seed=seed, tol=tol)
    _require_gaps(cc, forward=False, backward=True)
    return cc.Es(cc.i0)[0]


def estimate_Ecu(spec: VectorFieldSpec, x=None, t_fwd: float = 5.0, *, past=None, seed: int = 0,
                 tol: float = 1e-10, dt: float = DEFAULT_DT) -> np.ndarray:
    """Orthonormal basis (d x d_cu) of the most expanded subspace at ``x``."""
    cc = point_cocycle(spec, x, 0.0, past=past, t_fwd=t_fwd, t_back=0.0, dt=dt, seed=seed, tol=tol)
    _require_gaps(cc, forward=True, backward=False)
    return cc.Ecu(cc.i0)[0]


def estimate_splitting(spec: VectorFieldSpec, x=None, *, past=None, t_fwd: float = 5.0,
                       t_back: float = 5.0, seed: int = 0, tol: float = 1e-10,
                       dt: float = DEFAULT_DT) -> SplittingEstimate:
    cc = point_cocycle(spec, x, 0.0, past=past, t_fwd=t_fwd, t_back=t_back, dt=dt, seed=seed, tol=tol)
    _require_gaps(cc, forward=True, backward=True)
    return cc.splitting(cc.i0)


def _explicit_norms(spec, x, t, splitting: SplittingEstimate, dt, tol):
    # forward pushes of exactly invariant bundles (linear or equilibrium cases)
    s = integrate_tangent(spec, x, t, splitting.Es, dt, tol)
    cu = integrate_tangent(spec, x, t, splitting.Ecu, dt, tol)
    sv_s = np.linalg.svd(s.coeffs, compute_uv=False)
    sv_cu = np.linalg.svd(cu.coeffs, compute_uv=False)
    log_ns = math.log(sv_s[0]) + s.log_scale
    log_ncu = math.log(sv_cu[0]) + cu.log_scale
    log_ncu_inv = -(math.log(sv_cu[-1]) + cu.log_scale)
    return FiniteTimeNorms(log_ns, log_ncu_inv, log_ncu), cu


def finite_time_norms(spec: VectorFieldSpec, x=None, t: float = 1.0, splitting=None, *,
                      past=None, t_fwd: float = 5.0, t_back: float = 5.0, seed: int = 0,
                      tol: float = 1e-10, dt: float = DEFAULT_DT) -> FiniteTimeNorms:
    """``(||DX_t|E^s||, ||DX_-t|E^cu_{X_t x}||, ||DX_t|E^cu||)`` in log form.

    With an explicit ``splitting`` the bundles are pushed forward directly,
    which is only meaningful when that splitting is exactly invariant.
    """
    if splitting is not None:
        return _explicit_norms(spec, np.asarray(x, float), t, splitting, dt, tol)[0]
    cc = point_cocycle(spec, x, t, past=past, t_fwd=t_fwd, t_back=t_back, dt=dt, seed=seed, tol=tol)
    nrm = cc.norms(cc.i0, cc.index(t))
    return FiniteTimeNorms(float(nrm.log_ns[0]), float(nrm.log_ncu_inv[0]), float(nrm.log_ncu[0]))


def eta(spec: VectorFieldSpec, x=None, t: float = 1.0, q: float = 1.0, **kwargs) -> float:
    """``log(ns * ncu_inv * ncu**q)``."""
    return float(finite_time_norms(spec, x, t, **kwargs).eta(q))


def sectional_expansion_estimate(spec: VectorFieldSpec, x=None, t: float = 1.0, splitting=None, *,
                                 past=None, t_fwd: float = 5.0, seed: int = 0, tol: float = 1e-10,
                                 dt: float = DEFAULT_DT) -> float:
    if splitting is not None:
        _, cu = _explicit_norms(spec, np.asarray(x, float), t, splitting, dt, tol)
        return float(cu.log_norms.sum() / t) if cu.coeffs.shape[0] == 2 else _min_planes(cu, t)
    cc = point_cocycle(spec, x, t, past=past, t_fwd=t_fwd, t_back=0.0, dt=dt, seed=seed, tol=tol)
    return float(cc.sectional(cc.i0, cc.index(t))[0])


def _min_planes(st: FlowState, t: float, n_planes: int = 32) -> float:
    c = st.coeffs.shape[0]
    rng = np.random.default_rng(0)
    planes = [np.eye(c)[:, [a, b]] for a in range(c) for b in range(a + 1, c)]
    planes += [np.linalg.qr(rng.standard_normal((c, 2)))[0] for _ in range(n_planes)]
    vals = [0.5 * math.log(np.linalg.det((st.coeffs @ U).T @ (st.coeffs @ U))) + 2 * st.log_scale
            for U in planes]
    return min(vals) / t


# --------------------------------------------------------------------------
# cones


@dataclass
class ConeReport:
    a: float
    t: float
    t_emp: float | None
    worst_stable_ratio: float
    worst_cu_ratio: float
    min_backward_expansion: float  # log of the smallest ||DX_-t v|| / ||v|| over stable-cone probes
    n_samples: int
    n_dirs: int
    status: str  # "pass", "fail" or "inconclusive"
    stable_ratios: np.ndarray = field(repr=False, default=None)
    cu_ratios: np.ndarray = field(repr=False, default=None)


def _cone_ratio(v, Es, Ecu):
    """Cone coordinate ratio ``||v^cu|| / ||v^s||`` in the splitting ``Es + Ecu``."""
    B = np.concatenate([Es, Ecu], axis=-1)
    coef = np.linalg.solve(B, v)
    ds = Es.shape[-1]
    ns = np.linalg.norm(coef[:, :ds], axis=1)
    ncu = np.linalg.norm(coef[:, ds:], axis=1)
    return ncu, ns


def cone_check_on(cc: Cocycle, t: float, cone: ConeParams, n_dirs: int = 16, seed: int = 0) -> ConeReport:
    a = cone.a
    i, j = cc.i0, cc.index(t)
    rng = np.random.default_rng(seed)
    m, ds, c = cc.m, cc.d_s, cc.c
    Es_x, Ecu_x, Es_y, Ecu_y = cc.Es(i), cc.Ecu(i), cc.Es(j), cc.Ecu(j)

    def unit(k, p):
        u = rng.standard_normal((m, k, p))
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    alpha, beta = unit(ds, n_dirs), unit(c, n_dirs)
    # boundary of the stable cone at X_t x, pulled back to x
    w = Es_y @ alpha + a * (Ecu_y @ beta)
    v, log_s = cc.pull(j, i, w)
    ncu, ns = _cone_ratio(v, Es_x, Ecu_x)
    stable = ncu / ns
    grow = np.log(np.linalg.norm(v, axis=1)) + log_s[:, None] - np.log(np.linalg.norm(w, axis=1))
    # boundary of the center-unstable cone at x, pushed to X_t x
    alpha, beta = unit(ds, n_dirs), unit(c, n_dirs)
    u = Ecu_x @ beta + a * (Es_x @ alpha)
    img, _ = cc.push(i, j, u)
    ncu2, ns2 = _cone_ratio(img, Es_y, Ecu_y)
    cu = ns2 / ncu2
    stable_w = stable.max(axis=1)
    cu_w = cu.max(axis=1)
    t_emp = cc.empirical_T()
    ok = bool((stable_w <= a).all() and (cu_w <= a).all())
    if ok:
        status = "pass"
    elif t_emp is None or t < t_emp:
        status = "inconclusive"
    else:
        status = "fail"
    return ConeReport(a, t, t_emp, float(stable_w.max()), float(cu_w.max()), float(grow.min()),
                      m, n_dirs, status, stable_w, cu_w)


def cone_invariance_check(spec: VectorFieldSpec, samples: SampleSet, t: float, cone: ConeParams,
                          n_dirs: int = 16, *, seed: int = 0, t_back: float = 5.0,
                          tol: float = 1e-10, jobs: int | None = None) -> ConeReport:
    cc = sample_cocycle(spec, samples, t, t_back=t_back, tol=tol, jobs=jobs)
    return cone_check_on(cc, t, cone, n_dirs, seed)


# --------------------------------------------------------------------------
# CSV


def write_csv(path, header: list[str], rows) -> None:
    """Comma-separated values with a header row and 17 significant digits."""
    np.savetxt(path, np.asarray(rows, dtype=float), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")


def write_trajectory_csv(path, times, points, extras=None, extra_names=()) -> None:
    points = np.asarray(points, dtype=float)
    cols = [np.asarray(times, dtype=float)[:, None], points]
    names = ["t"] + [f"x{i + 1}" for i in range(points.shape[1])]
    if extras is not None:
        cols.append(np.asarray(extras, dtype=float).reshape(len(points), -1))
        names += list(extra_names)
    write_csv(path, names, np.hstack(cols))
