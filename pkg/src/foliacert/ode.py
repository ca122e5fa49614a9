"""Adaptive Dormand-Prince 5(4) integrator for batched autonomous systems.

The state may be any array; the leading axis is treated as a batch of
independent trajectories sharing one step size (the error norm is the worst
row).  Steps are clipped so every requested output time is hit exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array(A[6] + [0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class StepSizeUnderflow(RuntimeError):
    def __init__(self, t: float, h: float):
        super().__init__(f"step size underflow (h={h:.3g}) at t={t:.17g}")
        self.t = t
        self.h = h


def _err_norm(err, y, ynew, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
    r = (err / scale) ** 2
    if r.ndim <= 1:
        return float(np.sqrt(np.mean(r)))
    return float(np.sqrt(r.reshape(r.shape[0], -1).mean(axis=1).max()))


@dataclass
class HermiteSegment:
    t0: float
    t1: float
    y0: np.ndarray
    y1: np.ndarray
    f0: np.ndarray
    f1: np.ndarray

    def __call__(self, t: float) -> np.ndarray:
        h = self.t1 - self.t0
        s = (t - self.t0) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * self.y0 + h10 * h * self.f0 + h01 * self.y1 + h11 * h * self.f1


class DenseOutput:
    """Piecewise cubic Hermite interpolant over accepted steps."""

    def __init__(self, segments: list[HermiteSegment]):
        self.segments = segments
        self.breaks = np.array([s.t0 for s in segments] + [segments[-1].t1])
        self.forward = self.breaks[-1] >= self.breaks[0]

    def __call__(self, t: float) -> np.ndarray:
        b = self.breaks if self.forward else -self.breaks
        tt = t if self.forward else -t
        i = int(np.clip(np.searchsorted(b, tt, side="right") - 1, 0, len(self.segments) - 1))
        return self.segments[i](t)


@dataclass
class Solution:
    t: np.ndarray
    y: np.ndarray  # shape (len(t),) + y0.shape
    n_steps: int
    n_rejected: int
    dense: DenseOutput | None = None


def solve(rhs, y0, times, *, rtol=1e-10, atol=1e-10, h0=None, dense=False,
          max_steps=10_000_000, on_output=None, keep=True) -> Solution:
    """Integrate ``y' = rhs(y)`` from ``times[0]`` through every entry of ``times``.

    ``times`` must be monotone (either direction).  Returns the states at
    ``times``; with ``dense=True`` also a Hermite interpolant for event
    queries.  ``on_output(i, y)`` may return a replacement state (used for
    tangent-frame renormalisation); the recorded output is the state before
    replacement.  With ``keep=False`` only the final state is stored.
    """
    times = np.asarray(times, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty(((len(times) if keep else 1),) + y.shape)
    out[0] = y
    if on_output is not None:
        new = on_output(0, y)
        if new is not None:
            y = np.array(new, dtype=float)
    if len(times) == 1:
        return Solution(times, out, 0, 0)
    direction = np.sign(times[-1] - times[0]) or 1.0
    if np.any(direction * np.diff(times) < 0):
        raise ValueError("output times must be monotone")
    t = times[0]
    f = rhs(y)
    if h0 is None:
        d0 = np.sqrt(np.mean((y / (atol + rtol * np.abs(y))) ** 2))
        d1 = np.sqrt(np.mean((f / (atol + rtol * np.abs(y))) ** 2))
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h = min(h, abs(times[-1] - times[0]))
    else:
        h = abs(h0)
    segments: list[HermiteSegment] = []
    n_steps = n_rej = 0
    k = [None] * 7
    for idx in range(1, len(times)):
        target = times[idx]
        while direction * (target - t) > 0:
            if n_steps + n_rej >= max_steps:
                raise RuntimeError(f"maximum number of steps exceeded at t={t}")
            remaining = abs(target - t)
            last = h >= remaining * (1 - 1e-12)
            hs = remaining if last else h
            if hs < 1e-14 * max(1.0, abs(t)):
                raise StepSizeUnderflow(t, hs)
            step = direction * hs
            k[0] = f
            try:
                with np.errstate(over="raise", invalid="raise"):
                    for s in range(1, 7):
                        acc = y + step * sum(a * kk for a, kk in zip(A[s], k[:s]) if a != 0.0)
                        k[s] = rhs(acc)
                    ynew = acc  # stage 7 is evaluated at the 5th-order solution (FSAL)
                    err = step * sum(e * kk for e, kk in zip(E, k) if e != 0.0)
                    en = _err_norm(err, y, ynew, rtol, atol)
            except (FloatingPointError, ArithmeticError):
                en = np.inf
            if not np.isfinite(en):
                h = hs * MIN_FACTOR
                n_rej += 1
                continue
            if en <= 1.0:
                t_new = target if last else t + step
                if dense:
                    segments.append(HermiteSegment(t, t_new, y, ynew, f, k[6]))
                t, y, f = t_new, ynew, k[6]
                n_steps += 1
                factor = MAX_FACTOR if en == 0 else min(MAX_FACTOR, SAFETY * en ** -0.2)
                h = max(h, hs * factor) if last else hs * factor
            else:
                h = hs * max(MIN_FACTOR, SAFETY * en ** -0.2)
                n_rej += 1
        out[idx if keep else 0] = y
        if on_output is not None:
            new = on_output(idx, y)
            if new is not None:
                y = np.array(new, dtype=float)
                f = rhs(y)
    return Solution(times, out, n_steps, n_rej, DenseOutput(segments) if dense and segments else None)
