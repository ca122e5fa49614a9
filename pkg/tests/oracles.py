"""Independent reference computations used by the test suite.

None of these call into the package numerics: closed forms are written out
by hand, and the numerical oracles use scipy or plain iteration.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import solve_ivp

SQRT72 = math.sqrt(72.0)


# ---------------------------------------------------------------------------
# Lorenz by hand


def lorenz_rhs(x, sigma=10.0, r=28.0, b=8.0 / 3.0):
    x1, x2, x3 = x
    return np.array([sigma * (x2 - x1), r * x1 - x2 - x1 * x3, x1 * x2 - b * x3])


def lorenz_jac(x, sigma=10.0, r=28.0, b=8.0 / 3.0):
    x1, x2, x3 = x
    return np.array([[-sigma, sigma, 0.0], [r - x3, -1.0, -x1], [x2, x1, -b]])


def lorenz_origin_eigenvalues():
    """Roots of l^2 + 11 l - 270 for the (x1, x2) block, plus -8/3."""
    s = math.sqrt(1201.0)
    return ((-11 - s) / 2, -8 / 3, (-11 + s) / 2)


def lorenz_origin_strong_stable():
    """Eigenvector of ``(-11 - sqrt 1201)/2`` for the block [[-10, 10], [28, -1]]."""
    lam = lorenz_origin_eigenvalues()[0]
    v = np.array([10.0, lam + 10.0, 0.0])
    return v / np.linalg.norm(v)


def lorenz_flow(x0, t, rtol=1e-12, atol=1e-12):
    sol = solve_ivp(lambda _, y: lorenz_rhs(y), (0, t), np.asarray(x0, float), method="DOP853",
                    rtol=rtol, atol=atol)
    return sol.y[:, -1]


def lorenz_orbit(x0, times, rtol=1e-10, atol=1e-10):
    sol = solve_ivp(lambda _, y: lorenz_rhs(y), (times[0], times[-1]), np.asarray(x0, float),
                    method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    return sol.y.T


def fd_flow_jacobian(x0, t, h=1e-6):
    """Central finite differences of the time-t Lorenz map (scipy integrator)."""
    x0 = np.asarray(x0, float)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((lorenz_flow(x0 + e, t) - lorenz_flow(x0 - e, t)) / (2 * h))
    return np.array(cols).T


def benettin_exponents(x0, horizon, dt=0.5, transient=20.0):
    """Plain Benettin QR with scipy, variational equations appended to the state."""

    def rhs(_, y):
        x = y[:3]
        V = y[3:].reshape(3, 3)
        return np.concatenate([lorenz_rhs(x), (lorenz_jac(x) @ V).ravel()])

    x = lorenz_flow(x0, transient)
    V = np.eye(3)
    sums = np.zeros(3)
    n = int(round(horizon / dt))
    for _ in range(n):
        y = solve_ivp(rhs, (0, dt), np.concatenate([x, V.ravel()]), method="DOP853",
                      rtol=1e-9, atol=1e-9).y[:, -1]
        x = y[:3]
        Q, R = np.linalg.qr(y[3:].reshape(3, 3))
        s = np.sign(np.diag(R))
        V = Q * s
        sums += np.log(np.abs(np.diag(R)))
    return np.sort(sums / (n * dt))


# ---------------------------------------------------------------------------
# invariant manifold of a polynomial saddle map
#
# g(u, v) = (u/3 + u v / 10, 2 v + u^2 / 100); the stable manifold is the
# graph v = phi(u) with phi(g_1(u, phi(u))) = 2 phi(u) + u^2 / 100.


def saddle_map(u, v):
    return u / 3 + u * v / 10, 2 * v + u * u / 100


def saddle_series(order=12):
    """Taylor coefficients of phi, solved degree by degree."""
    a = np.zeros(order + 1)
    for k in range(2, order + 1):
        trial = a.copy()
        g1 = npoly.polyadd([0, 1 / 3], npoly.polymul([0, 1 / 10], trial))[: order + 1]
        comp = np.zeros(order + 1)
        for j in range(2, k):
            comp = npoly.polyadd(comp, a[j] * _truncate(npoly.polypow(g1, j), order))[: order + 1]
        a[k] = (comp[k] - (1 / 100 if k == 2 else 0.0)) / (2 - 3.0**-k)
    return a


def _truncate(p, order):
    p = np.asarray(p)[: order + 1]
    return np.pad(p, (0, order + 1 - len(p)))


def saddle_series_eval(a, u):
    return npoly.polyval(u, a)


def saddle_bisection(u, n_iter=45, v_lo=-0.05, v_hi=0.05, n_bisect=80):
    """The v whose forward orbit stays small, found by bisection on the escape side."""

    def side(v):
        uu, vv = u, v
        for _ in range(n_iter):
            uu, vv = saddle_map(uu, vv)
            if abs(vv) > 1.0:
                break
        return np.sign(vv)

    lo, hi = v_lo, v_hi
    s_lo = side(lo)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if side(mid) == s_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# geometry


def subspace_angle(A, B):
    """Largest principal angle, from the sine (accurate for small angles)."""
    Qa, _ = np.linalg.qr(np.asarray(A, float).reshape(len(A), -1))
    Qb, _ = np.linalg.qr(np.asarray(B, float).reshape(len(B), -1))
    if Qa.shape[1] != Qb.shape[1]:
        raise ValueError("subspaces of different dimension")
    resid = Qb - Qa @ (Qa.T @ Qb)
    return float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))


def frob_grid_max(box, n):
    """Dense grid maximum of ||DG||_F for Lorenz, computed from the hand Jacobian."""
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    best = 0.0
    for x1 in axes[0]:
        X2, X3 = np.meshgrid(axes[1], axes[2], indexing="ij")
        # squared entries: 100 + 100 + (28 - x3)^2 + 1 + x1^2 + x2^2 + x1^2 + (8/3)^2
        val = 201 + (28 - X3) ** 2 + 2 * x1 * x1 + X2**2 + 64 / 9
        best = max(best, float(np.sqrt(val.max())))
    return best
