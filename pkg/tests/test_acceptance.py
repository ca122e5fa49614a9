"""The ten acceptance criteria, each timed against its limit.

Every criterion prints one PASS/FAIL line; the lines are repeated in the
pytest terminal summary.
"""

import functools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from foliacert import cocycle as cy
from foliacert import foliation as fo
from foliacert import report as rp
from foliacert.config import load_config
from foliacert.field_spec import eval_jacobian, lorenz, parse_field
from foliacert.region_bounds import x1_quadratic_root
from foliacert.spectral import eigen_data, find_equilibria

from . import oracles

RESULTS: dict[int, str] = {}


def criterion(num: int, title: str, limit: float):
    def deco(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            note = ""
            try:
                fn(*args, **kwargs)
                elapsed = time.perf_counter() - t0
                assert elapsed < limit, f"took {elapsed:.1f} s, limit {limit:g} s"
            except BaseException as exc:
                note = f": {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                raise
            finally:
                elapsed = time.perf_counter() - t0
                verdict = "FAIL" if note else "PASS"
                line = f"criterion {num:2d} {verdict} ({elapsed:6.1f} s / {limit:g} s) {title}{note}"
                RESULTS[num] = line
                print(line)

        return run

    return deco


def _step(tree, name):
    return next(s for s in tree["bound_chain"]["steps"] if s["name"] == name)


@criterion(1, "certified pipeline on the shipped Lorenz config", 5)
def test_c01_certified_pipeline():
    rep = rp.cmd_certify(load_config("lorenz"))
    tree = rep.tree
    assert rep.exit_code == 0
    d = tree["dissipativity"]
    assert d["q1"]["value"] == pytest.approx(1.7045, abs=1e-3)
    assert x1_quadratic_root() == pytest.approx(4.7645, abs=1e-3)
    assert _step(tree, "a")["value"]["value"] == pytest.approx(4.7645, abs=1e-3)
    assert Fraction(_step(tree, "R2")["exact"]["value"]) == Fraction(12544, 15)
    assert Fraction(_step(tree, "V")["exact"]["value"]) == 2197
    assert tree["bound_chain"]["frob_sup"]["value"] == pytest.approx(math.sqrt(208.12 + 2197), abs=1e-3)
    assert d["q_max"]["value"] >= 1.278


@criterion(2, "Lorenz origin spectrum", 1)
def test_c02_spectral():
    spec = lorenz()
    eqs = find_equilibria(spec, [(-20, 20), (-20, 20), (-5, 45)], 5)
    origin = next(e for e in eqs if np.allclose(e.location, 0))
    sd = eigen_data(spec, origin)
    got = sorted(z.real for z in sd.eigenvalues)
    assert np.allclose(got, [-22.8277, -8 / 3, 11.8277], atol=5e-3)
    assert np.allclose(got, oracles.lorenz_origin_eigenvalues(), atol=1e-12)
    assert sd.lorenz_like
    assert float(np.trace(eval_jacobian(spec, origin.location))) == pytest.approx(-41 / 3, abs=1e-9)
    assert sum(got) == pytest.approx(-41 / 3, abs=1e-9)


@criterion(3, "chain soundness on 1e5 orbit samples", 60)
def test_c03_chain_soundness():
    spec = lorenz()
    tree = rp.cmd_certify(load_config("lorenz")).tree
    R2 = _step(tree, "R2")["value"]["value"]
    V = _step(tree, "V")["value"]["value"]
    frob = tree["bound_chain"]["frob_sup"]["value"]
    assert R2 == pytest.approx(836.27, abs=5e-3)
    # 100 independent orbits, 1000 samples each after a transient of 50, as one batch
    starts = np.random.default_rng(3).uniform([-15, -15, 5], [15, 15, 40], (100, 3))
    x = cy.trajectory(spec, starts, 50 + 0.1 * np.arange(-500, 1000)).y[500:].reshape(-1, 3)
    assert x.shape == (100_000, 3)
    assert np.all(x[:, 1] ** 2 + (x[:, 2] - 28) ** 2 <= 836.27)
    assert np.all(2 * x[:, 0] ** 2 + x[:, 1] ** 2 + (x[:, 2] - 28) ** 2 <= V)
    J = np.zeros((len(x), 3, 3))
    J[:, 0] = [-10.0, 10.0, 0.0]
    J[:, 1, 0] = 28 - x[:, 2]
    J[:, 1, 1] = -1.0
    J[:, 1, 2] = -x[:, 0]
    J[:, 2, 0] = x[:, 1]
    J[:, 2, 1] = x[:, 0]
    J[:, 2, 2] = -8 / 3
    assert np.all(np.linalg.norm(J, 2, axis=(1, 2)) <= frob)


@criterion(4, "Lyapunov exponents: zero exponent, trace sum, linear diagonals", 120)
def test_c04_lyapunov():
    sp = cy.lyapunov_spectrum(lorenz(), [1.0, 1.0, 20.0], 1000.0)
    assert np.min(np.abs(sp.exponents)) <= 0.01
    assert sp.exponents.sum() == pytest.approx(-41 / 3, abs=0.05)
    for rates in ([-2.0, -1.0, 3.0], [-1.0, -1.0, -1.0]):
        field = parse_field("".join(f"dx{i + 1} = {r}*x{i + 1}\n" for i, r in enumerate(rates)))
        got = cy.lyapunov_spectrum(field, [0.0, 0.0, 0.0], 500.0, transient=0, tol=1e-12).exponents
        assert np.allclose(np.sort(got), np.sort(rates), atol=1e-9)


@criterion(5, "bunching exponent on 100 samples and subadditivity", 120)
def test_c05_bunching():
    spec = lorenz()
    samples = cy.attractor_samples(spec, 100, seed=0, equilibria=[(0.0, 0.0, 0.0)])
    cc = cy.sample_cocycle(spec, samples, 20.0)
    i, j = cc.i0, cc.index(20.0)
    assert np.all(cc.eta(i, j, 1.278) < 0)
    assert np.any(cc.eta(i, j, 3.0) >= 0)
    rng = np.random.default_rng(0)
    span = j - i
    for _ in range(1000):
        a, b = np.sort(rng.choice(np.arange(1, span + 1), 2, replace=False))
        lhs = cc.eta(i, i + b, 1.278)
        rhs = cc.eta(i, i + a, 1.278) + cc.eta(i + a, i + b, 1.278)
        assert np.all(lhs <= rhs + 1e-6)


@criterion(6, "E^s invariance, origin eigenvector, t_back self-consistency", 60)
def test_c06_splitting():
    spec = lorenz()
    samples = cy.attractor_samples(spec, 50, seed=6)
    cc = cy.sample_cocycle(spec, samples, 10.0)
    i = cc.i0
    # E^s at X_t x re-estimated from scratch, pulled back with the first run
    js = [cc.index(float(t)) for t in range(1, 11)]
    later = np.concatenate([cc.points(j) for j in js])
    fresh = cy.sample_cocycle(spec, cy.SampleSet(later, 0.0, ["point"] * len(later), 99), 0.0)
    Es_fresh = fresh.Es(0).reshape(len(js), cc.m, 3, 1)
    worst = 0.0
    for n, j in enumerate(js):
        V, _ = cc.pull(j, i, Es_fresh[n])
        for k in range(cc.m):
            worst = max(worst, oracles.subspace_angle(V[k], cc.Es(i)[k]))
    assert worst <= 1e-4
    Es0 = cy.estimate_Es(spec, [0.0, 0.0, 0.0], t_back=5.0)
    assert oracles.subspace_angle(Es0, oracles.lorenz_origin_strong_stable()[:, None]) <= 1e-6
    pts = cc.points(i)
    one = cy.sample_cocycle(spec, cy.SampleSet(pts, 0.0, ["point"] * len(pts), 1), 0.0, t_back=5.0)
    two = cy.sample_cocycle(spec, cy.SampleSet(pts, 0.0, ["point"] * len(pts), 2), 0.0, t_back=10.0)
    for k in range(len(pts)):
        assert oracles.subspace_angle(one.Es(0)[k], two.Es(0)[k]) <= 1e-6


def _saddle(fn, n):
    lin = np.broadcast_to(np.diag([1 / 3, 2.0]), (1, n, 2, 2)).copy()
    return fo.MapCharts(lambda P: np.stack(fn(P[..., 0], P[..., 1]), axis=-1), lin, 1)


@criterion(7, "graph transform against invariant-manifold oracles", 30)
def test_c07_hadamard_perron():
    u = np.linspace(-0.1, 0.1, 41)
    # the stated map keeps v = 0 invariant, so its oracle is phi = 0
    flat = fo.hadamard_perron(_saddle(lambda a, b: (a / 3 + b * b / 100, 2 * b), 40), None, 0.1, grid_N=201)
    assert np.abs(flat.patches[0][0](u[:, None])).max() <= 1e-8
    maps = _saddle(oracles.saddle_map, 40)
    res = fo.hadamard_perron(maps, fo.hp_from_linear(maps.linear, 1), 0.1, grid_N=201, fix_tol=1e-13)
    got = res.patches[0][0](u[:, None])[:, 0]
    series = oracles.saddle_series_eval(oracles.saddle_series(12), u)
    brute = np.array([oracles.saddle_bisection(x) for x in u])
    assert np.abs(got - series).max() <= 1e-8
    assert np.abs(got - brute).max() <= 1e-8
    L = np.diag([0.3, 2.0, 3.0])
    lin = np.broadcast_to(L, (1, 10, 3, 3)).copy()
    block = fo.hadamard_perron(fo.MapCharts(lambda P: P @ L.T, lin, 1), fo.hp_from_linear(lin, 1), 0.1, grid_N=33)
    assert block.sweeps == 1
    assert all(np.all(p.values == 0) for p in block.patches[0])


@criterion(8, "Lorenz leaves contract at 10 base points", 60)
def test_c08_leaf_contraction():
    spec = lorenz()
    pts = cy.attractor_samples(spec, 10, seed=21, history=0.0).pasts
    orbit = fo.build_charts(spec, pts, 0.5, 20, 0.2)
    hp = fo.hadamard_perron(orbit.maps, orbit.hp, 0.2, grid_N=65, order=3)
    for k in range(len(pts)):
        frame, patch = orbit.frames[k][0], hp.patches[k][0]
        rep = fo.leaf_contraction_test(spec, frame.base, (frame, patch))
        assert rep.passed and rep.fitted_rate < 1
        Es = cy.estimate_Es(spec, frame.base, t_back=10.0, seed=k)
        assert fo.tangency_angle(frame, patch, Es) <= 1e-3
        control = fo.leaf_contraction_test(spec, frame.base, (frame, patch), offset=0.002 * frame.Pcu[:, 0])
        assert not control.passed


@criterion(9, "linear graph transform identity and Lipschitz bound", 5)
def test_c09_linear_graph_transform():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        M = rng.standard_normal((3, 3))
        ell = rng.standard_normal((2, 1))
        new = fo.linear_graph_transform(M, ell)
        assert oracles.subspace_angle(M @ fo.graph_basis(ell), fo.graph_basis(new)) <= 1e-10
    for _ in range(50):
        lam, delta = rng.uniform(0.05, 0.6), rng.uniform(0.01, 0.1)
        A = np.array([[rng.uniform(1.0, 3.0)]])
        B = rng.standard_normal((1, 2))
        B *= 0.99 * delta / np.linalg.norm(B, 2)
        C = rng.standard_normal((2, 1))
        C *= rng.uniform(0, 1) / np.linalg.norm(C, 2)
        D = rng.standard_normal((2, 2))
        D *= min(1.0, lam * A[0, 0]) * rng.uniform(0.5, 1) / np.linalg.norm(D, 2)
        lip = fo.lipschitz_estimate((A, B, C, D), 1, n_probe=16)
        assert lip <= (lam + 2 * delta) * (1 - delta) ** -2


@criterion(10, "byte-identical canonical certify reports", 10)
def test_c10_determinism():
    a = rp.cmd_certify(load_config("lorenz")).to_json(canonical=True)
    b = rp.cmd_certify(load_config("lorenz")).to_json(canonical=True)
    assert a.encode() == b.encode()
