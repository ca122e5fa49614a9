import math
import warnings

import numpy as np
import pytest

from foliacert.field_spec import lorenz, parse_field
from foliacert.spectral import (
    IN,
    OUT,
    Equilibrium,
    SpectralData,
    UndefinedQBound,
    classify_membership,
    eigen_data,
    equilibrium_q_bound,
    find_equilibria,
    is_lorenz_like,
)

from . import oracles

BOX = [(-20, 20)] * 3


def _origin(eqs):
    return next(e for e in eqs if np.allclose(e.location, 0))


def test_lorenz_equilibria():
    eqs = find_equilibria(lorenz(), BOX, 5)
    assert len(eqs) == 3
    locs = sorted(e.location for e in eqs)
    s = oracles.SQRT72
    assert np.allclose(locs[0], (-s, -s, 27), atol=1e-10)
    assert np.allclose(locs[1], (0, 0, 0), atol=1e-12)
    assert np.allclose(_origin(eqs).location, 0)
    assert np.allclose(locs[2], (s, s, 27), atol=1e-10)
    assert all(e.residual <= 1e-10 for e in eqs)


def test_linear_and_empty():
    eqs = find_equilibria(parse_field("dx1 = -x1\ndx2 = -x2\ndx3 = -x3\n"), [(-1, 1)] * 3, 3)
    assert len(eqs) == 1 and eqs[0].location == (0.0, 0.0, 0.0)
    with pytest.warns(RuntimeWarning):
        assert find_equilibria(parse_field("dx1 = 1\ndx2 = x2\ndx3 = x3\n"), [(-1, 1)] * 3, 3) == []
    with pytest.raises(ValueError):
        find_equilibria(lorenz(), [(1, 0)] * 3)


def test_lorenz_origin_spectrum():
    spec = lorenz()
    sd = eigen_data(spec, _origin(find_equilibria(spec, BOX)))
    ref = oracles.lorenz_origin_eigenvalues()
    assert np.allclose(sd.real_parts, ref, atol=1e-12)
    assert all(z.imag == 0 for z in sd.eigenvalues)
    assert sd.lorenz_like and sd.hyperbolic
    assert sum(sd.eigenvalues).real == pytest.approx(-41 / 3, abs=1e-9)
    assert equilibrium_q_bound(sd, 1) == pytest.approx((ref[1] - ref[0]) / ref[2], rel=1e-12)
    assert equilibrium_q_bound(sd, 1) == pytest.approx(1.70456, abs=1e-5)


def test_nontrivial_equilibria_are_complex_saddles():
    spec = lorenz()
    for eq in find_equilibria(spec, BOX):
        sd = eigen_data(spec, eq)
        assert list(sd.real_parts) == sorted(sd.real_parts)
        assert sum(sd.eigenvalues).real == pytest.approx(-41 / 3, rel=1e-9)
        if not np.allclose(eq.location, 0):
            assert not sd.lorenz_like
            assert any(z.imag != 0 for z in sd.eigenvalues)


def test_sink_spectrum():
    spec = parse_field("dx1 = -x1\ndx2 = -x2\ndx3 = -x3\n")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sd = eigen_data(spec, Equilibrium((0.0, 0.0, 0.0), 0.0))
    assert np.array_equal(sd.real_parts, [-1, -1, -1])
    assert equilibrium_q_bound(sd, 1) == math.inf


def test_q_bound_examples():
    sd = SpectralData((-2 + 0j, -1 + 0j, 1 + 0j), True, False)
    assert equilibrium_q_bound(sd, 1) == 1
    flat = SpectralData((0j, 0j, 0j), False, False)
    with pytest.raises(UndefinedQBound):
        equilibrium_q_bound(flat, 1)
    with pytest.raises(ValueError):
        equilibrium_q_bound(sd, 3)


def test_lorenz_like_definition():
    assert is_lorenz_like([-22.8 + 0j, -8 / 3 + 0j, 11.8 + 0j])
    assert not is_lorenz_like([-22.8 + 0j, -12 + 0j, 11.8 + 0j])  # -l2 > l3
    assert not is_lorenz_like([-2 + 0j, -1 + 1j, -1 - 1j])
    assert not is_lorenz_like([-1 + 0j, 1 + 0j])


def test_residual_guard():
    with pytest.raises(ValueError):
        eigen_data(lorenz(), Equilibrium((1.0, 1.0, 1.0), 26.0))


def test_membership_heuristic():
    sink = parse_field("dx1 = -x1\ndx2 = -x2\ndx3 = -x3\n")
    assert classify_membership(sink, Equilibrium((0.0, 0.0, 0.0), 0.0), horizon=20) == IN
    src = parse_field("dx1 = x1\ndx2 = x2\ndx3 = x3\n")
    assert classify_membership(src, Equilibrium((0.0, 0.0, 0.0), 0.0), horizon=20) == OUT
