import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foliacert.dissipativity import NoCertifiableQ, check_q, closed_form_q, max_certified_q
from foliacert.field_spec import lorenz, parse_field
from foliacert.region_bounds import BoundCertificate, RegionBound, generic_certificate, lorenz_chain
from foliacert.spectral import SpectralData, eigen_data, find_equilibria

from . import oracles


@pytest.fixture(scope="module")
def lorenz_inputs():
    spec = lorenz()
    eqs = find_equilibria(spec, [(-20, 20)] * 3)
    origin = [eigen_data(spec, e) for e in eqs if max(map(abs, e.location)) < 1e-9]
    return origin, lorenz_chain(10, Fraction(8, 3), 28)


def _bound(div, frob):
    return BoundCertificate(div, frob, RegionBound("test", {}))


def test_check_q_examples(lorenz_inputs):
    eqs, bound = lorenz_inputs
    l1, l2, l3 = oracles.lorenz_origin_eigenvalues()
    c = check_q(1, eqs, bound, 1.278)
    assert c.holds
    assert c.cond_a[0] == pytest.approx(l1 - l2 + 1.278 * l3, rel=1e-12)
    c = check_q(1, eqs, bound, 1.30)
    assert not c.holds
    assert c.cond_b == pytest.approx(-41 / 3 + 0.30 * 49.042, abs=1e-3)
    c = check_q(1, eqs, bound, 1.0)
    assert c.holds and c.cond_b == pytest.approx(-41 / 3, abs=1e-14)
    with pytest.raises(ValueError):
        check_q(1, eqs, bound, 1.0 - 1e-9)


def test_max_q_lorenz(lorenz_inputs):
    eqs, bound = lorenz_inputs
    res = max_certified_q(1, eqs, bound, 1e-4)
    assert res.q_max >= 1.278
    assert res.binding == "cond_b"
    assert res.q1 == pytest.approx(1.70456, abs=1e-5)
    assert res.q2 == pytest.approx(1 + (41 / 3) / math.sqrt(2405.12), rel=1e-12)
    assert res.q_max <= res.q2 < res.q_max + 1e-4
    assert res.certificate.holds


def test_cond_a_alone(lorenz_inputs):
    eqs, _ = lorenz_inputs
    res = max_certified_q(1, eqs, _bound(-1.0, 0.0), 1e-4)
    assert res.q_max == pytest.approx(1.7045, abs=1e-4)
    assert res.binding == "cond_a"


def test_sink_reaches_ceiling():
    spec = parse_field("dx1 = -x1\ndx2 = -x2\ndx3 = -x3\n")
    bound = generic_certificate(spec, [(-1, 1)] * 3, 5)
    assert bound.div_sup == -3 and bound.frob_sup == pytest.approx(math.sqrt(3))
    sd = SpectralData((-1 + 0j, -1 + 0j, -1 + 0j), True, False)
    res = max_certified_q(1, [sd], bound, 1e-4, ceiling=2.0)
    assert res.q_max == 2.0 and res.binding == "ceiling"


def test_no_certifiable_q():
    with pytest.raises(NoCertifiableQ) as err:
        max_certified_q(1, [], _bound(2.0, 5.0))
    assert err.value.binding == "cond_b"


def test_vacuous_cond_a():
    res = max_certified_q(1, [], _bound(-1.0, 1.0), 1e-6)
    assert res.certificate.cond_a_vacuous
    assert res.q_max == pytest.approx(2.0, abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(
    st.floats(-20, -0.1), st.floats(0.1, 50),
    st.lists(st.floats(-30, -0.1), min_size=2, max_size=2), st.floats(0.1, 20),
)
def test_bisection_matches_closed_form(div, frob, neg, top):
    l1, l2 = sorted(neg)
    sd = SpectralData((complex(l1), complex(l2), complex(top)), True, False)
    bound = _bound(div, frob)
    q1, q2 = closed_form_q(1, [sd], bound)
    closed = min(q1, q2, 2.0)
    if closed <= 1.0 + 1e-6:
        return
    res = max_certified_q(1, [sd], bound, 1e-4, ceiling=2.0)
    assert res.q_max <= closed + 1e-12
    assert closed - res.q_max <= 1e-4 + 1e-9
