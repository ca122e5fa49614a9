"""q-strong dissipativity: both clauses, and the largest certified q."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .region_bounds import BoundCertificate
from .spectral import SpectralData, cond_a_margin, equilibrium_q_bound


class NoCertifiableQ(RuntimeError):
    def __init__(self, message: str, binding: str):
        super().__init__(message)
        self.binding = binding


@dataclass
class DissipativityCertificate:
    q_tested: float
    d_s: int
    cond_a: list[float]
    cond_b: float
    holds: bool
    cond_a_vacuous: bool
    inputs: list[SpectralData] = field(default_factory=list, repr=False)
    bound: BoundCertificate | None = field(default=None, repr=False)


@dataclass
class QMaxResult:
    q_max: float  # truncated to the requested precision
    q_raw: float  # bisection lower end before truncation
    binding: str  # "cond_a", "cond_b" or "ceiling"
    closed_form: float | None
    q1: float
    q2: float
    q_tol: float
    ceiling: float
    certificate: DissipativityCertificate


def cond_b_margin(bound: BoundCertificate, d_s: int, q: float) -> float:
    return bound.div_sup + (d_s * q - 1) * bound.frob_sup


def check_q(d_s: int, equilibria_in: list[SpectralData], bound: BoundCertificate, q: float) -> DissipativityCertificate:
    """Evaluate both clauses at ``q`` (strict inequalities)."""
    if q < 1 / d_s:
        raise ValueError(f"q must be at least 1/d_s = {1 / d_s}, got {q}")
    margins = [cond_a_margin(sd, d_s, q) for sd in equilibria_in]
    mb = cond_b_margin(bound, d_s, q)
    holds = all(m < 0 for m in margins) and mb < 0
    return DissipativityCertificate(q, d_s, margins, mb, holds, not equilibria_in, list(equilibria_in), bound)


def _truncate(q: float, q_tol: float) -> float:
    digits = max(0, math.ceil(-math.log10(q_tol) - 1e-12))
    scale = 10**digits
    return math.floor(q * scale) / scale


def closed_form_q(d_s: int, equilibria_in, bound: BoundCertificate) -> tuple[float, float]:
    """``(q1, q2)``: equilibrium bound and divergence/Frobenius bound."""
    q1 = min((equilibrium_q_bound(sd, d_s) for sd in equilibria_in), default=math.inf)
    if bound.frob_sup > 0:
        q2 = (1 - bound.div_sup / bound.frob_sup) / d_s
    else:
        q2 = math.inf if bound.div_sup < 0 else -math.inf
    return q1, q2


def max_certified_q(
    d_s: int,
    equilibria_in: list[SpectralData],
    bound: BoundCertificate,
    q_tol: float = 1e-4,
    ceiling: float = 2.0,
) -> QMaxResult:
    """Bisection for the largest q in ``(1/d_s, ceiling]`` passing ``check_q``."""
    if q_tol <= 0:
        raise ValueError("q_tol must be positive")
    lo_end = 1 / d_s
    if ceiling <= lo_end:
        raise ValueError(f"ceiling {ceiling} must exceed 1/d_s = {lo_end}")
    q1, q2 = closed_form_q(d_s, equilibria_in, bound)
    closed = min(q1, q2, ceiling)

    def holds(q):
        return check_q(d_s, equilibria_in, bound, q).holds

    if holds(ceiling):
        cert = check_q(d_s, equilibria_in, bound, ceiling)
        return QMaxResult(ceiling, ceiling, "ceiling", closed, q1, q2, q_tol, ceiling, cert)
    probe = lo_end + min(q_tol, ceiling - lo_end) * 1e-3
    if not holds(probe):
        cert = check_q(d_s, equilibria_in, bound, probe)
        binding = "cond_b" if cert.cond_b >= 0 else "cond_a"
        raise NoCertifiableQ(
            f"no q in (1/d_s, {ceiling}] certifies; {binding} fails already at q = {probe:.6g}",
            binding,
        )
    lo, hi = probe, ceiling
    while hi - lo > q_tol * 1e-3:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    q_max = _truncate(lo, q_tol)
    if q_max <= lo_end:
        q_max = lo
    cert = check_q(d_s, equilibria_in, bound, q_max)
    fail = check_q(d_s, equilibria_in, bound, hi)
    binding = "cond_b" if fail.cond_b >= 0 else "cond_a"
    return QMaxResult(q_max, lo, binding, closed, q1, q2, q_tol, ceiling, cert)
