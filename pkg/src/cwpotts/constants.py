"""Phase-diagram constants: critical and spinodal temperatures, drift landscape,
mixing-time constants, near-critical regimes and passage-time schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import integrate

from .model import InvalidInput, OutOfDomain, worst_case_drift

ROOT_TOL = 1e-12


class InsufficientData(ValueError):
    pass


class SingularIntegrand(ValueError):
    pass


def _bisect(f, lo: float, hi: float, tol: float = ROOT_TOL, max_iter: int = 200) -> float:
    """Plain bisection; ``f(lo)`` and ``f(hi)`` must have opposite signs (or be zero)."""
    flo = f(lo)
    if flo == 0:
        return lo
    fhi = f(hi)
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            break
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_c(q: int) -> float:
    """Critical inverse temperature of the mean-field Potts model."""
    if int(q) != q or q < 2:
        raise InvalidInput(f"q must be an integer >= 2, got {q!r}")
    if q == 2:
        return 1.0
    return (q - 1) * math.log(q - 1) / (q - 2)


def _D(x, beta, q):
    return worst_case_drift(x, beta, q)[0]


def _stationary_points(beta: float, q: int) -> list[float]:
    """Zeros of dD/dx inside [1/q, 1], increasing.

    Writing ``y = (q-1) exp(2 beta (1 - q x)/(q-1))`` the derivative vanishes iff
    ``y**2 + 2 (1 - c) y + 1 = 0`` with ``c = q beta/(q-1)``.
    """
    c = q * beta / (q - 1)
    disc = (c - 1.0) ** 2 - 1.0
    if c <= 0 or disc < 0:
        return []
    r = math.sqrt(disc)
    pts = []
    for y in ((c - 1.0) - r, (c - 1.0) + r):
        if y <= 0:
            continue
        x = (1.0 - (q - 1) * math.log(y / (q - 1)) / (2.0 * beta)) / q
        if 1.0 / q <= x <= 1.0:
            pts.append(x)
    return sorted(set(pts))


def _drift_roots(beta: float, q: int, tol: float = 1e-12) -> list[float]:
    """Roots of D in (1/q, 1] for any beta >= 0.

    D is monotone between consecutive stationary points, so each such piece
    holds at most one root.  The first piece starts at the trivial root 1/q and
    is skipped (for beta > q/2 D rises there up to a local maximum, and the
    root beyond it lies in the next piece).  A stationary point where |D| <= tol counts as a double root.
    """
    if beta <= 0:
        return []
    sp = _stationary_points(beta, q)
    breaks = [1.0 / q] + sp + [1.0]
    roots = []
    for x in sp:
        if abs(_D(x, beta, q)) <= tol:
            roots.append(x)
    f = lambda x: _D(x, beta, q)
    for lo, hi in zip(breaks[1:-1], breaks[2:]):
        flo, fhi = f(lo), f(hi)
        if abs(flo) <= tol or abs(fhi) <= tol:
            continue
        if (flo > 0) != (fhi > 0):
            roots.append(_bisect(f, lo, hi))
    return sorted(set(roots))


def _check_subcritical_slope(beta: float, q: int):
    if not (0 < beta < q / 2):
        raise OutOfDomain(f"need 0 < beta < q/2 = {q / 2}, got beta={beta}")


def max_drift(beta: float, q: int) -> tuple[float, float]:
    """Maximum of D over (1/q, 1] and where it is attained.

    When D has no interior local maximum the value at 1 is returned with
    location 1 (D is then negative throughout).
    """
    _check_subcritical_slope(beta, q)
    sp = _stationary_points(beta, q)
    if sp:
        s_star = sp[-1]
        d_star = _D(s_star, beta, q)
        d_one = _D(1.0, beta, q)
        if d_star >= d_one:
            return d_star, s_star
        return d_one, 1.0
    return _D(1.0, beta, q), 1.0


def _tangency_residual_beta(q: int):
    """Independent route to the spinodal: solve D = D' = 0 jointly.

    Eliminating beta gives ``beta = (q-1)/(2 q s (1-s))`` and a scalar equation
    in s.  Returns (beta, s).
    """
    def h(s):
        return math.log((1 - s) / ((q - 1) * s)) + (s - 1.0 / q) / (s * (1 - s))

    # h -> 0 at 1/q; the non-trivial root sits in (1/q, 1).  Locate a sign change.
    grid = np.linspace(1.0 / q + 1e-6, 1 - 1e-9, 20001)
    vals = np.array([h(s) for s in grid])
    idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if idx.size == 0:
        raise RuntimeError("tangency equation has no root")
    i = idx[-1]
    s = _bisect(h, grid[i], grid[i + 1])
    return (q - 1) / (2 * q * s * (1 - s)), s


def beta_s(q: int) -> float:
    """Spinodal inverse temperature: sup of beta with D < 0 on (1/q, 1].

    Found by bisection on beta of the sign of the maximal drift, bracketed by
    (0, beta_c).  For q = 2 both temperatures coincide and 1 is returned.
    """
    if int(q) != q or q < 2:
        raise InvalidInput(f"q must be an integer >= 2, got {q!r}")
    if q == 2:
        return 1.0
    return _bisect(lambda b: max_drift(b, q)[0], 1e-9, beta_c(q), tol=ROOT_TOL)


def critical_points(beta: float, q: int):
    """Return ``(s_star, s_sharp, roots)`` of the drift landscape at ``beta``.

    s_star: largest stationary point of D in [1/q, 1] (1 if none);
    s_sharp: smallest x in (1/q, 1) with D(x) >= 0 (1 if none);
    roots: all zeros of D in (1/q, 1].
    """
    _check_subcritical_slope(beta, q)
    sp = _stationary_points(beta, q)
    s_star = sp[-1] if sp else 1.0
    roots = _drift_roots(beta, q)
    s_sharp = roots[0] if roots else 1.0
    return s_star, s_sharp, roots


def ordered_phase_vector(beta: float, q: int) -> np.ndarray:
    """Ordered-phase proportions: largest drift root in the first coordinate,
    the remainder spread evenly."""
    roots = _drift_roots(beta, q)
    if not roots:
        raise OutOfDomain(f"no ordered phase at beta={beta} (below the spinodal)")
    x = roots[-1]
    v = np.full(q, (1.0 - x) / (q - 1))
    v[0] = x
    return v


def alpha1(beta: float, q: int) -> float:
    """Cutoff constant of the high-temperature phase, 1/(2(1 - 2 beta/q))."""
    if beta >= q / 2:
        raise OutOfDomain(f"alpha1 diverges for beta >= q/2 = {q / 2}")
    return 1.0 / (2.0 * (1.0 - 2.0 * beta / q))


def _richardson_central(f, x0: float, h: float, order: int = 1) -> float:
    """Central difference for the first or third derivative, one Richardson step."""
    if order == 1:
        def cd(step):
            return (f(x0 + step) - f(x0 - step)) / (2 * step)
    elif order == 3:
        def cd(step):
            return (f(x0 + 2 * step) - 2 * f(x0 + step) + 2 * f(x0 - step) - f(x0 - 2 * step)) / (2 * step**3)
    else:
        raise ValueError(order)
    return (4 * cd(h / 2) - cd(h)) / 3


@dataclass(frozen=True)
class TangencyExpansion:
    beta_s: float
    s_star: float
    alpha: float
    a: float
    b: float
    alpha2: float


def tangency_expansion(q: int) -> TangencyExpansion:
    """Taylor data of the drift at the spinodal tangency point.

    With ``Z = s* - S^1`` and beta slightly below the spinodal by ``xi``,
    ``-D(s* - Z) ~ alpha xi + a Z^2 + b Z^3``.  Hence ``a = -D''/2`` and
    ``b = D'''/6`` (the sign flips twice: once from -D and once from (-Z)^3).
    """
    if q < 3:
        raise InvalidInput("tangency expansion needs q >= 3")
    bs = beta_s(q)
    s_star = max_drift(bs, q)[1]
    alpha = _richardson_central(lambda b: _D(s_star, b, q), bs, 1e-4, order=1)
    a = -0.5 * worst_case_drift(s_star, bs, q)[2]
    d3 = _richardson_central(lambda x: worst_case_drift(x, bs, q)[0], s_star, 1e-3, order=3)
    b = d3 / 6.0
    return TangencyExpansion(bs, s_star, alpha, a, b, math.pi / math.sqrt(alpha * a))


def passage_schedule(xi: float, a: float, gamma: float, n: int, regime: str) -> float:
    """Time scale for the walk to pass the tangency region."""
    if a <= 0:
        raise InvalidInput("a must be positive")
    if n < 1:
        raise InvalidInput("n must be >= 1")
    if regime == "NCR":
        return math.exp(gamma) * n ** (4.0 / 3.0)
    if regime != "CR":
        raise InvalidInput(f"unknown regime {regime!r}")
    ax = abs(xi)
    lead = (math.pi / math.sqrt(a)) * n / math.sqrt(ax)
    return lead + gamma * max(math.sqrt(n) / ax**1.25, float(n))


def regime_classify(xi_values: Mapping[int, float], threshold: float = 10.0,
                    min_growth: float = 0.05) -> str:
    """Label a sequence xi(n) as the cutoff regime 'CR' or the non-cutoff 'NCR'.

    Looks at ``v(n) = n^(2/3) xi(n)``.  'CR' when v is strictly increasing and
    either ends above ``threshold`` or grows at log-log rate >= ``min_growth``;
    otherwise 'NCR'.
    """
    if len(xi_values) < 3:
        raise InsufficientData("need at least three values of n")
    ns = np.array(sorted(xi_values), dtype=float)
    v = np.array([n ** (2 / 3) * abs(xi_values[int(n)]) for n in ns])
    increasing = bool(np.all(np.diff(v) > 0))
    if not increasing:
        return "NCR"
    if v[-1] > threshold:
        return "CR"
    slope = np.polyfit(np.log(ns), np.log(v), 1)[0]
    return "CR" if slope >= min_growth else "NCR"


def _poly_min_on(zeta, a, b, c, lo, hi):
    cands = [x for x in (lo, hi) if math.isfinite(x)]
    # p'(x) = x (2a + 3b x + 4c x^2)
    cands.append(0.0)
    for r in np.roots([4 * c, 3 * b, 2 * a]) if (b or c) else []:
        if abs(r.imag) < 1e-14:
            cands.append(float(r.real))
    cands = [x for x in cands if lo <= x <= hi]
    return min(zeta + a * x**2 + b * x**3 + c * x**4 for x in cands)


def psi_passage_time(zeta: float, a: float, b: float, c: float, n: int,
                     z_lo: float, z_hi: float) -> float:
    """Integral of ``n / (zeta + a x^2 + b x^3 + c x^4)`` over [z_lo, z_hi].

    Infinite limits are allowed when the polynomial stays positive at infinity.
    """
    if zeta <= 0 or a <= 0:
        raise InvalidInput("need zeta > 0 and a > 0")
    if z_lo > z_hi:
        raise InvalidInput("z_lo > z_hi")
    infinite = not (math.isfinite(z_lo) and math.isfinite(z_hi))
    if infinite and (c < 0 or (c == 0 and b != 0)):
        raise SingularIntegrand("polynomial turns negative at infinity")
    if _poly_min_on(zeta, a, b, c, z_lo, z_hi) <= 0:
        raise SingularIntegrand("drift polynomial vanishes inside the range")
    f = lambda x: n / (zeta + a * x * x + b * x**3 + c * x**4)
    # split at 0 where the integrand peaks so quad sees the narrow bump
    pieces = []
    if z_lo < 0 < z_hi:
        pieces = [(z_lo, 0.0), (0.0, z_hi)]
    else:
        pieces = [(z_lo, z_hi)]
    total = 0.0
    for lo, hi in pieces:
        val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-10, limit=500)
        total += val
    return total
