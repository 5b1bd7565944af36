"""Reference solutions of the undeformed top by a single quadrature.

With ``C1 = x1^2 - x2^2`` and ``C2 = x1^2 - x3^2`` fixed, the first
component obeys the scalar equation

    x1' = x2 x3 = s2 s3 sqrt((x1^2 - C1) (x1^2 - C2)),

so time is an explicit integral of ``1/sqrt(R(x1))``.  The admissible set
is ``x1^2 >= m = max(C1, C2)``.  When ``m > 0`` (and ``C1 != C2``) the
simple roots ``x1 = +-sqrt(m)`` are turning points: the coordinate whose
constant equals ``m`` passes through zero, changes sign, and x1 reverses.
Every orbit meets at most one turning point and then escapes to infinity
in finite time.

Near a turning point ``a`` the substitution ``x1 = a + d u^2`` removes the
inverse square-root singularity:

    dt = 2 du / sqrt(|Q(a + d u^2)|),    Q(x) = (x + a)(x^2 - C_other).

Far from the origin ``x1 = 1/w`` gives the smooth integrand
``1/sqrt((1 - C1 w^2)(1 - C2 w^2))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

__all__ = ["QuadratureReduction", "InadmissibleStateError", "BlowUpError", "reduce",
           "reference_solution"]

_QUAD = dict(epsabs=1e-15, epsrel=1e-13, limit=400)


class InadmissibleStateError(ValueError):
    pass


class BlowUpError(ArithmeticError):
    def __init__(self, message: str, t_blowup: float):
        self.t_blowup = t_blowup
        super().__init__(message)


def _sign(v: float) -> float:
    return 1.0 if v > 0 else -1.0 if v < 0 else 0.0


@dataclass(frozen=True)
class QuadratureReduction:
    """Invariant values, branch signs and turning points of one orbit."""

    C1: float
    C2: float
    x1_0: float
    s2: float  # sign of x2 on the initial leg
    s3: float
    turning_points: tuple[float, ...]
    stationary: bool = False
    x0: tuple[float, float, float] | None = None

    @property
    def direction(self) -> float:
        """Initial direction of motion of x1 (sign of x2 x3)."""
        return self.s2 * self.s3

    def radicand(self, x1: float) -> float:
        return (x1 * x1 - self.C1) * (x1 * x1 - self.C2)

    def r(self, x1: float) -> float:
        """Right-hand side of the scalar equation on the initial branch."""
        if x1 * x1 < self._m:
            raise InadmissibleStateError(f"x1={x1!r} lies outside the admissible set")
        rad = self.radicand(x1)
        return self.direction * math.sqrt(rad)

    # -- internal geometry -------------------------------------------------

    @property
    def _m(self) -> float:
        return max(self.C1, self.C2)

    @property
    def _simple_root(self) -> float | None:
        """Turning point on the side of x1_0, if one exists."""
        if self._m > 0 and self.C1 != self.C2:
            return math.copysign(math.sqrt(self._m), self.x1_0)
        return None


def reduce(x0: Sequence[float]) -> QuadratureReduction:
    """Invariants and branch data of the normalized top through `x0`."""
    x1, x2, x3 = (float(v) for v in x0)
    if not all(math.isfinite(v) for v in (x1, x2, x3)):
        raise InadmissibleStateError("state must be finite")
    C1 = x1 * x1 - x2 * x2
    C2 = x1 * x1 - x3 * x3
    stationary = (x2 * x3 == 0.0 and x1 * x3 == 0.0 and x1 * x2 == 0.0)
    s2, s3 = _sign(x2), _sign(x3)
    # starting on a turning point: the vanishing coordinate takes the sign
    # it is about to acquire
    if not stationary:
        if s2 == 0.0:
            s2 = _sign(x1 * x3)
        if s3 == 0.0:
            s3 = _sign(x1 * x2)
    m = max(C1, C2)
    tps = (-math.sqrt(m), math.sqrt(m)) if m > 0 else ()
    return QuadratureReduction(C1, C2, x1, s2, s3, tps, stationary, (x1, x2, x3))


def from_invariants(C1: float, C2: float, x1_0: float, s2: float = 1.0, s3: float = 1.0
                    ) -> QuadratureReduction:
    """Build a reduction from invariant values; checks admissibility."""
    if x1_0 * x1_0 < max(C1, C2):
        raise InadmissibleStateError(
            f"x1={x1_0!r} gives a negative radicand for C1={C1!r}, C2={C2!r}")
    x2 = s2 * math.sqrt(x1_0 * x1_0 - C1)
    x3 = s3 * math.sqrt(x1_0 * x1_0 - C2)
    return reduce((x1_0, x2, x3))


# ---------------------------------------------------------------------------
# time integrals


def _plain_time(red: QuadratureReduction, p: float, q: float) -> float:
    """Time to move x1 monotonically from p to q (no simple root strictly
    between them or at the endpoints); q may be +-inf."""
    if p == q:
        return 0.0
    lo, hi = (p, q) if p < q else (q, p)
    C1, C2 = red.C1, red.C2

    def inner(x):
        return 1.0 / math.sqrt(red.radicand(x))

    def outer(w):
        return 1.0 / math.sqrt((1.0 - C1 * w * w) * (1.0 - C2 * w * w))

    total = 0.0
    # split at -1 and 1; beyond them integrate in w = 1/x
    pieces = [(-math.inf, -1.0), (-1.0, 1.0), (1.0, math.inf)]
    with warnings.catch_warnings():
        # close to a double root the integrand grows like 1/|x - e| and quadpack
        # reports round-off before reaching epsrel; the attained accuracy is
        # far inside what callers need (checked against the integrator)
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in pieces:
            u, v = max(lo, a), min(hi, b)
            if u >= v:
                continue
            if a == -1.0:
                total += integrate.quad(inner, u, v, **_QUAD)[0]
            else:
                w1, w2 = sorted((0.0 if math.isinf(u) else 1.0 / u, 0.0 if math.isinf(v) else 1.0 / v))
                total += integrate.quad(outer, w1, w2, **_QUAD)[0]
    return total


class _RootChart:
    """Position ``x1 = a + d u^2`` around a simple turning point ``a``."""

    def __init__(self, red: QuadratureReduction):
        a = red._simple_root
        self.a = a
        self.d = 1.0 if a > 0 else -1.0
        self.C_other = min(red.C1, red.C2)
        # which coordinate vanishes at a: 2 if C1 is the larger constant
        self.vanishing = 2 if red.C1 > red.C2 else 3

    def x1(self, u: float) -> float:
        return self.a + self.d * u * u

    def u_of(self, x1: float) -> float:
        return math.sqrt(max(0.0, self.d * (x1 - self.a)))

    def _integrand(self, u: float) -> float:
        x = self.x1(u)
        return 2.0 / math.sqrt(abs((x + self.a) * (x * x - self.C_other)))

    def time(self, u: float) -> float:
        """Time between the turning point and ``u``."""
        if u == 0.0:
            return 0.0
        return integrate.quad(self._integrand, 0.0, u, **_QUAD)[0]

    def time_to_infinity(self) -> float:
        return integrate.quad(self._integrand, 0.0, math.inf, **_QUAD)[0]

    def solve(self, tau: float) -> float:
        """u with ``time(u) = tau``."""
        if tau <= 0.0:
            return 0.0
        hi = 1.0
        while self.time(hi) < tau:
            hi *= 2.0
            if hi > 1e150:
                raise ArithmeticError("cannot bracket the turning-point chart")
        return optimize.brentq(lambda u: self.time(u) - tau, 0.0, hi,
                               xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)


def _solve_plain(red: QuadratureReduction, direction: float, tau: float,
                 barrier: float | None) -> float:
    """x1 reached after time `tau` moving from x1_0 in `direction`, either
    towards infinity or towards a double-root `barrier` that is never
    reached in finite time."""
    p = red.x1_0
    if tau <= 0.0:
        return p

    def g(x):
        return _plain_time(red, p, x) - tau

    if barrier is None:
        step = max(1.0, abs(p))
        hi = p + direction * step
        while g(hi) < 0:
            step *= 2.0
            hi = p + direction * step
            if step > 1e150:
                raise ArithmeticError("cannot bracket the solution")
    else:
        gap = barrier - p
        k = 1
        hi = barrier - gap * 0.5
        while g(hi) < 0:
            k += 1
            hi = barrier - gap * 0.5 ** k
            if k > 1000 or hi == barrier:
                raise ArithmeticError("solution is closer to the double root than resolvable")
    return optimize.brentq(g, p, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)


def blowup_time(red: QuadratureReduction) -> float:
    """Finite escape time of x1 (inf for stationary or asymptotic orbits)."""
    if red.stationary:
        return math.inf
    sigma = red.direction
    a = red._simple_root
    if a is not None:
        chart = _RootChart(red)
        u0 = chart.u_of(red.x1_0)
        towards = sigma * chart.d < 0
        t_u0 = chart.time(u0)
        return (t_u0 if towards else -t_u0) + chart.time_to_infinity()
    barrier = _barrier(red)
    if barrier is not None:
        return math.inf
    return _plain_time(red, red.x1_0, sigma * math.inf)


def _barrier(red: QuadratureReduction) -> float | None:
    """Double root ahead of x1_0 in its direction of motion, if any."""
    m = red._m
    if m < 0:
        return None
    e = math.copysign(math.sqrt(m), red.x1_0) if m > 0 else 0.0
    if red.direction * (e - red.x1_0) > 0:
        return e
    return None


def _state(red: QuadratureReduction, t: float) -> np.ndarray:
    if red.stationary or t == 0.0:
        if red.x0 is not None:
            return np.array(red.x0)
        return np.array([red.x1_0, red.s2 * math.sqrt(max(0.0, red.x1_0**2 - red.C1)),
                         red.s3 * math.sqrt(max(0.0, red.x1_0**2 - red.C2))])
    sigma = red.direction
    s2, s3 = red.s2, red.s3
    a = red._simple_root
    if a is not None:
        chart = _RootChart(red)
        u0 = chart.u_of(red.x1_0)
        t_u0 = chart.time(u0)
        towards = sigma * chart.d < 0
        t_inf = chart.time_to_infinity()
        t_blow = (t_u0 if towards else -t_u0) + t_inf
        if t >= t_blow:
            raise BlowUpError(f"solution escapes to infinity at t={t_blow:.17g}", t_blow)
        if towards:
            tau = t_u0 - t
            if tau < 0:
                tau = -tau
                if chart.vanishing == 2:
                    s2 = -s2
                else:
                    s3 = -s3
        else:
            tau = t_u0 + t
        u = chart.solve(tau) if tau > 0 else 0.0
        x1 = chart.x1(u)
        vanish_abs = u * math.sqrt(abs(x1 + chart.a))
        if chart.vanishing == 2:
            x2 = s2 * vanish_abs
            x3 = s3 * math.sqrt(x1 * x1 - red.C2)
        else:
            x2 = s2 * math.sqrt(x1 * x1 - red.C1)
            x3 = s3 * vanish_abs
        return np.array([x1, x2, x3])
    barrier = _barrier(red)
    if barrier is None:
        t_blow = _plain_time(red, red.x1_0, sigma * math.inf)
        if t >= t_blow:
            raise BlowUpError(f"solution escapes to infinity at t={t_blow:.17g}", t_blow)
    x1 = _solve_plain(red, sigma, t, barrier)
    x2 = s2 * math.sqrt(max(0.0, x1 * x1 - red.C1))
    x3 = s3 * math.sqrt(max(0.0, x1 * x1 - red.C2))
    return np.array([x1, x2, x3])


def reference_solution(red: QuadratureReduction, t_grid: Sequence[float]) -> np.ndarray:
    """States of the normalized top at the times in `t_grid`.

    Negative times use the symmetry ``x(-t) = -y(t)``, where ``y`` starts
    at ``-x0``.  Raises `BlowUpError` if a requested time lies beyond the
    escape time.
    """
    out = []
    mirror = None
    for t in np.asarray(t_grid, dtype=float).ravel():
        if t >= 0:
            out.append(_state(red, float(t)))
        else:
            if mirror is None:
                mirror = reduce(-_state(red, 0.0))
            out.append(-_state(mirror, float(-t)))
    return np.array(out).reshape(-1, 3)
