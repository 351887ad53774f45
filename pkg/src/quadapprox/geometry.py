"""The ``(t, s)`` chart on ``X``: flow, horospherical group, regions and volumes.

Coordinates are taken with respect to a hyperbolic basis ``f_1, ..., f_{d+1}``
in which ``Q = 2 x_1 x_{d+1} + x_2^2 + ... + x_p^2 - ... - x_d^2``.  A point is
written ``x = a_t u(s) w_0`` with ``w_0 = f_1 + (m/2) f_{d+1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np
from scipy import integrate, optimize

from .approx import GUARD_BAND, HP_BITS, Constant, LogPower, PowerLaw, PsiSpec, Tabulated
from .forms import HyperbolicBasis, as_fraction

MAX_ABS_T = 500.0


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in ``R^n`` (``n = 0`` gives 1)."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def middle_signs(d: int, p: int) -> np.ndarray:
    """Signs of the middle block: ``p - 1`` plus ones, then ``d - p`` minus ones."""
    if not 1 <= p <= d:
        raise ValueError(f"need 1 <= p <= d, got p={p}, d={d}")
    return np.array([1.0] * (p - 1) + [-1.0] * (d - p))


def normal_gram(d: int, p: int) -> np.ndarray:
    g = np.zeros((d + 1, d + 1))
    g[0, d] = g[d, 0] = 1.0
    g[1:d, 1:d] = np.diag(middle_signs(d, p))
    return g


def _check_t(t: float) -> None:
    if abs(t) > MAX_ABS_T:
        raise OverflowError(f"|t| = {abs(t)} exceeds {MAX_ABS_T}; work in log space")


# --------------------------------------------------------------------------
# group elements in f-coordinates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowElement:
    t: float
    dim: int

    @property
    def matrix(self) -> np.ndarray:
        _check_t(self.t)
        a = np.eye(self.dim)
        a[0, 0] = math.exp(self.t)
        a[-1, -1] = math.exp(-self.t)
        return a

    def __mul__(self, other: "FlowElement") -> "FlowElement":
        return FlowElement(self.t + other.t, self.dim)


def flow(t: float, dim: int) -> np.ndarray:
    return FlowElement(t, dim).matrix


@dataclass(frozen=True)
class HorosphericalElement:
    s: tuple[float, ...]
    p: int

    @property
    def d(self) -> int:
        return len(self.s) + 1

    @property
    def matrix(self) -> np.ndarray:
        return horospherical(np.asarray(self.s, dtype=float), self.p)

    def __mul__(self, other: "HorosphericalElement") -> "HorosphericalElement":
        return HorosphericalElement(tuple(a + b for a, b in zip(self.s, other.s)), self.p)


def horospherical(s: np.ndarray, p: int) -> np.ndarray:
    """The lower unipotent ``u(s)``; first column ``(1, s, (-|s_1|^2 + |s_2|^2)/2)``."""
    s = np.asarray(s, dtype=float)
    d = len(s) + 1
    eta = middle_signs(d, p)
    u = np.eye(d + 1)
    u[1:d, 0] = s
    u[d, 0] = -0.5 * float(np.sum(eta * s * s))
    u[d, 1:d] = -eta * s
    return u


def horospherical_log(s: np.ndarray, p: int) -> np.ndarray:
    """Lie algebra element ``N(s)`` with ``u(s) = exp(N(s)) = I + N + N^2/2``."""
    s = np.asarray(s, dtype=float)
    d = len(s) + 1
    eta = middle_signs(d, p)
    n = np.zeros((d + 1, d + 1))
    n[1:d, 0] = s
    n[d, 1:d] = -eta * s
    return n


# --------------------------------------------------------------------------
# chart
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TSCoordinates:
    t: float
    s: tuple[float, ...]
    m: float


def _split_norms(s: np.ndarray, p: int):
    s = np.asarray(s, dtype=float)
    a = float(np.sum(s[..., : p - 1] ** 2, axis=-1)) if s.ndim == 1 else np.sum(s[..., : p - 1] ** 2, axis=-1)
    b = float(np.sum(s[..., p - 1:] ** 2, axis=-1)) if s.ndim == 1 else np.sum(s[..., p - 1:] ** 2, axis=-1)
    return a, b


def chart_coefficients(t: float, s: Sequence[float], m: float, p: int) -> np.ndarray:
    """Coefficients of ``a_t u(s) w_0`` in the hyperbolic basis."""
    _check_t(t)
    s = np.asarray(s, dtype=float)
    a, b = _split_norms(s, p)
    return np.concatenate([[math.exp(t)], s, [math.exp(-t) * (m - a + b) / 2]])


def parametrize(t: float, s: Sequence[float], basis: HyperbolicBasis, m) -> np.ndarray:
    """Standard coordinates of ``a_t u(s) w_0``."""
    return basis.as_array() @ chart_coefficients(t, s, float(as_fraction(m)), basis.p)


def parametrize_exact(et: Fraction, s: Sequence, basis: HyperbolicBasis, m) -> tuple[Fraction, ...]:
    """Exact version with ``e^t`` replaced by the positive rational ``et``."""
    et = as_fraction(et)
    if et <= 0:
        raise ValueError("e^t must be positive")
    s = [as_fraction(a) for a in s]
    p = basis.p
    a = sum(x * x for x in s[: p - 1])
    b = sum(x * x for x in s[p - 1:])
    coeffs = [et, *s, (as_fraction(m) - a + b) / (2 * et)]
    return basis.to_standard(coeffs)


def invert_parametrization(x: Sequence[float], basis: HyperbolicBasis, m,
                           rtol: float = 1e-9) -> TSCoordinates:
    """``(t, s)`` with ``a_t u(s) w_0 = x``; requires a positive ``f_1`` coefficient."""
    x = np.asarray([float(a) for a in x])
    c = basis.inverse_array() @ x
    mf = float(as_fraction(m))
    d = basis.dim - 1
    eta = middle_signs(d, basis.p)
    qx = 2 * c[0] * c[-1] + float(np.sum(eta * c[1:d] ** 2))
    if abs(qx - mf) > rtol * max(1.0, float(x @ x)):
        raise ValueError(f"point is not on the level set: Q(x) = {qx}, m = {mf}")
    if c[0] <= 0:
        raise ValueError("f_1 coefficient must be positive for the chart")
    return TSCoordinates(math.log(c[0]), tuple(float(a) for a in c[1:d]), mf)


# --------------------------------------------------------------------------
# regions U_t(psi)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoordinateRegion:
    """``{s : |m - |s_1|^2 + |s_2|^2| / 2 <= e^{2t} psi(e^t),  |s| <= e^t psi(e^t)}``."""

    t: float
    psi: PsiSpec
    d: int
    p: int
    m: float

    @property
    def log_radius(self) -> float:
        return self.t + self.psi.log_psi(self.t)

    @property
    def radius(self) -> float:
        return math.exp(self.log_radius)

    @property
    def level(self) -> float:
        return math.exp(2 * self.t + self.psi.log_psi(self.t))

    @property
    def exceptional(self) -> bool:
        """Whether ``t`` lies in the exceptional set ``e^{2t} psi(e^t) <= |m|``."""
        return 2 * self.t + self.psi.log_psi(self.t) <= math.log(abs(self.m))

    @property
    def ball_formula_valid(self) -> bool:
        return (not self.exceptional) and self.psi.log_psi(self.t) <= 0


def region_mask(region: CoordinateRegion, S: np.ndarray) -> np.ndarray:
    """Vectorised membership for rows of ``S`` with guard-band re-decision."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != region.d - 1:
        raise ValueError(f"s must have length {region.d - 1}")
    a, b = _split_norms(S, region.p)
    lev, rad = region.level, region.radius
    m1 = 2 * lev - np.abs(region.m - a + b)
    m2 = rad - np.sqrt(a + b)
    inside = (m1 >= 0) & (m2 >= 0)
    close = (np.abs(m1) <= GUARD_BAND * max(lev, 1.0)) | (np.abs(m2) <= GUARD_BAND * max(rad, 1.0))
    for i in np.flatnonzero(close):
        inside[i] = _region_member_hp(region, S[i])
    return inside


def _region_member_hp(region: CoordinateRegion, s: np.ndarray) -> bool:
    with mpmath.workprec(HP_BITS):
        et = mpmath.exp(mpmath.mpf(region.t))
        ps = region.psi.mp(et)
        sv = [mpmath.mpf(float(a)) for a in s]
        a = mpmath.fsum(x * x for x in sv[: region.p - 1])
        b = mpmath.fsum(x * x for x in sv[region.p - 1:])
        ok1 = abs(mpmath.mpf(region.m) - a + b) / 2 <= et * et * ps
        ok2 = mpmath.sqrt(a + b) <= et * ps
        return bool(ok1 and ok2)


def region_member(region: CoordinateRegion, s: Sequence[float]) -> bool:
    return bool(region_mask(region, np.asarray(s, dtype=float)[None, :])[0])


def region_volume_exact(region: CoordinateRegion) -> float:
    """``omega_{d-1} (e^t psi(e^t))^{d-1}``, valid off the exceptional set with ``psi(e^t) <= 1``."""
    if not region.ball_formula_valid:
        raise ValueError("closed form needs t outside the exceptional set and psi(e^t) <= 1")
    return unit_ball_volume(region.d - 1) * region.radius ** (region.d - 1)


def region_volume_mc(region: CoordinateRegion, rng: np.random.Generator, n: int,
                     chunk: int = 1 << 18) -> tuple[float, float]:
    """Monte-Carlo volume over the bounding box; returns ``(estimate, stderr)``."""
    if n < 1000:
        raise ValueError("use at least 1000 samples")
    k = region.d - 1
    rad = region.radius
    box = (2 * rad) ** k
    hits = 0
    done = 0
    while done < n:
        take = min(chunk, n - done)
        S = rng.uniform(-rad, rad, size=(take, k))
        hits += int(region_mask(region, S).sum())
        done += take
    frac = hits / n
    return box * frac, box * math.sqrt(frac * (1 - frac) / n)


def region_volume_radial(region: CoordinateRegion) -> float:
    """Deterministic volume of the full two-constraint region.

    With ``A = |s_1|^2`` and ``b = |s_2|``, the constraints read
    ``A in [m + b^2 - 2L, m + b^2 + 2L]`` and ``A <= R^2 - b^2``; integrate the
    ``s_1`` ball shells over ``b``.
    """
    alpha, beta = region.p - 1, region.d - region.p
    m, L, R = region.m, region.level, region.radius
    if alpha == 0:
        # only s_2: |m + b^2| <= 2L and b <= R
        lo = max(0.0, -m - 2 * L)
        hi = min(R * R, -m + 2 * L)
        return unit_ball_volume(beta) * max(0.0, hi ** (beta / 2) - lo ** (beta / 2)) if hi > lo else 0.0
    wa = unit_ball_volume(alpha)

    def shell(b: float) -> float:
        lo = max(0.0, m + b * b - 2 * L)
        hi = min(R * R - b * b, m + b * b + 2 * L)
        if hi <= lo:
            return 0.0
        return wa * (hi ** (alpha / 2) - lo ** (alpha / 2))

    if beta == 0:
        return shell(0.0)
    sphere = beta * unit_ball_volume(beta)
    # breakpoints where one of the bounds changes
    cands = [2 * L - m, (R * R - m - 2 * L) / 2, (R * R - m + 2 * L) / 2, -m - 2 * L, -m + 2 * L]
    pts = sorted({math.sqrt(c) for c in cands if 0 < c < R * R})
    edges = [0.0, *pts, R]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        if b > a:
            val, _ = integrate.quad(lambda r: sphere * r ** (beta - 1) * shell(r), a, b,
                                    epsabs=0, epsrel=1e-11, limit=200)
            total += val
    return total


def region_volume(region: CoordinateRegion) -> tuple[float, str]:
    if region.ball_formula_valid:
        return region_volume_exact(region), "exact"
    return region_volume_radial(region), "radial"


# --------------------------------------------------------------------------
# cusp volume
# --------------------------------------------------------------------------

def _log_volume(psi: PsiSpec, t: float, d: int, p: int, m: float) -> float:
    reg = CoordinateRegion(t, psi, d, p, m)
    if reg.ball_formula_valid:
        return math.log(unit_ball_volume(d - 1)) + (d - 1) * reg.log_radius
    if abs(t) > MAX_ABS_T:
        return -math.inf if reg.log_radius < 0 else math.inf
    v = region_volume_radial(reg)
    return math.log(v) if v > 0 else -math.inf


def _breakpoints(psi: PsiSpec, t0: float, t1: float, m: float, n: int = 256) -> list[float]:
    funcs = [lambda t: 2 * t + psi.log_psi(t) - math.log(abs(m)),
             lambda t: psi.log_psi(t)]
    grid = np.linspace(t0, t1, n + 1)
    out = set()
    if isinstance(psi, Tabulated):
        out.update(float(math.log(k)) for k in psi.ts if t0 < math.log(k) < t1)
    for f in funcs:
        vals = [f(t) for t in grid]
        for a, b, fa, fb in zip(grid, grid[1:], vals, vals[1:]):
            if fa == 0:
                out.add(float(a))
            elif fa * fb < 0:
                out.add(float(optimize.brentq(f, a, b, xtol=1e-14)))
    return sorted(x for x in out if t0 < x < t1)


def _adaptive_simpson(f, a: float, b: float, rtol: float, depth: int = 48) -> float:
    fa, fm, fb = f(a), f((a + b) / 2), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6

    def rec(a, b, fa, fm, fb, whole, depth):
        m = (a + b) / 2
        flm, frm = f((a + m) / 2), f((m + b) / 2)
        left = (m - a) * (fa + 4 * flm + fm) / 6
        right = (b - m) * (fm + 4 * frm + fb) / 6
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15 * rtol * abs(left + right) or abs(delta) < 1e-300:
            return left + right + delta / 15
        return (rec(a, m, fa, flm, fm, left, depth - 1)
                + rec(m, b, fm, frm, fb, right, depth - 1))

    return rec(a, b, fa, fm, fb, whole, depth)


def cusp_volume(psi: PsiSpec, t0: float, t1: float, d: int, m=1, p: int | None = None,
                rtol: float = 1e-8) -> float:
    """``int_{t0}^{t1} vol(U_t(psi)) dt`` by adaptive Simpson, split at kinks."""
    if t1 < t0:
        raise ValueError("need t0 <= t1")
    if t1 == t0:
        return 0.0
    p = d if p is None else p
    mf = float(as_fraction(m))
    edges = [t0, *_breakpoints(psi, t0, t1, mf), t1]
    probe = np.linspace(t0, t1, 65)
    shift = max(_log_volume(psi, float(t), d, p, mf) for t in probe)
    if not math.isfinite(shift):
        return 0.0 if shift < 0 else math.inf
    f = lambda t: math.exp(_log_volume(psi, t, d, p, mf) - shift)
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        # subdivide so that every piece has a smooth, sampled integrand
        pieces = max(1, int(math.ceil((b - a) / 0.5)))
        for k in range(pieces):
            lo = a + (b - a) * k / pieces
            hi = a + (b - a) * (k + 1) / pieces
            total += _adaptive_simpson(f, lo, hi, rtol)
    if shift > 700:
        return math.inf
    return total * math.exp(shift)


# --------------------------------------------------------------------------
# divergence criterion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    criterion: str
    rule: str

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "rule": self.rule}


def divergence_classifier(psi: PsiSpec, d: int) -> Verdict:
    """Whether ``int_1^inf t^{d-2} psi(t)^{d-1} dt`` diverges."""
    if d < 3:
        raise ValueError("the criterion is stated for d >= 3")
    if isinstance(psi, PowerLaw):
        div = psi.s <= 1
        return Verdict("divergent" if div else "convergent", "analytic: power law, divergent iff s <= 1")
    if isinstance(psi, Constant):
        return Verdict("divergent", "analytic: constant")
    if isinstance(psi, LogPower):
        div = psi.a * (d - 1) <= 1 + 1e-12
        return Verdict("divergent" if div else "convergent",
                       "analytic: log power, divergent iff a(d-1) <= 1")
    return _numeric_verdict(psi, d)


def _numeric_verdict(psi: PsiSpec, d: int) -> Verdict:
    rule = "numeric heuristic: partial integrals to 2^k"
    f = lambda u: math.exp((d - 1) * (u + psi.log_psi(u)))
    P = [0.0]
    small = 0
    ln2 = math.log(2)
    for k in range(1, 41):
        inc, _ = integrate.quad(f, (k - 1) * ln2, k * ln2, epsrel=1e-10, limit=200)
        P.append(P[-1] + inc)
        if k >= 3 and P[k] > 1e3 * P[3]:
            return Verdict("divergent", rule)
        if k >= 2:
            small = small + 1 if P[k] - P[k - 1] < 1e-6 * P[k - 1] else 0
            if small >= 3:
                return Verdict("convergent", rule)
    return Verdict("inconclusive", rule)


# --------------------------------------------------------------------------
# exceptional set and the chart sandwich
# --------------------------------------------------------------------------

def exceptional_tail(psi: PsiSpec, d: int, m=1, t_max: float = 60.0, n: int = 20000):
    """``(int_E (e^t psi)^{d-1} dt, |m|^{d-1} int_E e^{-(d-1)t} dt)`` over the
    exceptional set ``E`` intersected with ``(0, t_max]``."""
    mf = abs(float(as_fraction(m)))
    edges = [0.0, *_breakpoints(psi, 0.0, t_max, mf), t_max]
    lhs = rhs = 0.0
    for a, b in zip(edges, edges[1:]):
        mid = (a + b) / 2
        if 2 * mid + psi.log_psi(mid) > math.log(mf):
            continue
        lhs += integrate.quad(lambda t: math.exp((d - 1) * (t + psi.log_psi(t))), a, b)[0]
        rhs += mf ** (d - 1) * (math.exp(-(d - 1) * a) - math.exp(-(d - 1) * b)) / (d - 1)
    return lhs, rhs


@dataclass(frozen=True)
class Sandwich:
    c: float
    t0: float
    f1_norm: float


def sandwich_constant(basis: HyperbolicBasis, psi: PsiSpec, T: float) -> Sandwich:
    """Constant ``c`` with chart regions ``U_t(psi/c)`` inside, and ``U_t(c psi)``
    containing, the ``D_T`` window around ``f_1``, for ``t >= log(T/|f_1|)``."""
    F = basis.as_array()
    f1n = float(np.linalg.norm(F[:, 0]))
    sv = np.linalg.svd(F[:, 1:], compute_uv=False)
    lo, hi = psi.scale_ratio_bounds(f1n)
    c_out = 2 * f1n * hi / sv.min()
    c_in = math.sqrt(1.25) * sv.max() / (f1n * lo)
    return Sandwich(float(max(c_out, c_in, 1.0)), math.log(T / f1n), f1n)
