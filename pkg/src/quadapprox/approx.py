"""Approximation functions, directions on the boundary, cusp predicates and
the two explicit counterexample constructions.

Membership tests compare ``err = ||x/|x| - v||`` with ``psi(|x|)`` in double
precision; anything within ``GUARD_BAND`` (relative) of the boundary is
re-decided with mpmath at ``HP_BITS`` bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence

import mpmath
import numpy as np

from .forms import FormError, QuadraticForm, as_fraction, inertia

GUARD_BAND = 1e-9
HP_BITS = 160


# --------------------------------------------------------------------------
# approximation functions
# --------------------------------------------------------------------------

class PsiSpec:
    """Base for the quasi-conformal families.  Subclasses are frozen dataclasses."""

    eps: float

    def __call__(self, t):
        if np.ndim(t) == 0:
            if t <= 0:
                raise ValueError(f"psi is defined for t > 0, got {t}")
            return float(np.exp(self.log_psi(math.log(t))))
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("psi is defined for t > 0")
        return np.exp(self.log_psi(np.log(t)))

    def log_psi(self, log_t):
        """``log psi(exp(log_t))``; safe for arguments far outside float range of ``t``."""
        raise NotImplementedError

    def mp(self, t):
        """Evaluate at an mpmath number in the current mpmath precision."""
        raise NotImplementedError

    @property
    def qc_constant(self) -> float:
        raise NotImplementedError

    def scaled(self, c: float) -> "PsiSpec":
        """The function ``c * psi``."""
        raise NotImplementedError

    def radius_is_monotone(self) -> bool:
        """Whether ``t -> t psi(t)`` is monotone on ``(0, inf)``."""
        return True

    def scale_ratio_bounds(self, h: float) -> tuple[float, float]:
        """``(inf_t, sup_t)`` of ``psi(h t) / psi(t)``."""
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(PsiSpec):
    """``psi(t) = eps * t**(-s)``."""

    eps: float
    s: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def log_psi(self, log_t):
        return math.log(self.eps) - self.s * log_t

    def mp(self, t):
        return mpmath.mpf(self.eps) * mpmath.power(t, -mpmath.mpf(self.s))

    @property
    def qc_constant(self) -> float:
        return 2.0 ** abs(self.s)

    def scaled(self, c):
        return PowerLaw(self.eps * c, self.s)

    def scale_ratio_bounds(self, h):
        r = h ** (-self.s)
        return r, r

    def __str__(self):
        return f"powerlaw:eps={self.eps:g},s={self.s:g}"


@dataclass(frozen=True)
class Constant(PsiSpec):
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def log_psi(self, log_t):
        return math.log(self.eps) + 0.0 * log_t

    def mp(self, t):
        return mpmath.mpf(self.eps)

    @property
    def qc_constant(self) -> float:
        return 1.0

    def scaled(self, c):
        return Constant(self.eps * c)

    def scale_ratio_bounds(self, h):
        return 1.0, 1.0

    def __str__(self):
        return f"const:eps={self.eps:g}"


@dataclass(frozen=True)
class LogPower(PsiSpec):
    """``psi(t) = eps / (t * log(e + t)**a)``."""

    eps: float
    a: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def log_psi(self, log_t):
        # log(e + t) = log t + log1p(e / t), with the roles swapped for t < e
        log_t = np.asarray(log_t, dtype=float)
        big = np.maximum(log_t, 1.0)
        small = np.minimum(log_t, 1.0)
        log_e_plus_t = big + np.log1p(np.exp(small - big))
        out = math.log(self.eps) - log_t - self.a * np.log(log_e_plus_t)
        return float(out) if out.ndim == 0 else out

    def mp(self, t):
        return mpmath.mpf(self.eps) / (t * mpmath.power(mpmath.log(mpmath.e + t), self.a))

    @property
    def qc_constant(self) -> float:
        # For h in [1/2, 2]: 1/h <= 2 and log(e+t)/log(e+ht) lies in [1/(1+log 2), 1+log 2].
        return 2.0 * (1.0 + math.log(2.0)) ** abs(self.a)

    def scaled(self, c):
        return LogPower(self.eps * c, self.a)

    def radius_is_monotone(self) -> bool:
        return True

    def scale_ratio_bounds(self, h):
        lt = np.linspace(-30.0, 700.0, 20001)
        r = np.exp(self.log_psi(lt + math.log(h)) - self.log_psi(lt))
        lo, hi = float(r.min()), float(r.max())
        # limits at t -> 0 and t -> inf are 1/h; pad for the sampling gaps
        return min(lo, 1 / h) * (1 - 1e-6), max(hi, 1 / h) * (1 + 1e-6)

    def __str__(self):
        return f"logpower:eps={self.eps:g},a={self.a:g}"


@dataclass(frozen=True)
class Tabulated(PsiSpec):
    """Piecewise linear in log-log coordinates through ``(t_k, psi_k)``.

    Outside the knots the first/last slope is continued.
    """

    ts: tuple[float, ...]
    values: tuple[float, ...]
    eps: float = field(default=1.0)

    def __post_init__(self):
        ts = tuple(float(t) for t in self.ts)
        vs = tuple(float(v) for v in self.values)
        if len(ts) < 2 or len(ts) != len(vs):
            raise ValueError("need at least two knots and matching values")
        if any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("knots must be positive and strictly increasing")
        if any(v <= 0 for v in vs):
            raise ValueError("tabulated values must be positive")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "values", vs)

    @property
    def _logs(self):
        return np.log(self.ts), np.log(self.values)

    @property
    def slopes(self) -> np.ndarray:
        lt, lv = self._logs
        return np.diff(lv) / np.diff(lt)

    def log_psi(self, log_t):
        lt, lv = self._logs
        sl = self.slopes
        x = np.asarray(log_t, dtype=float)
        out = np.interp(x, lt, lv)
        out = np.where(x < lt[0], lv[0] + sl[0] * (x - lt[0]), out)
        out = np.where(x > lt[-1], lv[-1] + sl[-1] * (x - lt[-1]), out)
        return float(out) if out.ndim == 0 else out

    def mp(self, t):
        lt = mpmath.log(t)
        knots = [mpmath.log(mpmath.mpf(a)) for a in self.ts]
        vals = [mpmath.log(mpmath.mpf(a)) for a in self.values]
        k = 0
        while k < len(knots) - 2 and lt > knots[k + 1]:
            k += 1
        w = (lt - knots[k]) / (knots[k + 1] - knots[k])
        return mpmath.exp(vals[k] + w * (vals[k + 1] - vals[k]))

    @property
    def qc_constant(self) -> float:
        return 2.0 ** float(np.max(np.abs(self.slopes)))

    def scaled(self, c):
        return Tabulated(self.ts, tuple(v * c for v in self.values))

    def radius_is_monotone(self) -> bool:
        return False

    def scale_ratio_bounds(self, h):
        b = abs(math.log(h)) * float(np.max(np.abs(self.slopes)))
        return math.exp(-b), math.exp(b)

    def __str__(self):
        return "tabulated:" + ";".join(f"{t:g}={v:g}" for t, v in zip(self.ts, self.values))


def parse_psi(text: str) -> PsiSpec:
    """Parse ``powerlaw:eps=0.5,s=1``, ``logpower:eps=1,a=0.5``, ``const:eps=0.1``
    or ``tabulated:1=1;10=0.1;100=0.01``."""
    family, _, rest = text.strip().partition(":")
    family = family.lower()
    if family == "tabulated":
        pairs = [p.split("=") for p in rest.split(";") if p]
        return Tabulated(tuple(float(a) for a, _ in pairs), tuple(float(b) for _, b in pairs))
    params = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = float(Fraction(val.strip()))
    try:
        if family in ("powerlaw", "power"):
            return PowerLaw(params["eps"], params["s"])
        if family in ("logpower", "log"):
            return LogPower(params["eps"], params["a"])
        if family in ("const", "constant"):
            return Constant(params["eps"])
    except KeyError as exc:
        raise ValueError(f"missing parameter {exc} in {text!r}") from None
    raise ValueError(f"unknown psi family in {text!r}")


def psi_eval(psi: PsiSpec, t: float) -> float:
    return psi(t)


def quasiconformal_check(psi: PsiSpec, t_range=(1e-6, 1e12), n_t: int = 400,
                         n_h: int = 101) -> float:
    """Largest sampled ``psi(h t)/psi(t)`` over ``h in [1/2, 2]``.

    Raises ``ValueError`` if the sample exceeds the stored constant.
    """
    lt = np.linspace(math.log(t_range[0]), math.log(t_range[1]), n_t)
    lh = np.log(np.linspace(0.5, 2.0, n_h))
    base = np.asarray(psi.log_psi(lt))
    shifted = np.asarray(psi.log_psi((lt[:, None] + lh[None, :]).ravel())).reshape(n_t, n_h)
    worst = float(np.exp(np.max(shifted - base[:, None])))
    if worst > psi.qc_constant * (1 + 1e-12):
        raise ValueError(f"quasi-conformal constant violated: {worst} > {psi.qc_constant}")
    return worst


# --------------------------------------------------------------------------
# directions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Direction:
    v: np.ndarray
    boundary: bool = False

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("direction must have unit norm")

    def check_boundary(self, form: QuadraticForm, tol: float = 1e-10) -> bool:
        return abs(float(self.v @ form.gram_float() @ self.v)) <= tol

    def tolist(self) -> list[float]:
        return [float(a) for a in self.v]


def radial_project(x: Sequence) -> Direction:
    arr = np.array([float(a) for a in x])
    nrm = float(np.linalg.norm(arr))
    if nrm == 0:
        raise ValueError("cannot project the zero vector")
    return Direction(arr / nrm)


def boundary_direction(form: QuadraticForm, v: Sequence, tol: float = 1e-10) -> Direction:
    """Normalise ``v`` and check it lies on ``{Q = 0}``."""
    arr = np.array([float(a) for a in v])
    arr = arr / np.linalg.norm(arr)
    q = float(arr @ form.gram_float() @ arr)
    if abs(q) > tol:
        raise ValueError(f"direction is not on the boundary: Q(v) = {q:.3e}")
    return Direction(arr, boundary=True)


def _diag_signs(form: QuadraticForm) -> list[int]:
    if not form.is_diagonal or any(abs(form.gram[i][i]) != 1 for i in range(form.dim)):
        raise FormError("boundary sampling needs a diagonal +-1 form")
    return [int(form.gram[i][i]) for i in range(form.dim)]


def sample_boundary_many(form: QuadraticForm, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` samples ``(u, w)/sqrt 2`` with ``u``, ``w`` uniform on the unit spheres
    of the plus and minus coordinates."""
    signs = _diag_signs(form)
    plus = [i for i, s in enumerate(signs) if s > 0]
    minus = [i for i, s in enumerate(signs) if s < 0]
    out = np.zeros((n, form.dim))
    for axes in (plus, minus):
        g = rng.standard_normal((n, len(axes)))
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        while np.any(nrm == 0):
            bad = (nrm == 0).ravel()
            g[bad] = rng.standard_normal((int(bad.sum()), len(axes)))
            nrm = np.linalg.norm(g, axis=1, keepdims=True)
        out[:, axes] = g / nrm / math.sqrt(2.0)
    return out


def sample_boundary(form: QuadraticForm, rng: np.random.Generator) -> Direction:
    v = sample_boundary_many(form, rng, 1)[0]
    return Direction(v / np.linalg.norm(v), boundary=True)


def boundary_from_spheres(form: QuadraticForm, u: Sequence[float], w: Sequence[float]) -> Direction:
    """Deterministic version of the sampler: place ``u/sqrt2`` on the plus axes
    and ``w/sqrt2`` on the minus axes."""
    signs = _diag_signs(form)
    plus = [i for i, s in enumerate(signs) if s > 0]
    minus = [i for i, s in enumerate(signs) if s < 0]
    v = np.zeros(form.dim)
    v[plus] = np.asarray(u, dtype=float) / np.linalg.norm(u) / math.sqrt(2.0)
    v[minus] = np.asarray(w, dtype=float) / np.linalg.norm(w) / math.sqrt(2.0)
    return Direction(v, boundary=True)


# --------------------------------------------------------------------------
# cusp predicates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CuspSpec:
    """A cusp region.

    ``variant`` is ``"C"`` (strict, all norms), ``"C_T"`` (non-strict,
    ``|x| >= T``) or ``"D_T"`` (non-strict, measured with ``p(x)``, the
    Euclidean length of the ``f_1`` component; needs ``basis``).
    """

    v: Direction
    psi: PsiSpec
    variant: str = "C"
    T: float = 0.0
    basis: object = None

    def __post_init__(self):
        if self.variant not in ("C", "C_T", "D_T"):
            raise ValueError(f"unknown cusp variant {self.variant!r}")
        if self.variant == "D_T" and self.basis is None:
            raise ValueError("D_T needs the hyperbolic basis")


def direction_errors(points: np.ndarray, v: np.ndarray, scale: np.ndarray | None = None):
    """Vectorised ``(||x/scale - v||, scale)`` with ``scale = |x|`` by default."""
    pts = np.asarray(points, dtype=float)
    if scale is None:
        scale = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    err = np.linalg.norm(pts / scale[:, None] - v[None, :], axis=1)
    return err, scale


def _mp_vector(x):
    return [mpmath.mpf(int(a)) if isinstance(a, (int, np.integer))
            else mpmath.mpf(a.numerator) / a.denominator if isinstance(a, Fraction)
            else mpmath.mpf(float(a)) for a in x]


def hp_margin(x: Sequence, v: Sequence[float], psi: PsiSpec, scale_fn=None):
    """``psi(s) - ||x/s - v||`` in high precision, with ``s = |x|`` by default."""
    with mpmath.workprec(HP_BITS):
        xs = _mp_vector(x)
        vs = [mpmath.mpf(float(a)) for a in v]
        s = scale_fn(xs) if scale_fn else mpmath.sqrt(mpmath.fsum(a * a for a in xs))
        err = mpmath.sqrt(mpmath.fsum((a / s - b) ** 2 for a, b in zip(xs, vs)))
        return psi.mp(s) - err


def decide(points, v: np.ndarray, psi: PsiSpec, strict: bool = True,
           scale=None, scale_fn=None) -> np.ndarray:
    """Vectorised membership ``err < psi`` (or ``<=``) with guard-band fallback."""
    pts = np.asarray(points)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    err, sc = direction_errors(pts.astype(float), v, scale)
    ps = psi(sc)
    margin = ps - err
    inside = margin > 0 if strict else margin >= 0
    close = np.abs(margin) <= GUARD_BAND * ps
    for i in np.flatnonzero(close):
        x = [int(a) for a in pts[i]] if np.issubdtype(pts.dtype, np.integer) else pts[i]
        m = hp_margin(x, v, psi, scale_fn)
        inside[i] = m > 0 if strict else m >= 0
    return inside


def f1_length(basis):
    """Return ``x -> p(x)`` (mpmath) and a float vectorised version."""
    inv = basis.inverse()
    row = [inv[0][j] for j in range(basis.dim)]
    f1_norm2 = sum(a * a for a in basis.f1)

    def p_mp(xs):
        c1 = mpmath.fsum(mpmath.mpf(r.numerator) / r.denominator * a for r, a in zip(row, xs))
        return abs(c1) * mpmath.sqrt(mpmath.mpf(f1_norm2.numerator) / f1_norm2.denominator)

    row_f = np.array([float(a) for a in row])
    f1n = math.sqrt(float(f1_norm2))

    def p_float(pts):
        return np.abs(np.asarray(pts, dtype=float) @ row_f) * f1n

    return p_mp, p_float


def cusp_member(spec: CuspSpec, x: Sequence) -> bool:
    """Membership of one point (standard coordinates) in the cusp ``spec``."""
    if all(isinstance(a, (int, np.integer)) for a in x) and max(abs(int(a)) for a in x) < 2**62:
        pts = np.array([[int(a) for a in x]], dtype=np.int64)
    else:
        pts = np.array([[as_fraction(a) if not isinstance(a, (float, np.floating)) else float(a)
                         for a in x]], dtype=object)
    xf = pts.astype(float)
    if not np.any(xf):
        raise ValueError("cusp membership is undefined at the origin")
    v = spec.v.v
    if spec.variant == "D_T":
        p_mp, p_float = f1_length(spec.basis)
        p = p_float(xf)
        if p[0] == 0:
            raise ValueError("p(x) = 0: point is outside the (t, s) chart")
        if p[0] < spec.T:
            return False
        return bool(decide(pts, v, spec.psi, strict=False, scale=p, scale_fn=p_mp)[0])
    norm = float(np.linalg.norm(xf))
    if spec.variant == "C_T" and norm < spec.T:
        return False
    return bool(decide(pts, v, spec.psi, strict=(spec.variant == "C"))[0])


# --------------------------------------------------------------------------
# Pell construction: an (eps, 2)-approximable vector for sum x_i^2 - y^2 = 1
# --------------------------------------------------------------------------

def pell_solutions(count: int, D: int = 7, fundamental: tuple[int, int] = (8, 3)):
    """First ``count`` positive solutions of ``k^2 - D l^2 = 1``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    k1, l1 = fundamental
    if k1 * k1 - D * l1 * l1 != 1:
        raise ValueError("fundamental pair does not solve the Pell equation")
    out = [(k1, l1)]
    k, l = k1, l1
    while len(out) < count:
        k, l = k1 * k + D * l1 * l, l1 * k + k1 * l
        if k * k - D * l * l != 1:
            raise AssertionError("Pell recurrence broke")
        out.append((k, l))
    return out


@dataclass(frozen=True)
class PellWitness:
    j: int
    x: tuple[int, ...]
    y: int
    approx_ok: bool
    variety_ok: bool
    scaled_error: float

    @property
    def ok(self) -> bool:
        return self.approx_ok and self.variety_ok


def pell_witnesses(epsilon: float, count: int, d: int = 2) -> list[PellWitness]:
    """Witnesses ``x_1 = k_j, x_2 = 3 l_j, y = 4 l_j`` for ``v = (sqrt7/4, 3/4, 0, ...)``.

    Each is tested on ``y^2 sum (x_i - y v_i)^2 < eps^2`` and
    ``sum (x_i^2 - y^2 v_i^2) = 1``.  Only the first coordinate is irrational;
    since ``k - sqrt7 l = 1/(k + sqrt7 l)`` the first test is equivalent to
    ``4 l < eps (k + sqrt7 l)``, decided exactly over the rationals.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if d < 2:
        raise ValueError("need d >= 2")
    e = as_fraction(epsilon)
    v_sq = [Fraction(7, 16), Fraction(9, 16)] + [Fraction(0)] * (d - 2)
    out = []
    for j, (k, l) in enumerate(pell_solutions(count), start=1):
        y = 4 * l
        x = (k, 3 * l) + (0,) * (d - 2)
        # 4l - e k < e sqrt7 l
        lhs = 4 * l - e * k
        approx_ok = lhs < 0 or lhs * lhs < 7 * e * e * l * l
        # coordinates i >= 2 contribute (x_i - y v_i) = 0 exactly
        assert x[1] * 4 == 3 * y
        variety_ok = sum(Fraction(xi * xi) - y * y * vs for xi, vs in zip(x, v_sq)) == 1
        with mpmath.workprec(HP_BITS):
            scaled = mpmath.mpf(4 * l) / (k + mpmath.sqrt(7) * l)
        out.append(PellWitness(j, x, y, bool(approx_ok), variety_ok, float(scaled)))
    return out


def pell_summary(epsilon: float, count: int, d: int = 2) -> dict:
    """Index from which every generated witness passes (or every one fails)."""
    ws = pell_witnesses(epsilon, count, d)
    flags = [w.approx_ok for w in ws]
    last_fail = max((w.j for w in ws if not w.approx_ok), default=0)
    last_pass = max((w.j for w in ws if w.approx_ok), default=0)
    return {
        "epsilon": epsilon,
        "count": count,
        "pass_from": last_fail + 1 if last_fail < len(ws) else None,
        "fail_from": last_pass + 1 if last_pass < len(ws) else None,
        "all_variety_ok": all(w.variety_ok for w in ws),
        "n_pass": sum(flags),
        "limit": 2 / math.sqrt(7),
        "witnesses": ws,
    }


# --------------------------------------------------------------------------
# rational-point obstruction: a non (eps, 1)-approximable vector
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObstructionReport:
    k: int
    epsilon: Fraction
    y_bound: int
    candidates: int
    solutions: tuple[tuple[tuple[int, ...], int], ...]

    @property
    def ok(self) -> bool:
        return not self.solutions


def rational_obstruction_certificate(q0_gram: Sequence[Sequence], v: Sequence, y_bound: int) -> ObstructionReport:
    """For a positive definite integral ``Q0`` and rational ``v`` with ``Q0(v) = 1``,
    search every integer ``(x, y)``, ``0 < |y| <= y_bound``, with
    ``||y v - x|| < 1/k`` and ``Q0(x) - y^2 = -1`` (``k`` = common denominator of ``v``).
    """
    gram = [[as_fraction(a) for a in row] for row in q0_gram]
    n = len(gram)
    if any(a.denominator != 1 for row in gram for a in row):
        raise ValueError("Q0 must be integral")
    plus, minus, zero = inertia(gram)
    if plus != n:
        raise ValueError("Q0 must be positive definite")
    vs = [as_fraction(a) for a in v]
    if len(vs) != n:
        raise ValueError("dimension mismatch")

    def q0(x):
        return sum(gram[i][j] * x[i] * x[j] for i in range(n) for j in range(n))

    if q0(vs) != 1:
        raise ValueError("Q0(v) must equal 1")
    k = reduce(lambda a, b: a * b // math.gcd(a, b), (a.denominator for a in vs), 1)
    eps = Fraction(1, k)
    candidates = 0
    sols = []
    for y in range(-y_bound, y_bound + 1):
        if y == 0:
            continue
        centre = [y * a for a in vs]
        ranges = []
        for c in centre:
            lo = math.floor(c - eps) + 1
            hi = math.ceil(c + eps) - 1
            ranges.append(range(lo, hi + 1))
        stack = [()]
        for r in ranges:
            stack = [s + (xi,) for s in stack for xi in r]
        for x in stack:
            candidates += 1
            if sum((xi - c) ** 2 for xi, c in zip(x, centre)) >= eps * eps:
                continue
            if q0(x) - y * y == -1:
                sols.append((x, y))
    return ObstructionReport(k, eps, y_bound, candidates, tuple(sols))


def projection_distortion(g: np.ndarray, x: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Return ``(||pi(gx) - pi(gv)||, (2 ||g|| / ||gv||) ||pi(x) - v||)``."""
    gx, gv = g @ x, g @ v
    lhs = np.linalg.norm(gx / np.linalg.norm(gx) - gv / np.linalg.norm(gv))
    rhs = 2 * np.linalg.norm(g, 2) / np.linalg.norm(gv) * np.linalg.norm(x / np.linalg.norm(x) - v)
    return float(lhs), float(rhs)
