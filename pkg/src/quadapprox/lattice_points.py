"""Integer points on ``{Q = m}``: brute-force windows and cusp-restricted search.

Both searches fix all coordinates but one and solve the remaining quadratic
``a x^2 + b x + c = m`` with an exact integer square root, so every
reported point satisfies ``Q(x) = m`` exactly.

The cusp search slices by the pivot coordinate ``n = x_j`` (``j = argmax |v_j|``).
For a cusp point of norm ``r`` we have ``|x - r v| < R(r) = r psi(r)``, hence
``|n - r v_j| < R(r)`` and ``r >= |n|``.  Starting from ``r in [max(T_min, |n|), T_max]``
the bound ``Rbar = max R`` over the current interval and the interval itself
are refined against each other; each step keeps every admissible ``r``, so
the resulting box is complete, not heuristic.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from .approx import Direction, PsiSpec, Tabulated, decide, direction_errors
from .forms import FormError, QuadraticForm

DEFAULT_BUDGET = 10**9
_CHUNK = 1 << 21
_INT64_SAFE = 2**61


class BudgetExceeded(RuntimeError):
    """The candidate count of a search exceeds its budget."""

    def __init__(self, needed: int, budget: int):
        super().__init__(f"search needs {needed} candidates, budget is {budget}")
        self.needed = needed
        self.budget = budget


@dataclass(frozen=True)
class LatticePoint:
    coords: tuple[int, ...]
    norm: float

    @classmethod
    def from_coords(cls, coords) -> "LatticePoint":
        c = tuple(int(a) for a in coords)
        return cls(c, math.sqrt(sum(a * a for a in c)))


@dataclass(frozen=True)
class HitRecord:
    point: LatticePoint
    direction_error: float
    psi_value: float

    def to_json(self) -> str:
        return json.dumps({"x": list(self.point.coords), "norm": self.point.norm,
                           "err": self.direction_error, "psi": self.psi_value})


@dataclass(frozen=True)
class HitSummary:
    count: int
    min_norm: float | None
    max_norm: float | None
    log_norms: tuple[float, ...]

    def csv_row(self) -> str:
        fmt = lambda a: "" if a is None else repr(a)
        return f"{self.count},{fmt(self.min_norm)},{fmt(self.max_norm)}"


# --------------------------------------------------------------------------
# exact quadratic solve, vectorised
# --------------------------------------------------------------------------

def _isqrt_exact(D: np.ndarray):
    """Return ``(s, is_square)`` with ``s = floor(sqrt(D))`` for int64 ``D >= 0``."""
    s = np.floor(np.sqrt(D.astype(float))).astype(np.int64)
    for _ in range(3):
        s = np.where(s * s > D, s - 1, s)
        s = np.where((s + 1) * (s + 1) <= D, s + 1, s)
    return s, s * s == D


def _solve_last(gram: np.ndarray, m: int, pts: np.ndarray, k: int, k_range=None):
    """Complete rows of ``pts`` (column ``k`` ignored) to solutions of ``Q = m``.

    Returns an int array of full solutions.  ``k_range`` (lo, hi arrays) is used
    only when coordinate ``k`` drops out of the equation entirely.
    """
    if len(pts) == 0:
        return pts.reshape(0, gram.shape[0])
    pts = pts.copy()
    pts[:, k] = 0
    a = int(gram[k, k])
    b = 2 * (pts @ gram[k])
    c = np.einsum("ij,jk,ik->i", pts, gram, pts)
    rhs = m - c
    out = []
    if a != 0:
        D = b * b + 4 * a * rhs
        ok = D >= 0
        s, sq = _isqrt_exact(np.where(ok, D, 0))
        ok &= sq
        for sign in (1, -1):
            num = -b + sign * s
            good = ok & (num % (2 * a) == 0)
            if sign == -1:
                good &= s > 0
            sol = pts[good].copy()
            sol[:, k] = num[good] // (2 * a)
            out.append(sol)
    else:
        lin = b != 0
        good = lin & (rhs % np.where(lin, b, 1) == 0)
        sol = pts[good].copy()
        sol[:, k] = rhs[good] // b[good]
        out.append(sol)
        free = (~lin) & (rhs == 0)
        if np.any(free):
            if k_range is None:
                raise FormError("solved coordinate is unconstrained; choose another")
            lo, hi = k_range
            for i in np.flatnonzero(free):
                rng = np.arange(lo[i], hi[i] + 1)
                rows = np.repeat(pts[i:i + 1], len(rng), axis=0)
                rows[:, k] = rng
                out.append(rows)
    return np.concatenate(out) if out else pts[:0]


def _solve_last_bigint(gram: list[list[int]], m: int, rows, k: int):
    """Pure-Python fallback of :func:`_solve_last` for coordinates beyond int64."""
    n = len(gram)
    sols = []
    a = gram[k][k]
    for row in rows:
        x = [int(v) for v in row]
        x[k] = 0
        b = 2 * sum(gram[k][i] * x[i] for i in range(n))
        c = sum(gram[i][j] * x[i] * x[j] for i in range(n) for j in range(n))
        rhs = m - c
        if a == 0:
            if b != 0 and rhs % b == 0:
                sols.append(x[:k] + [rhs // b] + x[k + 1:])
            continue
        D = b * b + 4 * a * rhs
        if D < 0:
            continue
        s = math.isqrt(D)
        if s * s != D:
            continue
        for num in {-b + s, -b - s}:
            if num % (2 * a) == 0:
                sols.append(x[:k] + [num // (2 * a)] + x[k + 1:])
    return sols


def _box_product(lo: np.ndarray, hi: np.ndarray):
    """Ragged cartesian product: for each row ``r`` all integer vectors in
    ``[lo[r], hi[r]]``.  Returns ``(row_index, values)``."""
    widths = np.maximum(hi - lo + 1, 0)
    counts = np.prod(widths, axis=1)
    total = int(counts.sum())
    rows = np.repeat(np.arange(len(lo)), counts)
    offsets = np.cumsum(counts) - counts
    local = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    vals = np.empty((total, lo.shape[1]), dtype=np.int64)
    for col in range(lo.shape[1] - 1, -1, -1):
        w = widths[rows, col]
        vals[:, col] = lo[rows, col] + local % w
        local //= w
    return rows, vals


def _chunks(counts: np.ndarray, limit: int = _CHUNK):
    """Split row indices into consecutive groups whose counts sum to about ``limit``."""
    start, acc = 0, 0
    for i, c in enumerate(counts):
        if acc and acc + c > limit:
            yield start, i
            start, acc = i, 0
        acc += int(c)
    if start < len(counts):
        yield start, len(counts)


def _lexsort_rows(a: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return a
    return a[np.lexsort(a.T[::-1])]


def _norm2_bounds(T_min: float, T_max: float) -> tuple[int, int]:
    lo = Fraction(T_min) ** 2
    return math.ceil(lo), math.floor(Fraction(T_max) ** 2)


def _check_integral(form: QuadraticForm):
    if not form.is_integral:
        raise FormError("integer-point search needs an integral Gram matrix and m")
    return np.array(form.integer_gram(), dtype=np.int64), int(form.m)


def _choose_solved(gram: np.ndarray, candidates: list[int], weights=None) -> int:
    usable = [i for i in candidates if gram[i, i] != 0] or list(candidates)
    if weights is None:
        return usable[-1]
    return max(usable, key=lambda i: (abs(weights[i]), -i))


# --------------------------------------------------------------------------
# brute force
# --------------------------------------------------------------------------

def _lead_rows(gram: np.ndarray, m: int, Ti: int, hi2: int):
    """Leading free coordinates, the solved index and per-row boxes for the rest.

    Diagonal forms enumerate the minority-sign coordinates first; the remaining
    same-sign coordinates are then bounded by the value they must balance.
    Other forms fall back to a ball slice on the first free coordinate.
    """
    n = gram.shape[0]
    diag = np.diag(gram)
    if np.count_nonzero(gram - np.diag(diag)) == 0:
        sign = 1 if np.sum(diag > 0) >= np.sum(diag < 0) else -1
        big = [i for i in range(n) if sign * diag[i] > 0]
        small = [i for i in range(n) if sign * diag[i] < 0]
        k = big[-1]
        rest = big[:-1]
        ones_lo = np.full((1, len(small)), -Ti, dtype=np.int64)
        _, lead_vals = _box_product(ones_lo, -ones_lo)
        lead_vals = lead_vals[np.einsum("ij,ij->i", lead_vals, lead_vals) <= hi2]
        budget_val = sign * m + (np.abs(diag[small]) * lead_vals ** 2).sum(axis=1)
        room = hi2 - np.einsum("ij,ij->i", lead_vals, lead_vals)
        keep = budget_val >= 0
        lead_vals, budget_val, room = lead_vals[keep], budget_val[keep], room[keep]
        radius = np.empty((len(lead_vals), len(rest)), dtype=np.int64)
        for col, i in enumerate(rest):
            cap = budget_val // abs(int(diag[i]))
            radius[:, col] = [math.isqrt(int(min(a, b))) for a, b in zip(cap, room)]
        return small, rest, k, lead_vals, radius
    k = _choose_solved(gram, list(range(n)))
    free = [i for i in range(n) if i != k]
    lead_vals = np.arange(-Ti, Ti + 1, dtype=np.int64)[:, None]
    radius = np.array([math.isqrt(hi2 - int(a) * int(a)) for a in lead_vals[:, 0]], dtype=np.int64)
    radius = np.repeat(radius[:, None], len(free) - 1, axis=1)
    return free[:1], free[1:], k, lead_vals, radius


def points_all(form: QuadraticForm, T: float, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """All ``x`` with ``Q(x) = m`` and ``|x| <= T`` as a lexicographically sorted array."""
    gram, m = _check_integral(form)
    n = form.dim
    if T < 1:
        return np.zeros((0, n), dtype=np.int64)
    _, hi2 = _norm2_bounds(0, T)
    Ti = math.isqrt(hi2)
    lead, rest, k, lead_vals, radius = _lead_rows(gram, m, Ti, hi2)
    lo, hi = -radius, radius
    counts = np.prod(np.maximum(hi - lo + 1, 0), axis=1)
    if int(counts.sum()) > budget:
        raise BudgetExceeded(int(counts.sum()), budget)
    big = Ti * Ti * n * n * int(np.abs(gram).max()) * 8 >= _INT64_SAFE
    found = []
    for s, e in _chunks(counts):
        rows, vals = _box_product(lo[s:e], hi[s:e])
        pts = np.zeros((len(rows), n), dtype=np.int64)
        pts[:, lead] = lead_vals[s:e][rows]
        pts[:, rest] = vals
        partial = np.einsum("ij,ij->i", pts, pts)
        pts = pts[partial <= hi2]
        if big:
            sols = np.array(_solve_last_bigint(form.integer_gram(), m, pts.tolist(), k),
                            dtype=object).reshape(-1, n)
        else:
            sols = _solve_last(gram, m, pts, k, (np.full(len(pts), -Ti), np.full(len(pts), Ti)))
        if len(sols):
            sq = (sols.astype(object) ** 2).sum(axis=1) if big else np.einsum("ij,ij->i", sols, sols)
            found.append(sols[sq <= hi2])
    if not found:
        return np.zeros((0, n), dtype=np.int64)
    return _lexsort_rows(np.concatenate(found))


def enumerate_all(form: QuadraticForm, T: float, budget: int = DEFAULT_BUDGET) -> Iterator[LatticePoint]:
    """Every integer point of ``X`` with ``|x| <= T`` once, in lexicographic order."""
    for row in points_all(form, T, budget):
        yield LatticePoint.from_coords(row)


def filter_cusp(points: np.ndarray, v: Direction | np.ndarray, psi: PsiSpec,
                T_min: float, T_max: float) -> np.ndarray:
    """Exact cusp filter ``T_min <= |x| <= T_max`` and ``|x/|x| - v| < psi(|x|)``."""
    vv = v.v if isinstance(v, Direction) else np.asarray(v, dtype=float)
    if len(points) == 0:
        return points
    lo2, hi2 = _norm2_bounds(T_min, T_max)
    n2 = np.einsum("ij,ij->i", points, points)
    pts = points[(n2 >= lo2) & (n2 <= hi2)]
    if len(pts) == 0:
        return pts
    return pts[decide(pts, vv, psi, strict=True)]


# --------------------------------------------------------------------------
# cusp-restricted search
# --------------------------------------------------------------------------

def _radius_max(psi: PsiSpec, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Upper bound of ``r psi(r)`` on ``[r1, r2]`` (elementwise, ``0 < r1 <= r2``)."""
    out = np.maximum(r1 * psi(r1), r2 * psi(r2))
    if isinstance(psi, Tabulated):
        for t in psi.ts:
            inside = (r1 < t) & (t < r2)
            out = np.where(inside, np.maximum(out, t * psi(t)), out)
    elif not psi.radius_is_monotone():
        raise ValueError("unsupported approximation function for the cusp search")
    return out


@dataclass
class _CuspPlan:
    pivot: int
    solved: int
    free: list[int]
    n_vals: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.prod(np.maximum(self.hi - self.lo + 1, 0), axis=1)


def _plan_cusp(form: QuadraticForm, v: np.ndarray, psi: PsiSpec, T_min: float,
               T_max: float, margin: float = 1.0, refine: int = 6) -> _CuspPlan:
    gram = np.array(form.integer_gram(), dtype=np.int64)
    n = form.dim
    j = int(np.argmax(np.abs(v)))
    vj = float(v[j])
    k = _choose_solved(gram, [i for i in range(n) if i != j], weights=v)
    free = [i for i in range(n) if i not in (j, k)]

    r_lo0, r_hi0 = max(T_min, 1e-300), T_max
    R_glob = float(_radius_max(psi, np.array([r_lo0]), np.array([r_hi0]))[0]) * margin
    ends = sorted((r_lo0 * vj, r_hi0 * vj))
    n_min = max(math.floor(ends[0] - R_glob) - 1, -math.floor(T_max))
    n_max = min(math.ceil(ends[1] + R_glob) + 1, math.floor(T_max))
    n_vals = np.arange(n_min, n_max + 1, dtype=np.int64)
    nf = n_vals.astype(float)

    lo_r = np.maximum(T_min, np.abs(nf))
    hi_r = np.full_like(nf, float(T_max))
    alive = lo_r <= hi_r
    Rbar = np.zeros_like(nf)
    for _ in range(refine):
        safe_lo = np.where(alive, np.maximum(lo_r, 1e-300), 1.0)
        safe_hi = np.where(alive, np.maximum(hi_r, safe_lo), 1.0)
        Rbar = _radius_max(psi, safe_lo, safe_hi) * margin
        Rbar = Rbar * (1 + 1e-12) + 1e-12
        a = (nf - Rbar) / vj
        b = (nf + Rbar) / vj
        lo_r = np.maximum(lo_r, np.minimum(a, b))
        hi_r = np.minimum(hi_r, np.maximum(a, b))
        alive &= lo_r <= hi_r

    n_keep = n_vals[alive]
    lo_r, hi_r, Rbar = lo_r[alive], hi_r[alive], Rbar[alive]
    lo = np.empty((len(n_keep), len(free)), dtype=np.int64)
    hi = np.empty_like(lo)
    for col, i in enumerate(free):
        e1, e2 = lo_r * v[i], hi_r * v[i]
        a = np.minimum(e1, e2) - Rbar
        b = np.maximum(e1, e2) + Rbar
        slack = 1e-9 * (1 + np.abs(a) + np.abs(b))
        lo[:, col] = np.ceil(a - slack).astype(np.int64)
        hi[:, col] = np.floor(b + slack).astype(np.int64)
    return _CuspPlan(j, k, free, n_keep, lo, hi)


def _run_plan(form: QuadraticForm, plan: _CuspPlan, sl: slice = slice(None)) -> np.ndarray:
    gram = np.array(form.integer_gram(), dtype=np.int64)
    m = int(form.m)
    n = form.dim
    n_vals, lo, hi = plan.n_vals[sl], plan.lo[sl], plan.hi[sl]
    if len(n_vals) == 0:
        return np.zeros((0, n), dtype=np.int64)
    bound = int(max(np.abs(n_vals).max(), np.abs(lo).max(initial=0), np.abs(hi).max(initial=0)))
    big = bound * bound * n * n * int(np.abs(gram).max()) * 8 >= _INT64_SAFE
    counts = np.prod(np.maximum(hi - lo + 1, 0), axis=1)
    found = []
    for s, e in _chunks(counts):
        rows, vals = _box_product(lo[s:e], hi[s:e])
        pts = np.zeros((len(rows), n), dtype=np.int64)
        pts[:, plan.pivot] = n_vals[s:e][rows]
        pts[:, plan.free] = vals
        if big:
            sols = np.array(_solve_last_bigint(form.integer_gram(), m, pts.tolist(), plan.solved),
                            dtype=object).reshape(-1, n)
        else:
            span = np.abs(pts).max(axis=1) + int(np.abs(hi).max(initial=0)) + 1
            sols = _solve_last(gram, m, pts, plan.solved, (-span, span))
        if len(sols):
            found.append(sols)
    if not found:
        return np.zeros((0, n), dtype=np.int64)
    return np.concatenate(found)


def cusp_points(form: QuadraticForm, v: Direction | np.ndarray, psi: PsiSpec,
                T_min: float, T_max: float, margin: float = 1.0,
                budget: int = DEFAULT_BUDGET, workers: int = 1,
                q_tol: float = 1e-6) -> np.ndarray:
    """Integer points of ``X`` in the cusp at ``v`` with ``T_min <= |x| <= T_max``,
    sorted lexicographically."""
    _check_integral(form)
    vv = v.v if isinstance(v, Direction) else np.asarray(v, dtype=float)
    if abs(np.linalg.norm(vv) - 1) > 1e-12:
        raise ValueError("direction must be a unit vector")
    qv = float(vv @ form.gram_float() @ vv)
    if abs(qv) > q_tol:
        raise ValueError(f"direction is far from the boundary (Q(v) = {qv:.3e})")
    if not 0 < T_min <= T_max:
        raise ValueError("need 0 < T_min <= T_max")
    plan = _plan_cusp(form, vv, psi, T_min, T_max, margin)
    needed = int(plan.counts.sum())
    if needed > budget:
        raise BudgetExceeded(needed, budget)
    if workers > 1 and len(plan.n_vals) > 1:
        edges = np.linspace(0, len(plan.n_vals), workers + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(edges, edges[1:]) if b > a]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_plan, [form] * len(slices), [plan] * len(slices), slices))
        cand = np.concatenate(parts)
    else:
        cand = _run_plan(form, plan)
    return _lexsort_rows(filter_cusp(cand, vv, psi, T_min, T_max))


def enumerate_in_cusp(form: QuadraticForm, v: Direction | np.ndarray, psi: PsiSpec,
                      T_min: float, T_max: float, **kwargs) -> Iterator[HitRecord]:
    vv = v.v if isinstance(v, Direction) else np.asarray(v, dtype=float)
    pts = cusp_points(form, vv, psi, T_min, T_max, **kwargs)
    yield from hit_records(pts, vv, psi)


def hit_records(pts: np.ndarray, v: np.ndarray, psi: PsiSpec) -> Iterator[HitRecord]:
    if len(pts) == 0:
        return
    err, nrm = direction_errors(pts.astype(float), v)
    ps = psi(nrm)
    for row, e, r, p in zip(pts, err, nrm, ps):
        yield HitRecord(LatticePoint(tuple(int(a) for a in row), float(r)), float(e), float(p))


def count_hits(stream: Iterable) -> HitSummary:
    """Count a stream of ``HitRecord`` or ``LatticePoint`` items."""
    norms = []
    for item in stream:
        pt = item.point if isinstance(item, HitRecord) else item
        norms.append(pt.norm)
    if not norms:
        return HitSummary(0, None, None, ())
    return HitSummary(len(norms), min(norms), max(norms), tuple(math.log(r) for r in norms))


def write_jsonl(records: Iterable[HitRecord], fh) -> int:
    n = 0
    for rec in records:
        fh.write(rec.to_json() + "\n")
        n += 1
    return n
