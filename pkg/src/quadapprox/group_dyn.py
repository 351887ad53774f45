"""The orthogonal group of the normal form: involution, factorizations, box counts.

Matrices act on coefficient vectors in the hyperbolic basis, so the invariant
form is ``G_f`` with corners ``1`` and middle signs ``+1 (p-1 times), -1 (d-p times)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import linalg

from .forms import QuadraticForm, hyperbolic_basis
from .geometry import flow, horospherical, horospherical_log, middle_signs, normal_gram
from .lattice_points import points_all


def is_group_element(g: np.ndarray, d: int, p: int, tol: float = 1e-10) -> bool:
    G = normal_gram(d, p)
    scale = max(1.0, np.linalg.norm(g, 2) ** 2)
    return bool(np.linalg.norm(g.T @ G @ g - G, 2) <= tol * scale)


def reflection_s0(d: int, m) -> np.ndarray:
    """``s_0``: ``f_1 -> -(m/2) f_{d+1}``, ``f_{d+1} -> -(2/m) f_1``, middle fixed."""
    mf = float(Fraction(m))
    if mf == 0:
        raise ValueError("m must be nonzero")
    s = np.eye(d + 1)
    s[0, 0] = s[d, d] = 0.0
    s[d, 0] = -mf / 2
    s[0, d] = -2 / mf
    return s


@functools.lru_cache(maxsize=32)
def _involution_scale(d: int, m: Fraction) -> np.ndarray:
    c = -m / 2
    left = [1 / c, *([Fraction(1)] * (d - 1)), c]
    right = [c, *([Fraction(1)] * (d - 1)), 1 / c]
    scale = np.array([[float(a * b) for b in right] for a in left])
    scale.setflags(write=False)
    return scale


def involution(g: np.ndarray, m) -> np.ndarray:
    """``s_0 g s_0``, computed as a permutation with exactly rounded scale factors."""
    g = np.asarray(g, dtype=float)
    d = g.shape[0] - 1
    mq = Fraction(m)
    if mq == 0:
        raise ValueError("m must be nonzero")
    perm = [d, *range(1, d), 0]
    return g[np.ix_(perm, perm)] * _involution_scale(d, mq)


def base_point(d: int, m) -> np.ndarray:
    w = np.zeros(d + 1)
    w[0] = 1.0
    w[d] = float(Fraction(m)) / 2
    return w


def is_stabilizer(g: np.ndarray, m, tol: float = 1e-10) -> bool:
    w = base_point(g.shape[0] - 1, m)
    return bool(np.linalg.norm(g @ w - w) <= tol * np.linalg.norm(w))


# --------------------------------------------------------------------------
# Lie algebra
# --------------------------------------------------------------------------

def middle_basis(d: int, p: int) -> list[np.ndarray]:
    """Basis ``E_ij - eta_i eta_j E_ji`` of the middle orthogonal algebra."""
    eta = middle_signs(d, p)
    out = []
    for i in range(d - 1):
        for j in range(i + 1, d - 1):
            X = np.zeros((d + 1, d + 1))
            X[1 + i, 1 + j] = 1.0
            X[1 + j, 1 + i] = -eta[i] * eta[j]
            out.append(X)
    return out


def centralizer_basis(d: int, p: int) -> list[np.ndarray]:
    A = np.zeros((d + 1, d + 1))
    A[0, 0], A[d, d] = 1.0, -1.0
    return [A, *middle_basis(d, p)]


def lie_basis(d: int, p: int, m=1) -> dict[str, list[np.ndarray]]:
    eye = np.eye(d - 1)
    lower = [horospherical_log(eye[k], p) for k in range(d - 1)]
    upper = [involution(X, m) for X in lower]
    return {"u_minus": lower, "z": centralizer_basis(d, p), "u_plus": upper}


def random_lie_element(d: int, p: int, rng: np.random.Generator, size: float, m=1) -> np.ndarray:
    basis = [X for part in lie_basis(d, p, m).values() for X in part]
    c = rng.normal(size=len(basis))
    X = sum(ci * B for ci, B in zip(c, basis))
    return X * (size / np.linalg.norm(X))


def unipotent_log(u: np.ndarray) -> np.ndarray:
    """Logarithm of a unipotent matrix whose nilpotent part cubes to zero."""
    A = u - np.eye(u.shape[0])
    return A - A @ A / 2 + A @ A @ A / 3


def distance(g: np.ndarray) -> float:
    """``|log g|_F``: distance to the identity for the invariant metric at ``e``."""
    return float(np.linalg.norm(np.real(linalg.logm(g)), "fro"))


def z_coordinates(z: np.ndarray, d: int, p: int) -> np.ndarray:
    """``(log lambda, middle algebra coordinates)`` of a centralizer element near ``e``."""
    lam = z[0, 0]
    M = z[1:d, 1:d]
    coords = [math.log(lam)]
    if d - 1 >= 2:
        L = np.real(linalg.logm(M))
        coords += [L[i, j] for i in range(d - 1) for j in range(i + 1, d - 1)]
    return np.array(coords)


def u_plus_coordinates(up: np.ndarray, m) -> np.ndarray:
    """``s'`` with ``up = sigma(u(s'))``."""
    d = up.shape[0] - 1
    return involution(up, m)[1:d, 0]


def rho(z: np.ndarray, p: int, m=1) -> float:
    """``|det Ad(z)|`` on the algebra of the expanding group, computed from its action."""
    d = z.shape[0] - 1
    zi = np.linalg.inv(z)
    eye = np.eye(d - 1)
    cols = []
    for k in range(d - 1):
        X = involution(horospherical_log(eye[k], p), m)
        Y = involution(z @ X @ zi, m)
        cols.append(Y[1:d, 0])
    return abs(float(np.linalg.det(np.array(cols).T)))


# --------------------------------------------------------------------------
# factorizations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DecompositionUZU:
    u_minus: np.ndarray
    z: np.ndarray
    u_plus: np.ndarray
    s_minus: np.ndarray
    s_plus: np.ndarray
    residual: float

    def product(self) -> np.ndarray:
        return self.u_minus @ self.z @ self.u_plus


def decompose_uzu(g: np.ndarray, p: int, m=1, chart: float | None = 0.3,
                  tol: float = 1e-10) -> DecompositionUZU:
    """``g = u^- z u^+`` read off the first column of ``g``.

    ``chart`` bounds ``|g - I|`` (operator norm); pass ``None`` to use the
    factorization wherever ``g_11 > 0``.
    """
    g = np.asarray(g, dtype=float)
    d = g.shape[0] - 1
    if chart is not None and np.linalg.norm(g - np.eye(d + 1), 2) > chart:
        raise ValueError("element outside the chart around the identity")
    lam = g[0, 0]
    if lam <= 0:
        raise ValueError("first diagonal entry must be positive")
    s = g[1:d, 0] / lam
    um = horospherical(s, p)
    h = horospherical(-s, p) @ g
    z = np.zeros_like(g)
    z[0, 0] = lam
    z[d, d] = 1 / lam
    z[1:d, 1:d] = h[1:d, 1:d]
    up = np.linalg.solve(z, h)
    res = float(np.linalg.norm(um @ z @ up - g, 2))
    scale = max(1.0, float(np.linalg.norm(g, 2)))
    if res > tol * scale:
        raise ValueError(f"round-trip residual {res:.3e} above tolerance")
    return DecompositionUZU(um, z, up, s, u_plus_coordinates(up, m), res)


@dataclass(frozen=True)
class DecompositionVBH:
    v: np.ndarray
    r: float
    h: np.ndarray
    s: np.ndarray
    residual: float = field(default=0.0)

    @property
    def b(self) -> np.ndarray:
        return flow(self.r, self.v.shape[0])


def decompose_vbh(g: np.ndarray, p: int, m=1, chart: float | None = 0.2,
                  tol: float = 1e-8) -> DecompositionVBH:
    """``g = u(s) a_r h`` with ``h w_0 = w_0``, from the orbit point ``g w_0``."""
    g = np.asarray(g, dtype=float)
    d = g.shape[0] - 1
    if chart is not None and np.linalg.norm(g - np.eye(d + 1), 2) > chart:
        raise ValueError("element outside the chart around the identity")
    x = g @ base_point(d, m)
    if x[0] <= 0:
        raise ValueError("orbit point has nonpositive first coefficient")
    r = math.log(x[0])
    s = x[1:d] / x[0]
    vb = horospherical(s, p) @ flow(r, d + 1)
    h = np.linalg.solve(vb, g)
    res = float(np.linalg.norm(vb @ h - g, 2))
    if res > tol * max(1.0, float(np.linalg.norm(g, 2))) or not is_stabilizer(h, m, 1e-8):
        raise ValueError("factorization failed to converge")
    return DecompositionVBH(horospherical(s, p), r, h, s, res)


# --------------------------------------------------------------------------
# transversality at the identity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TransversalityReport:
    det_phi: float
    det_error: float
    dv_du_plus_error: float
    dphi_block_error: float

    def to_dict(self) -> dict:
        return {"det_phi": self.det_phi, "det_error": self.det_error,
                "dv_du_plus_error": self.dv_du_plus_error,
                "dphi_block_error": self.dphi_block_error}


def _jacobian(f, n: int, h: float) -> np.ndarray:
    def central(step):
        cols = []
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            cols.append((f(e) - f(-e)) / (2 * step))
        return np.array(cols).T

    coarse, fine = central(h), central(h / 2)
    return (4 * fine - coarse) / 3, float(np.max(np.abs(fine - coarse)))


def transversality_checks(d: int, p: int, m=1, step: float = 1e-5) -> TransversalityReport:
    """Jacobian at ``(e, e, e)`` of ``(u^-, z, u^+) -> (u^- z v(u^+) z^-1, z b(u^+), u^-)``."""
    zb = centralizer_basis(d, p)
    nz, nu = len(zb), d - 1

    def factors(x):
        sm, zeta, sp = x[:nu], x[nu:nu + nz], x[nu + nz:]
        um = horospherical(sm, p)
        z = linalg.expm(sum(c * B for c, B in zip(zeta, zb)))
        up = involution(horospherical(sp, p), m)
        return um, z, up

    def phi(x):
        um, z, up = factors(x)
        dec = decompose_vbh(up, p, m, chart=None)
        psi_part = um @ z @ dec.v @ np.linalg.inv(z)
        eta_part = z @ dec.b
        return np.concatenate([psi_part[1:d, 0], z_coordinates(eta_part, d, p), um[1:d, 0]])

    n = 2 * nu + nz
    J, err = _jacobian(phi, n, step)
    det = abs(float(np.linalg.det(J)))

    def v_of(sp):
        up = involution(horospherical(sp, p), m)
        return decompose_vbh(up, p, m, chart=None).s

    Jv, _ = _jacobian(v_of, nu, step)
    # sigma as a map from the expanding to the contracting algebra, in s-coordinates
    eye = np.eye(nu)
    sigma_mat = np.array([involution(involution(horospherical_log(eye[k], p), m), m)[1:d, 0]
                          for k in range(nu)]).T
    dphi = J[nu + nz:, :nu]
    others = J[nu + nz:, nu:]
    dphi_err = float(max(np.max(np.abs(dphi - np.eye(nu))), np.max(np.abs(others), initial=0.0)))
    return TransversalityReport(det, err * n, float(np.max(np.abs(Jv + sigma_mat))), dphi_err)


# --------------------------------------------------------------------------
# contraction constant and box volumes
# --------------------------------------------------------------------------

def fitted_contraction_constant(d: int, p: int, rng: np.random.Generator, r: float = 0.05,
                                t_values=(0.0, 2.0, 5.0, 10.0), samples: int = 50, m=1) -> float:
    """Smallest ``l`` with ``G_r a_t G_r`` inside ``U^-_{lr} Z_{lr} a_t U^+_{lr}`` on the samples."""
    worst = 0.0
    for t in t_values:
        at, ati = flow(t, d + 1), flow(-t, d + 1)
        for _ in range(samples):
            g1 = linalg.expm(random_lie_element(d, p, rng, r * rng.uniform(), m))
            g2 = linalg.expm(random_lie_element(d, p, rng, r * rng.uniform(), m))
            dec = decompose_uzu(g1 @ at @ g2, p, m, chart=None, tol=1e-7)
            z = dec.z @ ati
            disp = max(distance(dec.u_minus), distance(z), distance(dec.u_plus))
            worst = max(worst, disp / r)
    return worst


def _haar_density(X: np.ndarray, basis: list[np.ndarray]) -> float:
    """``|det((1 - exp(-ad X)) / ad X)|`` on the span of ``basis``."""
    if len(basis) <= 1:
        return 1.0
    B = np.array([b.ravel() for b in basis]).T
    ad = np.array([np.linalg.lstsq(B, (X @ b - b @ X).ravel(), rcond=None)[0] for b in basis]).T
    term = np.eye(len(basis))
    total = np.eye(len(basis))
    for k in range(1, 30):
        term = term @ (-ad) / (k + 1)
        total = total + term
    return abs(float(np.linalg.det(total)))


@dataclass(frozen=True)
class BoxSpec:
    r1: float
    r2: float
    r3: float
    t: float = 0.0

    def __post_init__(self):
        if min(self.r1, self.r2, self.r3) <= 0:
            raise ValueError("radii must be positive")


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    vol_minus: float
    vol_plus: float
    z_integral: float
    stderr: float


def lambda_r(box: BoxSpec, d: int, p: int, rng: np.random.Generator, n: int = 200_000, m=1):
    """``vol(U^-_{r1}) vol(U^+_{r3}) int_{Z_{r2}} rho`` by Monte-Carlo in exponential coordinates."""
    nu = d - 1

    mf = abs(float(Fraction(m)))

    def ball_volume(r, to_matrix, stretch):
        # |log u|_F = stretch * |s| in these coordinates; sample a slightly larger box
        half = 1.05 * r / stretch
        S = rng.uniform(-half, half, size=(n, nu))
        inside = np.array([np.linalg.norm(unipotent_log(to_matrix(s)), "fro") < r for s in S])
        frac = inside.mean()
        vol = (2 * half) ** nu
        return vol * frac, vol * math.sqrt(frac * (1 - frac) / n)

    vm, em = ball_volume(box.r1, lambda s: horospherical(s, p), math.sqrt(2))
    vp, ep = ball_volume(box.r3, lambda s: involution(horospherical(s, p), m), 2 * math.sqrt(2) / mf)

    zb = centralizer_basis(d, p)
    norms = np.array([np.linalg.norm(B, "fro") for B in zb])
    half = box.r2 / norms
    C = rng.uniform(-half, half, size=(n, len(zb)))
    vals = np.zeros(n)
    for i, c in enumerate(C):
        if math.sqrt(float(np.sum((c * norms) ** 2))) >= box.r2:
            continue
        X = sum(ci * B for ci, B in zip(c, zb))
        z = linalg.expm(X)
        vals[i] = rho(z, p, m) * _haar_density(X, zb[1:])
    vol = float(np.prod(2 * half))
    zi = vol * vals.mean()
    ze = vol * vals.std() / math.sqrt(n)
    value = vm * vp * zi
    rel = math.sqrt((em / vm) ** 2 + (ep / vp) ** 2 + (ze / zi) ** 2) if vm and vp and zi else 0.0
    return LambdaEstimate(value, vm, vp, zi, value * rel)


# --------------------------------------------------------------------------
# integral points of the group in a box
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaCount:
    t: float
    count: int
    lower_bound: bool
    entry_bound: int


def derived_entry_bound(form: QuadraticForm, box: BoxSpec) -> int:
    F = hyperbolic_basis(form).as_array()
    k = np.linalg.norm(F, 2) * np.linalg.norm(np.linalg.inv(F), 2)
    return int(math.ceil(k * math.exp(box.r1 + box.r2 + box.r3 + box.t))) + 1


def isotropic_ternary(N: float) -> np.ndarray:
    """All nonzero integer ``(x, y, z)`` with ``x^2 + y^2 = z^2`` and Euclidean norm ``<= N``."""
    zmax = math.floor(N / math.sqrt(2))
    out = []
    for c in range(1, zmax + 1):
        out += [(c, 0, c), (0, c, c)]
    mm = 2
    while mm * mm + 1 <= zmax:
        for nn in range(1, mm):
            if (mm - nn) % 2 == 0 or math.gcd(mm, nn) != 1:
                continue
            a, b, c = mm * mm - nn * nn, 2 * mm * nn, mm * mm + nn * nn
            if c > zmax:
                break
            for k in range(1, zmax // c + 1):
                out += [(k * a, k * b, k * c), (k * b, k * a, k * c)]
        mm += 1
    base = np.array(out, dtype=np.int64).reshape(-1, 3)
    rows = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                rows.append(base * np.array([sx, sy, sz]))
    allv = np.unique(np.concatenate(rows), axis=0)
    return allv


def _box_acceptor(F, Fi, box: BoxSpec, p: int, m, d: int):
    n = d + 1
    lam_cap = box.r2 / math.sqrt(2)
    s_cap = box.r1 / math.sqrt(2)

    def accept(gamma: np.ndarray) -> bool:
        g = Fi @ gamma.astype(float) @ F
        if g[0, 0] <= 0:
            return False
        if abs(math.log(g[0, 0]) - box.t) >= lam_cap:
            return False
        if np.linalg.norm(g[1:d, 0] / g[0, 0]) >= s_cap:
            return False
        try:
            dec = decompose_uzu(g, p, m, chart=None, tol=1e-7)
        except ValueError:
            return False
        z = dec.z @ flow(-box.t, n)
        if np.any(np.linalg.eigvals(z[1:d, 1:d]).real <= 0):
            return False
        return (distance(dec.u_minus) < box.r1 and distance(z) < box.r2
                and distance(dec.u_plus) < box.r3)

    return accept


def gamma_in_box(form: QuadraticForm, box: BoxSpec, entry_bound: int | None = None,
                 m=1) -> GammaCount:
    """Count integral ``gamma`` with ``gamma^T A gamma = A`` whose f-coordinate
    matrix lies in ``U^-_{r1} Z_{r2} a_t U^+_{r3}``.

    For ``x^2 + y^2 - z^2`` the images of the lattice basis ``f_1, e_2, 2 f_3``
    are chosen in turn: two isotropic vectors, then the unit vector orthogonal
    to both.  Other forms use backtracking over standard columns, last column
    first, each drawn from the integral points of ``Q = A_ii``.
    """
    if form.dim > 4:
        raise ValueError("group enumeration is limited to dimension <= 4")
    if not form.is_diagonal or not form.is_integral:
        raise ValueError("group enumeration expects an integral diagonal form")
    A = np.array(form.integer_gram(), dtype=np.int64)
    n = form.dim
    d = n - 1
    basis = hyperbolic_basis(form)
    F, Fi = basis.as_array(), basis.inverse_array()
    p = basis.p
    need = derived_entry_bound(form, box)
    E = need if entry_bound is None else int(entry_bound)
    accept = _box_acceptor(F, Fi, box, p, m, d)
    if np.array_equal(A, np.diag([1, 1, -1])):
        count = _gamma_ternary(A, F, Fi, box, E, accept)
    else:
        count = _gamma_columns(form, A, E, accept)
    return GammaCount(box.t, count, E < need, E)


def _gamma_ternary(A, F, Fi, box: BoxSpec, E: int, accept) -> int:
    iso = isotropic_ternary(E * math.sqrt(2))
    iso = iso[np.abs(iso).max(axis=1) <= E * 2]
    # gamma f_1 has f-coordinates e^t lambda (1, s, *): prefilter on them
    co = iso.astype(float) @ Fi.T
    lam_cap = box.r2 / math.sqrt(2)
    pos = co[:, 0] > 0
    lead = np.where(pos, co[:, 0], 1.0)
    ok1 = pos & (np.abs(np.log(lead) - box.t) < lam_cap) & (np.abs(co[:, 1] / lead) < box.r1 / math.sqrt(2))
    firsts = iso[ok1]
    count = 0
    for y1 in firsts:
        y2s = iso[(iso @ (A @ y1)) == 2]
        y2s = y2s[((y2s + y1) % 2 == 0).all(axis=1)]
        for y2 in y2s:
            c1 = (y1 + y2) // 2
            c3 = (y1 - y2) // 2
            w = np.cross(A @ c1, A @ c3)
            q = int(w @ A @ w)
            k = math.isqrt(q) if q > 0 else 0
            if k == 0 or k * k != q or np.any(w % k):
                continue
            for sign in (1, -1):
                gamma = np.column_stack([c1, sign * (w // k), c3])
                if np.array_equal(gamma.T @ A @ gamma, A):
                    count += accept(gamma)
    return count


def _gamma_columns(form: QuadraticForm, A, E: int, accept) -> int:
    n = form.dim
    reps: dict[int, np.ndarray] = {}
    for val in sorted({int(A[i, i]) for i in range(n)}):
        reps[val] = points_all(QuadraticForm.diagonal([int(a) for a in np.diag(A)], val), E)
    order = [n - 1, 0, *range(1, n - 1)]
    cols = np.zeros((n, n), dtype=np.int64)
    count = 0

    def extend(level: int):
        nonlocal count
        if level == n:
            count += accept(cols)
            return
        i = order[level]
        cand = reps[int(A[i, i])]
        for j in order[:level]:
            if len(cand) == 0:
                return
            cand = cand[cand @ (A @ cols[:, j]) == 0]
        for c in cand:
            cols[:, i] = c
            extend(level + 1)
        cols[:, i] = 0

    extend(0)
    return count
