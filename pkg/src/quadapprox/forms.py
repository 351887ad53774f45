"""Exact rational quadratic forms and their hyperbolic normal form.

A form is stored by its symmetric Gram matrix over ``Fraction`` so that
``Q(x) = x^T G x``.  The polar form is ``B(x, y) = x^T G y``, hence
``B(x, x) = Q(x)``.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

Rational = Fraction
Matrix = tuple[tuple[Fraction, ...], ...]


class FormError(ValueError):
    """Raised for malformed, degenerate or unsupported forms."""


def as_fraction(value) -> Fraction:
    """Parse ints, Fractions, ``"p/q"`` strings and finite floats exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise FormError(f"not a rational: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise FormError(f"not a finite rational: {value!r}")
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError as exc:
            raise FormError(f"cannot parse rational {value!r}") from exc
    raise FormError(f"not a rational: {value!r}")


def format_fraction(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def _as_matrix(rows: Iterable[Iterable]) -> Matrix:
    return tuple(tuple(as_fraction(a) for a in row) for row in rows)


def inertia(gram: Sequence[Sequence[Fraction]]) -> tuple[int, int, int]:
    """Return ``(n_plus, n_minus, n_zero)`` of a symmetric rational matrix.

    Symmetric Gaussian elimination by congruences.  A zero diagonal with a
    nonzero off-diagonal entry is repaired by adding row/column ``j`` to
    ``k``, which makes the pivot ``2 a_kj``.
    """
    a = [[as_fraction(x) for x in row] for row in gram]
    n = len(a)
    plus = minus = 0
    for k in range(n):
        if a[k][k] == 0:
            j = next((j for j in range(k + 1, n) if a[j][j] != 0), None)
            if j is not None:
                a[k], a[j] = a[j], a[k]
                for row in a:
                    row[k], row[j] = row[j], row[k]
            else:
                j = next((j for j in range(k + 1, n) if a[k][j] != 0), None)
                if j is None:
                    continue
                for c in range(n):
                    a[k][c] += a[j][c]
                for r in range(n):
                    a[r][k] += a[r][j]
        piv = a[k][k]
        if piv == 0:
            continue
        if piv > 0:
            plus += 1
        else:
            minus += 1
        for r in range(k + 1, n):
            f = a[r][k] / piv
            if f:
                for c in range(k, n):
                    a[r][c] -= f * a[k][c]
        for r in range(k + 1, n):
            a[k][r] = Fraction(0)
            a[r][k] = Fraction(0)
    return plus, minus, n - plus - minus


def determinant(gram: Sequence[Sequence[Fraction]]) -> Fraction:
    a = [[as_fraction(x) for x in row] for row in gram]
    n = len(a)
    det = Fraction(1)
    for k in range(n):
        p = next((r for r in range(k, n) if a[r][k] != 0), None)
        if p is None:
            return Fraction(0)
        if p != k:
            a[k], a[p] = a[p], a[k]
            det = -det
        det *= a[k][k]
        for r in range(k + 1, n):
            f = a[r][k] / a[k][k]
            if f:
                for c in range(k, n):
                    a[r][c] -= f * a[k][c]
    return det


@dataclass(frozen=True)
class QuadraticForm:
    """Nondegenerate indefinite rational quadratic form ``Q`` and target ``m``.

    The variety under study is ``X = {Q = m}`` in ``R^(d+1)``.
    """

    gram: Matrix
    m: Fraction
    signature: tuple[int, int] = field(init=False)

    def __post_init__(self):
        gram = _as_matrix(self.gram)
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "m", as_fraction(self.m))
        n = len(gram)
        if n < 2 or any(len(row) != n for row in gram):
            raise FormError("gram must be a square matrix of size >= 2")
        for i in range(n):
            for j in range(i + 1, n):
                if gram[i][j] != gram[j][i]:
                    raise FormError(f"gram is not symmetric at ({i}, {j})")
        if self.m == 0:
            raise FormError("m must be nonzero")
        plus, minus, zero = inertia(gram)
        if zero:
            raise FormError("degenerate form")
        if plus == 0 or minus == 0:
            raise FormError(f"form is definite, signature ({plus}, {minus})")
        object.__setattr__(self, "signature", (plus, minus))

    @classmethod
    def diagonal(cls, entries: Sequence, m=1) -> "QuadraticForm":
        n = len(entries)
        gram = [[as_fraction(entries[i]) if i == j else Fraction(0)
                 for j in range(n)] for i in range(n)]
        return cls(gram, m)

    @classmethod
    def from_dict(cls, spec: dict) -> "QuadraticForm":
        """Build from ``{"diag": [...], "m": "p/q"}`` or ``{"gram": [[...]], "m": ...}``."""
        m = spec.get("m", 1)
        if "diag" in spec:
            return cls.diagonal(spec["diag"], m)
        if "gram" in spec:
            return cls(spec["gram"], m)
        raise FormError("form spec needs a 'diag' or 'gram' entry")

    @classmethod
    def from_json(cls, text: str) -> "QuadraticForm":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        if self.is_diagonal:
            return {"diag": [format_fraction(self.gram[i][i]) for i in range(self.dim)],
                    "m": format_fraction(self.m)}
        return {"gram": [[format_fraction(a) for a in row] for row in self.gram],
                "m": format_fraction(self.m)}

    @property
    def dim(self) -> int:
        return len(self.gram)

    @property
    def d(self) -> int:
        return self.dim - 1

    @property
    def has_dichotomy_dimension(self) -> bool:
        """Whether ``d >= 3``, needed for the counting dichotomy."""
        return self.d >= 3

    def require_dichotomy_dimension(self) -> None:
        if not self.has_dichotomy_dimension:
            raise FormError(f"operation requires d >= 3, got d = {self.d}")

    @property
    def is_diagonal(self) -> bool:
        return all(self.gram[i][j] == 0
                   for i in range(self.dim) for j in range(self.dim) if i != j)

    @property
    def is_integral(self) -> bool:
        return (self.m.denominator == 1
                and all(a.denominator == 1 for row in self.gram for a in row))

    def integer_gram(self) -> list[list[int]]:
        if not all(a.denominator == 1 for row in self.gram for a in row):
            raise FormError("gram has non-integer entries")
        return [[int(a) for a in row] for row in self.gram]

    def gram_float(self):
        import numpy as np
        return np.array([[float(a) for a in row] for row in self.gram])


def _check_len(form: QuadraticForm, *vectors) -> None:
    for v in vectors:
        if len(v) != form.dim:
            raise FormError(f"vector of length {len(v)} for form of dimension {form.dim}")


def evaluate(form: QuadraticForm, x: Sequence) -> Fraction:
    """``Q(x) = x^T G x`` computed exactly."""
    return bilinear(form, x, x)


def bilinear(form: QuadraticForm, x: Sequence, y: Sequence) -> Fraction:
    """Polar form ``B(x, y) = x^T G y``; ``B(x, x) = Q(x)``."""
    _check_len(form, x, y)
    xs = [as_fraction(a) for a in x]
    ys = [as_fraction(a) for a in y]
    total = Fraction(0)
    for i, row in enumerate(form.gram):
        if xs[i] == 0:
            continue
        acc = Fraction(0)
        for j, g in enumerate(row):
            if g and ys[j]:
                acc += g * ys[j]
        total += xs[i] * acc
    return total


def signature(form_or_gram) -> tuple[int, int]:
    gram = form_or_gram.gram if isinstance(form_or_gram, QuadraticForm) else form_or_gram
    plus, minus, zero = inertia(gram)
    if zero:
        raise FormError("degenerate form")
    return plus, minus


@dataclass(frozen=True)
class HyperbolicBasis:
    """Columns ``f_1..f_{d+1}`` with ``Q(sum c_i f_i) = 2 c_1 c_{d+1} + c_2^2 + ... - c_d^2``.

    ``p`` counts the plus signs of the normal form, so the middle block has
    ``p - 1`` entries ``+1`` followed by ``d - p`` entries ``-1``.
    """

    columns: Matrix
    p: int

    @property
    def dim(self) -> int:
        return len(self.columns)

    def column(self, i: int) -> tuple[Fraction, ...]:
        """``f_{i+1}`` as a vector (0-based ``i``)."""
        return tuple(row[i] for row in self.columns)

    @property
    def f1(self) -> tuple[Fraction, ...]:
        return self.column(0)

    @property
    def f_last(self) -> tuple[Fraction, ...]:
        return self.column(self.dim - 1)

    def to_standard(self, coeffs: Sequence) -> tuple[Fraction, ...]:
        c = [as_fraction(a) for a in coeffs]
        return tuple(sum((row[j] * c[j] for j in range(self.dim)), Fraction(0))
                     for row in self.columns)

    def inverse(self) -> Matrix:
        return _invert(self.columns)

    def to_f_coords(self, x: Sequence) -> tuple[Fraction, ...]:
        inv = self.inverse()
        xs = [as_fraction(a) for a in x]
        return tuple(sum((row[j] * xs[j] for j in range(self.dim)), Fraction(0))
                     for row in inv)

    def as_array(self):
        import numpy as np
        return np.array([[float(a) for a in row] for row in self.columns])

    def inverse_array(self):
        import numpy as np
        return np.array([[float(a) for a in row] for row in self.inverse()])


def normal_form_gram(dim: int, p: int) -> Matrix:
    """Gram matrix of ``2 x_1 x_{d+1} + x_2^2 + ... + x_p^2 - ... - x_d^2``."""
    one, zero = Fraction(1), Fraction(0)
    rows = [[zero] * dim for _ in range(dim)]
    rows[0][dim - 1] = rows[dim - 1][0] = one
    for i in range(1, dim - 1):
        rows[i][i] = one if i < p else -one
    return tuple(tuple(r) for r in rows)


def congruence(form: QuadraticForm, basis_columns: Matrix) -> Matrix:
    """``F^T G F``."""
    n = form.dim
    cols = [tuple(row[j] for row in basis_columns) for j in range(n)]
    return tuple(tuple(bilinear(form, cols[i], cols[j]) for j in range(n)) for i in range(n))


@functools.lru_cache(maxsize=64)
def _invert(mat: Matrix) -> Matrix:
    n = len(mat)
    a = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(mat)]
    for k in range(n):
        p = next((r for r in range(k, n) if a[r][k] != 0), None)
        if p is None:
            raise FormError("singular matrix")
        a[k], a[p] = a[p], a[k]
        piv = a[k][k]
        a[k] = [x / piv for x in a[k]]
        for r in range(n):
            if r != k and a[r][k] != 0:
                f = a[r][k]
                a[r] = [x - f * y for x, y in zip(a[r], a[k])]
    return tuple(tuple(row[n:]) for row in a)


def _rational_sqrt(q: Fraction) -> Fraction | None:
    if q < 0:
        return None
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


def find_isotropic_vector(form: QuadraticForm, bound: int = 6) -> tuple[int, ...] | None:
    """Smallest-sup-norm nonzero integer vector with ``Q(x) = 0``, or ``None``.

    Plain brute force over ``[-bound, bound]^(d+1)``; for larger searches
    supply the isotropic pair directly.
    """
    for b in range(1, bound + 1):
        rng = range(-b, b + 1)
        for x in itertools.product(rng, repeat=form.dim):
            if max(abs(a) for a in x) != b:
                continue
            if evaluate(form, x) == 0:
                return x
    return None


def hyperbolic_basis(form: QuadraticForm, pair: tuple[Sequence, Sequence] | None = None,
                     search_bound: int = 0) -> HyperbolicBasis:
    """Build the hyperbolic basis.

    Diagonal ``+-1`` forms use ``f_1 = e_+ + e_-``, ``f_{d+1} = (e_+ - e_-)/2``
    for the first plus and first minus axes; the remaining axes follow in
    ascending index, plus axes first.  Any other form needs ``pair`` (an
    isotropic ``f_1`` and a partner with ``B(f_1, partner) != 0``), or a
    positive ``search_bound`` for a brute-force isotropic search.
    """
    n = form.dim
    diag = [form.gram[i][i] for i in range(n)]
    if pair is None and form.is_diagonal and all(abs(a) == 1 for a in diag):
        plus_axes = [i for i in range(n) if diag[i] == 1]
        minus_axes = [i for i in range(n) if diag[i] == -1]
        ip, im = plus_axes[0], minus_axes[0]
        half = Fraction(1, 2)

        def unit(i, scale=Fraction(1)):
            return [scale if k == i else Fraction(0) for k in range(n)]

        f1 = [a + b for a, b in zip(unit(ip), unit(im))]
        f_last = [half * (a - b) for a, b in zip(unit(ip), unit(im))]
        middle = [unit(i) for i in plus_axes[1:]] + [unit(i) for i in minus_axes[1:]]
        cols = [f1] + middle + [f_last]
        p = len(plus_axes)
        return _finish_basis(form, cols, p)

    if pair is None:
        if search_bound <= 0:
            raise FormError("non-diagonal or non-unit form: supply an isotropic pair")
        iso = find_isotropic_vector(form, search_bound)
        if iso is None:
            raise FormError(f"no isotropic vector with entries <= {search_bound}")
        partner = next((e for e in _standard_basis(n) if bilinear(form, iso, e) != 0), None)
        if partner is None:
            raise FormError("isotropic vector lies in the radical")
        pair = (iso, partner)

    f1 = [as_fraction(a) for a in pair[0]]
    g = [as_fraction(a) for a in pair[1]]
    _check_len(form, f1, g)
    if all(a == 0 for a in f1) or evaluate(form, f1) != 0:
        raise FormError("first vector of the pair is not isotropic")
    b = bilinear(form, f1, g)
    if b == 0:
        raise FormError("pair is not hyperbolic: B(f1, partner) = 0")
    fp = [a / b for a in g]
    alpha = evaluate(form, fp) / 2
    f_last = [a - alpha * c for a, c in zip(fp, f1)]

    # Orthogonal complement of the hyperbolic plane, then rational Gram-Schmidt.
    comp = []
    for e in _standard_basis(n):
        w = [a - bilinear(form, e, f_last) * c1 - bilinear(form, e, f1) * c2
             for a, c1, c2 in zip(e, f1, f_last)]
        for u in comp:
            qu = evaluate(form, u)
            if qu != 0:
                coef = bilinear(form, w, u) / qu
                w = [a - coef * c for a, c in zip(w, u)]
        if any(a != 0 for a in w) and evaluate(form, w) != 0:
            comp.append(w)
        if len(comp) == n - 2:
            break
    if len(comp) != n - 2:
        raise FormError("could not complete an orthogonal basis of the complement")
    pos, neg = [], []
    for w in comp:
        q = evaluate(form, w)
        r = _rational_sqrt(abs(q))
        if r is None:
            raise FormError(f"complement vector with Q = {q} cannot be normalised over Q")
        (pos if q > 0 else neg).append([a / r for a in w])
    cols = [f1] + pos + neg + [f_last]
    return _finish_basis(form, cols, 1 + len(pos))


def _standard_basis(n: int):
    return [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]


def _finish_basis(form: QuadraticForm, cols: list[list[Fraction]], p: int) -> HyperbolicBasis:
    n = form.dim
    columns = tuple(tuple(cols[j][i] for j in range(n)) for i in range(n))
    basis = HyperbolicBasis(columns, p)
    if congruence(form, columns) != normal_form_gram(n, p):
        raise FormError("internal error: basis does not realise the normal form")
    return basis


def check_basis(form: QuadraticForm, basis: HyperbolicBasis) -> bool:
    return congruence(form, basis.columns) == normal_form_gram(form.dim, basis.p)


def normal_form_value(basis: HyperbolicBasis, c: Sequence) -> Fraction:
    """``2 c_1 c_{d+1} + sum_{i=2}^{p} c_i^2 - sum_{i=p+1}^{d} c_i^2``."""
    cs = [as_fraction(a) for a in c]
    n = len(cs)
    total = 2 * cs[0] * cs[-1]
    for i in range(1, n - 1):
        total += cs[i] ** 2 if i < basis.p else -cs[i] ** 2
    return total
