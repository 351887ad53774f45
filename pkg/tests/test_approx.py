import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadapprox.approx import (
    Constant,
    CuspSpec,
    Direction,
    LogPower,
    PowerLaw,
    Tabulated,
    boundary_direction,
    boundary_from_spheres,
    cusp_member,
    decide,
    rational_obstruction_certificate,
    pell_summary,
    pell_witnesses,
    projection_distortion,
    parse_psi,
    pell_solutions,
    quasiconformal_check,
    radial_project,
    sample_boundary,
    sample_boundary_many,
)
from quadapprox.forms import QuadraticForm, hyperbolic_basis

Q31 = QuadraticForm.diagonal([1, 1, 1, -1], 1)
V_DIAG = Direction([1 / math.sqrt(2), 0, 0, 1 / math.sqrt(2)])


def test_psi_examples():
    assert PowerLaw(1, 1)(2) == pytest.approx(0.5, rel=1e-15)
    assert Constant(0.3)(1e6) == pytest.approx(0.3, rel=1e-15)
    assert PowerLaw(2, 0)(7) == pytest.approx(2.0, rel=1e-15)
    # eps / (t log(e + t)^a) at t = 1, a = 1
    assert LogPower(1, 1)(1.0) == pytest.approx(1 / math.log(math.e + 1), rel=1e-13)


def test_psi_log_space_far_out():
    # t = e^1000 overflows floats but log psi stays exact
    assert PowerLaw(1, 1).log_psi(1000.0) == pytest.approx(-1000.0)
    assert LogPower(1, 1).log_psi(1000.0) == pytest.approx(-1000.0 - math.log(1000.0), rel=1e-12)


def test_psi_rejects_nonpositive():
    with pytest.raises(ValueError):
        PowerLaw(1, 1)(0.0)
    with pytest.raises(ValueError):
        PowerLaw(0, 1)
    with pytest.raises(ValueError):
        Tabulated((1, 1), (1, 1))


def test_parse_psi():
    assert parse_psi("powerlaw:eps=0.5,s=1") == PowerLaw(0.5, 1)
    assert parse_psi("logpower:eps=1,a=0.5") == LogPower(1, 0.5)
    assert parse_psi("const:eps=0.1") == Constant(0.1)
    tab = parse_psi("tabulated:1=1;10=0.1;100=0.01")
    assert tab(10) == pytest.approx(0.1)
    assert tab(1000) == pytest.approx(0.001)
    with pytest.raises(ValueError):
        parse_psi("nonsense:eps=1")


@pytest.mark.parametrize("psi, bound", [
    (PowerLaw(1, 1), 2.0),
    (Constant(0.4), 1.0),
    (PowerLaw(1, 1.5), 2 ** 1.5),
    (LogPower(1, 0.5), 2 * (1 + math.log(2)) ** 0.5),
    (Tabulated((1, 10, 100), (1, 0.5, 0.005)), 2.0 ** 2),
])
def test_quasiconformal_check(psi, bound):
    worst = quasiconformal_check(psi)
    assert worst <= bound * (1 + 1e-12)
    if isinstance(psi, Constant):
        assert worst == pytest.approx(1.0)
    if isinstance(psi, PowerLaw):
        assert worst == pytest.approx(2 ** psi.s, rel=1e-9)  # attained at h = 1/2


def test_radial_project():
    assert np.allclose(radial_project([3, 0, 0, 4]).v, [0.6, 0, 0, 0.8])
    assert np.allclose(radial_project([1, 1, 0, 1]).v, np.array([1, 1, 0, 1]) / math.sqrt(3))
    with pytest.raises(ValueError):
        radial_project([0, 0, 0, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=6).filter(
    lambda x: np.linalg.norm(x) > 1e-3))
def test_radial_project_idempotent(x):
    v = radial_project(x)
    assert np.allclose(radial_project(v.v).v, v.v, atol=1e-15)


def test_cusp_member_examples():
    x = (1, 1, 0, 1)
    on_ray = CuspSpec(radial_project(x), PowerLaw(1e-6, 3))
    assert cusp_member(on_ray, x)
    # |pi(x) - v| = sqrt(2 - 2/sqrt(6)) ~ 0.606 against psi(sqrt 3) ~ 0.577
    err = math.sqrt(2 - 2 * (2 / math.sqrt(6)))
    assert err == pytest.approx(0.6058, abs=1e-4)
    assert 1 / math.sqrt(3) < err
    assert not cusp_member(CuspSpec(V_DIAG, PowerLaw(1, 1)), x)
    # the cone is wide enough with eps = 1.1
    assert cusp_member(CuspSpec(V_DIAG, PowerLaw(1.1, 1)), x)


def test_cusp_member_d_t_window():
    basis = hyperbolic_basis(Q31)
    spec = CuspSpec(radial_project(basis.f1), Constant(10.0), "D_T", T=100.0, basis=basis)
    # p(x) = |f_1 coefficient| * |f_1| = (5/4) sqrt 2 for w_0
    assert not cusp_member(spec, (Fr(5, 4), 0, 0, Fr(3, 4)))
    near = CuspSpec(radial_project(basis.f1), Constant(10.0), "D_T", T=1.0, basis=basis)
    assert cusp_member(near, (Fr(5, 4), 0, 0, Fr(3, 4)))
    with pytest.raises(ValueError):
        CuspSpec(V_DIAG, Constant(1.0), "D_T")


def test_cusp_member_c_t_window():
    x = (1, 1, 0, 1)
    spec = CuspSpec(radial_project(x), Constant(0.1), "C_T", T=2.0)
    assert not cusp_member(spec, x)
    assert cusp_member(CuspSpec(radial_project(x), Constant(0.1), "C_T", T=1.7), x)


def test_guard_band_redecides_ties():
    # float says |e2 - e1| == sqrt(2) exactly; the stored eps is the double
    # nearest sqrt 2, which exceeds the true value, so the point is strictly inside
    psi = Constant(math.sqrt(2))
    pts = np.array([[0, 1, 0, 0]], dtype=np.int64)
    v = np.array([1.0, 0, 0, 0])
    assert float(np.linalg.norm(pts[0] - v)) == psi.eps
    assert decide(pts, v, psi, strict=True)[0]
    below = Constant(math.nextafter(math.sqrt(2), 0))
    assert not decide(pts, v, below, strict=True)[0]


def test_boundary_direction_examples():
    v = boundary_from_spheres(Q31, [1, 0, 0], [1])
    assert np.allclose(v.v, [1 / math.sqrt(2), 0, 0, 1 / math.sqrt(2)])
    assert v.check_boundary(Q31)
    with pytest.raises(ValueError):
        boundary_direction(Q31, [1, 0, 0, 0])


def test_sampler_invariants():
    rng = np.random.Generator(np.random.Philox(7))
    V = sample_boundary_many(Q31, rng, 10_000)
    assert np.max(np.abs(np.einsum("ij,j,ij->i", V, [1, 1, 1, -1], V))) <= 1e-12
    assert np.max(np.abs(np.linalg.norm(V, axis=1) - 1)) <= 1e-12
    v = sample_boundary(Q31, rng)
    assert v.boundary and v.check_boundary(Q31, 1e-12)


@pytest.mark.parametrize("signs", [[1, 1, 1, -1], [1, 1, -1, -1]])
def test_sampler_mean_statistics(signs):
    form = QuadraticForm.diagonal(signs, 1)
    n = 100_000
    V = sample_boundary_many(form, np.random.Generator(np.random.Philox(11)), n)
    mean = V.mean(axis=0)
    for i, s in enumerate(signs):
        k = signs.count(s)
        sigma = math.sqrt(1 / (2 * k) / n)  # each axis of (u or w)/sqrt 2 has variance 1/(2k)
        assert abs(mean[i]) <= 3 * sigma
    q = signs.count(-1)
    if q == 1:
        # the lone minus coordinate takes only the values +-1/sqrt 2
        assert np.allclose(np.abs(V[:, 3]), 1 / math.sqrt(2))


def test_pell_solutions():
    assert pell_solutions(1) == [(8, 3)]
    assert pell_solutions(2) == [(8, 3), (127, 48)]
    assert pell_solutions(3)[2] == (2024, 765)
    sols = pell_solutions(50)
    assert all(k * k - 7 * l * l == 1 for k, l in sols)
    ratio = sols[5][0] / sols[4][0]
    assert abs(ratio - (8 + 3 * math.sqrt(7))) < 1e-6
    with pytest.raises(ValueError):
        pell_solutions(0)
    with pytest.raises(ValueError):
        pell_solutions(3, fundamental=(8, 2))


def test_pell_witnesses():
    passing = pell_witnesses(0.8, 12)
    assert all(w.variety_ok for w in passing)
    assert all(w.ok for w in passing)
    failing = pell_witnesses(0.7, 12)
    assert not any(w.approx_ok for w in failing)
    # scaled error 4l / (k + sqrt7 l) tends to 2/sqrt 7 from below
    errs = [w.scaled_error for w in passing]
    assert errs[-1] == pytest.approx(2 / math.sqrt(7), rel=1e-12)
    assert all(e < 2 / math.sqrt(7) for e in errs[:5])
    assert errs == sorted(errs)


def test_pell_witnesses_higher_dimension_and_summary():
    ws = pell_witnesses(0.8, 5, d=4)
    assert all(w.x[2:] == (0, 0) and w.variety_ok for w in ws)
    s = pell_summary(0.7, 10)
    assert s["fail_from"] == 1 and s["pass_from"] is None
    assert pell_summary(0.8, 10)["pass_from"] == 1


def test_rational_obstruction_certificate():
    rep = rational_obstruction_certificate([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
                               [Fr(3, 5), Fr(4, 5), 0, 0], 200)
    assert rep.k == 5 and rep.epsilon == Fr(1, 5)
    assert rep.ok and rep.candidates > 0
    integral = rational_obstruction_certificate([[1, 0], [0, 1]], [1, 0], 20)
    assert integral.epsilon == 1 and integral.ok
    with pytest.raises(ValueError):
        rational_obstruction_certificate([[1, 0], [0, 1]], [1, 1], 5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_distortion_bound(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(4, 4))
    v = rng.normal(size=4)
    v /= np.linalg.norm(v)
    x = v + rng.normal(scale=rng.uniform(1e-3, 1), size=4)
    x *= rng.uniform(0.1, 100)
    lhs, rhs = projection_distortion(g, x, v)
    assert lhs <= rhs * (1 + 1e-12) + 1e-15
