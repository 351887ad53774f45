import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadapprox.approx import Constant, CuspSpec, LogPower, PowerLaw, Tabulated, cusp_member, \
    radial_project
from quadapprox.forms import QuadraticForm, evaluate, hyperbolic_basis
from quadapprox.geometry import (
    CoordinateRegion,
    FlowElement,
    HorosphericalElement,
    cusp_volume,
    divergence_classifier,
    exceptional_tail,
    flow,
    horospherical,
    invert_parametrization,
    normal_gram,
    parametrize,
    parametrize_exact,
    region_mask,
    region_member,
    region_volume,
    region_volume_exact,
    region_volume_mc,
    region_volume_radial,
    sandwich_constant,
    unit_ball_volume,
)
from quadapprox.lattice_points import points_all

Q31 = QuadraticForm.diagonal([1, 1, 1, -1], 1)
B31 = hyperbolic_basis(Q31)


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def test_unit_ball_volume():
    assert unit_ball_volume(0) == 1
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_parametrize_examples():
    assert np.allclose(parametrize(0, [0, 0], B31, 1), [1.25, 0, 0, 0.75], atol=1e-15)
    assert np.allclose(parametrize(math.log(2), [0, 0], B31, 1), [2 + 1 / 8, 0, 0, 2 - 1 / 8])
    assert np.allclose(parametrize(0, [1, 0], B31, 1), [1, 1, 0, 1], atol=1e-15)
    assert parametrize_exact(1, [0, 0], B31, 1) == (Fr(5, 4), 0, 0, Fr(3, 4))


def test_invert_examples():
    w0 = invert_parametrization([1.25, 0, 0, 0.75], B31, 1)
    assert w0.t == pytest.approx(0, abs=1e-15) and np.allclose(w0.s, 0)
    x = parametrize(1.3, [0.2, -0.4], B31, 1)
    back = invert_parametrization(x, B31, 1)
    assert back.t == pytest.approx(1.3, abs=1e-12)
    assert np.allclose(back.s, [0.2, -0.4], atol=1e-12)
    with pytest.raises(ValueError):
        invert_parametrization([0, 1, 0, 0], B31, 1)  # f_1 coefficient 0
    with pytest.raises(ValueError):
        invert_parametrization([1, 0, 0, 0], B31, 2)  # Q(x) != m


@settings(max_examples=100, deadline=None)
@given(t=st.floats(-3, 20), s=st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       m=st.sampled_from([1, -1, 3, Fr(1, 2)]))
def test_parametrize_on_level_set(t, s, m):
    x = parametrize(t, s, B31, m)
    q = x[0] ** 2 + x[1] ** 2 + x[2] ** 2 - x[3] ** 2
    assert abs(q - float(m)) <= 1e-10 * max(1.0, float(x @ x))
    back = invert_parametrization(x, B31, m)
    # the f_1 coefficient is recovered by cancellation, relative to |x|
    cond = max(1.0, float(np.linalg.norm(x)) / math.exp(t))
    assert back.t == pytest.approx(t, abs=1e-14 * cond + 1e-12)


@settings(max_examples=100, deadline=None)
@given(et=st.fractions(min_value=Fr(1, 30), max_value=50, max_denominator=30),
       s=st.lists(st.fractions(-20, 20, max_denominator=30), min_size=2, max_size=2),
       m=st.sampled_from([1, -2, Fr(3, 7)]))
def test_chart_consistency_exact(et, s, m):
    x = parametrize_exact(et, s, B31, m)
    c = B31.to_f_coords(x)
    assert c[0] == et and list(c[1:3]) == s
    assert c[3] == (Fr(m) - s[0] ** 2 - s[1] ** 2) / (2 * et)
    assert evaluate(Q31, x) == m


def test_region_examples():
    reg = CoordinateRegion(0.0, Constant(10.0), 3, 3, 1.0)
    assert reg.level == pytest.approx(10.0)
    assert region_member(reg, [0, 0])
    small = CoordinateRegion(1.0, PowerLaw(1, 1), 3, 3, 1.0)  # radius 1
    assert region_member(small, [0.6, 0.79])
    assert not region_member(small, [0.6, 0.80001])
    with pytest.raises(ValueError):
        region_member(small, [0.1, 0.1, 0.1])


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0.5, 8), eps=st.floats(0.05, 1.0), seed=st.integers(0, 2**31))
def test_region_reduces_to_ball_off_exceptional_set(t, eps, seed):
    reg = CoordinateRegion(t, PowerLaw(eps, 1.2), 4, 3, 1.0)
    if not reg.ball_formula_valid:
        return
    S = rng(seed).uniform(-1.2 * reg.radius, 1.2 * reg.radius, size=(2000, 3))
    ball = np.linalg.norm(S, axis=1) <= reg.radius
    assert np.array_equal(region_mask(reg, S), ball)


def test_region_volume_exact_examples():
    reg = CoordinateRegion(1.0, PowerLaw(0.7, 1), 3, 3, 1.0)  # radius 0.7
    assert region_volume_exact(reg) == pytest.approx(math.pi * 0.49)
    reg4 = CoordinateRegion(1.0, PowerLaw(1, 1), 4, 3, 1.0)  # radius 1
    assert region_volume_exact(reg4) == pytest.approx(4 * math.pi / 3)
    with pytest.raises(ValueError):
        region_volume_exact(CoordinateRegion(0.0, Constant(0.1), 3, 3, 1.0))  # exceptional


@pytest.mark.parametrize("t, psi, d, p", [
    (1.0, PowerLaw(0.7, 1), 3, 3),
    (2.0, Constant(0.3), 3, 2),
    (1.5, LogPower(1, 0.5), 4, 3),
    (3.0, PowerLaw(2.0, 1.3), 4, 2),
])
def test_region_volume_mc_matches_deterministic(t, psi, d, p):
    reg = CoordinateRegion(t, psi, d, p, 1.0)
    est, err = region_volume_mc(reg, rng(17), 200_000)
    exact, method = region_volume(reg)
    assert abs(est - exact) <= 3 * err
    assert abs(region_volume_radial(reg) - exact) <= 1e-8 * exact


@pytest.mark.parametrize("t, psi, d, p, m", [
    (0.2, Constant(0.8), 3, 3, 1.0),     # exceptional, both constraints active
    (0.3, Constant(1.0), 4, 2, -1.0),
    (-0.5, Constant(2.0), 3, 2, 1.0),
    (0.0, PowerLaw(3.0, 0.5), 4, 3, 2.0),
])
def test_radial_volume_matches_mc_in_exceptional_region(t, psi, d, p, m):
    reg = CoordinateRegion(t, psi, d, p, m)
    est, err = region_volume_mc(reg, rng(23), 400_000)
    assert abs(region_volume_radial(reg) - est) <= 3 * err + 1e-12


def test_region_volume_mc_deep_exceptional_is_zero():
    reg = CoordinateRegion(0.0, Constant(1e-3), 3, 3, 1.0)
    est, err = region_volume_mc(reg, rng(1), 10_000)
    assert est == 0.0
    with pytest.raises(ValueError):
        region_volume_mc(reg, rng(1), 10)


def test_cusp_volume_examples():
    # e^t psi(e^t) = 0.5 is constant and [1, 5] avoids the exceptional set
    assert cusp_volume(PowerLaw(0.5, 1), 1, 5, 3) == pytest.approx(math.pi * 0.25 * 4, rel=1e-8)
    got = cusp_volume(Constant(0.5), 1, 3, 3)
    assert got == pytest.approx(math.pi * 0.25 / 2 * (math.exp(6) - math.exp(2)), rel=1e-8)
    assert cusp_volume(PowerLaw(0.5, 1), 2, 2, 3) == 0.0
    with pytest.raises(ValueError):
        cusp_volume(PowerLaw(0.5, 1), 3, 2, 3)


def test_cusp_volume_across_exceptional_set():
    # below t = log 2 the region is the radial one; compare with direct integration
    from scipy import integrate
    psi = PowerLaw(0.5, 1)
    direct = integrate.quad(lambda t: region_volume(CoordinateRegion(t, psi, 3, 3, 1.0))[0],
                            0, 3, points=[math.log(2)], epsrel=1e-10)[0]
    assert cusp_volume(psi, 0, 3, 3) == pytest.approx(direct, rel=1e-6)


@pytest.mark.parametrize("psi, d, expected", [
    (PowerLaw(0.3, 1), 3, "divergent"),
    (PowerLaw(5, 1), 4, "divergent"),
    (PowerLaw(1, 1.01), 3, "convergent"),
    (PowerLaw(1, 2), 3, "convergent"),
    (Constant(0.1), 3, "divergent"),
    (LogPower(1, 1 / 2), 3, "divergent"),
    (LogPower(1, 1 / 3), 4, "divergent"),
    (LogPower(1, 2 / 2), 3, "convergent"),
    (LogPower(1, 2 / 3), 4, "convergent"),
    (Tabulated((1, 10), (1, 0.1)), 3, "divergent"),     # psi = 1/t
    (Tabulated((1, 10), (1, 0.01)), 3, "convergent"),   # psi = 1/t^2
])
def test_classifier(psi, d, expected):
    verdict = divergence_classifier(psi, d)
    if isinstance(psi, Tabulated) and expected == "divergent":
        # the boundary case grows only logarithmically: the heuristic may decline
        assert verdict.criterion in ("divergent", "inconclusive")
        assert verdict.rule.startswith("numeric")
    else:
        assert verdict.criterion == expected
    with pytest.raises(ValueError):
        divergence_classifier(psi, 2)


def test_classifier_numeric_fast_growth():
    verdict = divergence_classifier(Tabulated((1, 10), (1, 1)), 3)
    assert verdict.to_dict() == {"criterion": "divergent", "rule": verdict.rule}


@settings(max_examples=60, deadline=None)
@given(t=st.floats(-30, 30), t2=st.floats(-30, 30),
       s=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       s2=st.lists(st.floats(-5, 5), min_size=3, max_size=3), p=st.integers(1, 4))
def test_matrix_identities(t, t2, s, s2, p):
    d = 4
    G = normal_gram(d, p)
    a, ai = flow(t, d + 1), flow(-t, d + 1)
    u = horospherical(s, p)
    op = lambda M: np.linalg.norm(M, 2)
    assert op(a @ ai - np.eye(d + 1)) <= 1e-12
    assert op(u @ horospherical(-np.array(s), p) - np.eye(d + 1)) <= 1e-12 * max(1, op(u)) ** 2
    contracted = horospherical(math.exp(-t) * np.array(s), p)
    assert op(a @ u @ ai - contracted) <= 1e-12 * max(1.0, op(contracted))
    assert op(u.T @ G @ u - G) <= 1e-12 * max(1.0, op(u)) ** 2
    assert op(a.T @ G @ a - G) <= 1e-12 * op(a) ** 2
    prod = (FlowElement(t, d + 1) * FlowElement(t2, d + 1)).matrix
    assert op(prod - a @ flow(t2, d + 1)) <= 1e-12 * op(prod)
    hs = HorosphericalElement(tuple(s), p) * HorosphericalElement(tuple(s2), p)
    assert op(hs.matrix - u @ horospherical(s2, p)) <= 1e-12 * max(1.0, op(hs.matrix)) ** 2
    corner = u[d, 0]
    eta = np.array([1.0] * (p - 1) + [-1.0] * (d - p))
    assert corner == pytest.approx(-0.5 * float(np.sum(eta * np.square(s))), abs=1e-12)


def test_large_t_refused():
    with pytest.raises(OverflowError):
        flow(501, 4)


@pytest.mark.parametrize("psi", [PowerLaw(0.5, 1), PowerLaw(3, 1.5), Constant(0.2),
                                 LogPower(1, 0.5), Tabulated((1, 10, 100), (2, 0.1, 0.05))])
def test_exceptional_tail_bound(psi):
    for d in (3, 4):
        lhs, rhs = exceptional_tail(psi, d, 1)
        assert 0 <= lhs <= rhs * (1 + 1e-9) + 1e-15
        assert rhs <= 1 / (d - 1)  # |m|^{d-1} int_0^inf e^{-(d-1)t} dt


@pytest.mark.parametrize("psi", [PowerLaw(2, 1), Constant(0.5), LogPower(3, 0.5)])
def test_sandwich_containment(psi):
    T = 3.0
    sw = sandwich_constant(B31, psi, T)
    assert sw.c >= 1 and sw.f1_norm == pytest.approx(math.sqrt(2))
    v = radial_project(B31.f1)
    inner, outer = psi.scaled(1 / sw.c), psi.scaled(sw.c)
    dt = CuspSpec(v, psi, "D_T", T=T, basis=B31)
    seen = 0
    for x in points_all(Q31, 120):
        x = tuple(int(a) for a in x)
        if x[0] + x[3] <= 0:  # f_1 coefficient of x is (x_1 + x_4)/2
            continue
        if cusp_member(dt, x):
            seen += 1
            tc = invert_parametrization(x, B31, 1)
            assert tc.t >= sw.t0 - 1e-12
            assert region_member(CoordinateRegion(tc.t, outer, 3, 3, 1.0), tc.s)
    assert seen > 10
    # chart points drawn from the inner regions lie in D_T
    gen = rng(5)
    for t in np.linspace(sw.t0 + 0.01, sw.t0 + 6, 8):
        reg = CoordinateRegion(float(t), inner, 3, 3, 1.0)
        S = gen.uniform(-reg.radius, reg.radius, size=(40, 2))
        for s in S[region_mask(reg, S)]:
            assert cusp_member(dt, tuple(parametrize(float(t), s, B31, 1)))
