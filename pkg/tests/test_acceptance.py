"""Acceptance criteria, one reported PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also collected in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import linalg

from quadapprox.approx import (
    Constant,
    LogPower,
    PowerLaw,
    pell_solutions,
    pell_summary,
    rational_obstruction_certificate,
    sample_boundary,
)
from quadapprox.experiments import ExperimentConfig, direction_rng, run_dichotomy
from quadapprox.forms import QuadraticForm
from quadapprox.geometry import (
    CoordinateRegion,
    divergence_classifier,
    flow,
    horospherical,
    normal_gram,
    region_volume_mc,
)
from quadapprox.group_dyn import (
    BoxSpec,
    decompose_uzu,
    gamma_in_box,
    involution,
    random_lie_element,
    transversality_checks,
)
from quadapprox.lattice_points import cusp_points, filter_cusp, points_all

Q31 = QuadraticForm.diagonal([1, 1, 1, -1], 1)


def test_oracle_equivalence(report):
    start = time.perf_counter()
    oracle = points_all(Q31, 300)
    psis = [PowerLaw(1, 0.5), PowerLaw(1, 1), PowerLaw(1, 1.5)]
    windows = [(1, 300), (50, 300), (1, 60)]
    checked = mismatches = hits = 0
    for i in range(20):
        v = sample_boundary(Q31, direction_rng(2024, i))
        for psi in psis:
            for lo, hi in windows:
                fast = {tuple(r) for r in cusp_points(Q31, v, psi, lo, hi).tolist()}
                slow = {tuple(r) for r in filter_cusp(oracle, v, psi, lo, hi).tolist()}
                checked += 1
                hits += len(slow)
                mismatches += fast != slow
    elapsed = time.perf_counter() - start
    report("oracle equivalence", mismatches == 0 and elapsed < 60,
           f"{checked} searches, {mismatches} mismatches, {hits} oracle hits, {elapsed:.1f}s (< 60s)")


def test_enumeration_counts(report):
    start = time.perf_counter()
    a, b = len(points_all(Q31, 1.5)), len(points_all(Q31, 2))
    elapsed = time.perf_counter() - start
    report("enumeration counts", a == 6 and b == 30 and elapsed < 1,
           f"T=1.5 -> {a} (want 6), T=2 -> {b} (want 30), {elapsed:.3f}s (< 1s)")


def _volume_configs():
    gen = np.random.Generator(np.random.Philox(99))
    configs = []
    while len(configs) < 10:
        d = int(gen.choice([3, 4]))
        family = int(gen.integers(3))
        if family == 0:
            psi = PowerLaw(float(gen.uniform(0.3, 1.0)), float(gen.uniform(0.5, 1.5)))
        elif family == 1:
            psi = Constant(float(gen.uniform(0.05, 0.5)))
        else:
            psi = LogPower(float(gen.uniform(1.0, 3.0)), float(gen.uniform(0.2, 1.0)))
        t = float(gen.uniform(0.5, 4.0))
        reg = CoordinateRegion(t, psi, d, d, 1.0)
        if reg.ball_formula_valid:
            configs.append(reg)
    return configs


def test_volume_formula(report):
    start = time.perf_counter()
    worst = 0.0
    rel = []
    for k, reg in enumerate(_volume_configs()):
        R = math.exp(reg.t) * reg.psi(math.exp(reg.t))
        formula = (math.pi * R * R) if reg.d == 3 else (4 / 3 * math.pi * R ** 3)
        est, err = region_volume_mc(reg, direction_rng(7, k), 10**6)
        worst = max(worst, abs(est - formula) / err)
        rel.append(abs(est - formula) / formula)
    elapsed = time.perf_counter() - start
    report("volume formula", worst <= 3 and elapsed < 30,
           f"10 configs, max |MC - formula| = {worst:.2f} stderr (<= 3), "
           f"max rel {max(rel):.2%}, {elapsed:.1f}s (< 30s)")


def test_classifier(report):
    got = []
    for d in (3, 4):
        got += [
            divergence_classifier(PowerLaw(1, 1), d).criterion == "divergent",
            divergence_classifier(PowerLaw(1, 1.01), d).criterion == "convergent",
            divergence_classifier(LogPower(1, 1 / (d - 1)), d).criterion == "divergent",
            divergence_classifier(LogPower(1, 2 / (d - 1)), d).criterion == "convergent",
        ]
    report("classifier", all(got), f"{sum(got)}/{len(got)} verdicts exact for d in {{3, 4}}")


def _gain_stats(rows, first, last):
    by_dir = {}
    for r in rows:
        by_dir.setdefault(r.direction, {})[r.T] = r
    gained = sum(by_dir[i][last].hits > by_dir[i][first].hits for i in by_dir)
    zero_late = sum(by_dir[i][last].hits_from_first == 0 for i in by_dir)
    return gained / len(by_dir), zero_late / len(by_dir)


def test_dichotomy(report):
    start = time.perf_counter()
    cps = (1e3, 1e4, 1e5)
    div = run_dichotomy(ExperimentConfig(Q31, PowerLaw(2, 1), N=50, checkpoints=cps))
    medians = [float(np.median([r.hits for r in div if r.T == T])) for T in cps]
    increasing = all(b > a for a, b in zip(medians, medians[1:]))
    gain, _ = _gain_stats(div, 1e3, 1e5)
    conv = run_dichotomy(ExperimentConfig(Q31, PowerLaw(0.5, 1.5), N=50, checkpoints=cps))
    _, zero = _gain_stats(conv, 1e3, 1e5)
    partial = any(r.partial for r in div + conv)
    elapsed = time.perf_counter() - start
    ok = increasing and gain >= 0.6 and zero >= 0.9 and not partial and elapsed < 600
    report("dichotomy experiment", ok,
           f"PowerLaw(2,1) medians {medians} strictly increasing={increasing}, "
           f"{gain:.0%} gain (>= 60%); PowerLaw(0.5,1.5) {zero:.0%} zero late hits (>= 90%); "
           f"{elapsed:.0f}s (< 600s)")


def test_pell_example(report):
    start = time.perf_counter()
    sols = pell_solutions(50)
    identities = all(k * k - 7 * l * l == 1 for k, l in sols)
    good = pell_summary(0.8, 10 + 5)
    start_j = good["pass_from"]
    first_ten = good["witnesses"][start_j - 1:start_j - 1 + 10] if start_j else []
    ten_ok = len(first_ten) == 10 and all(w.approx_ok and w.variety_ok for w in first_ten)
    bad = pell_summary(0.7, 15)
    fail_from = bad["fail_from"]
    tail_fails = fail_from is not None and not any(w.approx_ok for w in bad["witnesses"][fail_from - 1:])
    elapsed = time.perf_counter() - start
    report("Pell example", identities and ten_ok and tail_fails and elapsed < 1,
           f"50 Pell identities exact={identities}; eps=0.8 witnesses {start_j}..{start_j + 9} "
           f"pass both conditions={ten_ok}; eps=0.7 fails for all j >= {fail_from}; "
           f"{elapsed:.3f}s (< 1s)")


def test_rational_obstruction_example(report):
    start = time.perf_counter()
    rep = rational_obstruction_certificate(np.eye(4, dtype=int).tolist(), ["3/5", "4/5", "0", "0"], 10_000)
    elapsed = time.perf_counter() - start
    report("rational obstruction example", rep.ok and rep.epsilon == pytest.approx(0.2) and elapsed < 120,
           f"eps=1/{rep.k}, {len(rep.solutions)} solutions among {rep.candidates} candidates "
           f"with |y| <= 10^4, {elapsed:.1f}s (< 120s)")


def test_group_identities(report):
    gen = np.random.Generator(np.random.Philox(31))
    exact = all(np.array_equal(involution(flow(t, 4), 1), flow(-t, 4))
                for t in gen.uniform(-20, 20, 200))
    G = normal_gram(3, 3)
    worst = 0.0
    for _ in range(200):
        t = gen.uniform(-3, 3)
        s = gen.normal(size=2)
        a, ai = flow(t, 4), flow(-t, 4)
        u = horospherical(s, 3)
        worst = max(worst,
                    np.linalg.norm(a @ u @ ai - horospherical(math.exp(-t) * s, 3), 2),
                    np.linalg.norm(u.T @ G @ u - G, 2),
                    np.linalg.norm(a.T @ G @ a - G, 2))
    resid = 0.0
    for _ in range(1000):
        g = linalg.expm(random_lie_element(3, 3, gen, gen.uniform(0, 0.2)))
        dec = decompose_uzu(g, 3, tol=1.0)
        resid = max(resid, float(np.linalg.norm(dec.product() - g, 2)))
    report("group identity suite", exact and worst <= 1e-12 and resid <= 1e-9,
           f"sigma(a_t)=a_-t exact={exact}; identity max err {worst:.1e} (<= 1e-12); "
           f"1000 uzu round trips max residual {resid:.1e} (<= 1e-9)")


def test_transversality(report):
    start = time.perf_counter()
    rep = transversality_checks(3, 3, 1)
    elapsed = time.perf_counter() - start
    ok = abs(rep.det_phi - 1) <= 1e-4 and rep.dv_du_plus_error <= 1e-5 and elapsed < 10
    report("transversality", ok,
           f"|det| = {rep.det_phi:.10f} (1 +- 1e-4), |dv/du+ + sigma| = {rep.dv_du_plus_error:.1e} "
           f"(<= 1e-5), {elapsed:.2f}s (< 10s)")


@pytest.mark.slow
def test_box_counting_growth(report):
    start = time.perf_counter()
    form = QuadraticForm.diagonal([1, 1, -1], 1)
    counts = {t: gamma_in_box(form, BoxSpec(1.0, 1.0, 1.0, float(t))) for t in (3, 4, 5, 6)}
    ratios = [counts[t + 1].count / counts[t].count for t in (3, 4, 5)]
    exact = not any(c.lower_bound for c in counts.values())
    elapsed = time.perf_counter() - start
    ok = exact and all(2 <= r <= 3.8 for r in ratios) and elapsed < 1800
    report("box counting growth", ok,
           f"counts t=3..6 {[counts[t].count for t in (3, 4, 5, 6)]}, ratios "
           f"{[round(r, 3) for r in ratios]} in [2, 3.8], {elapsed:.1f}s (< 1800s)")
