"""Seeded experiment runners shared by the command line and the tests."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import linalg

from . import approx, forms, geometry, group_dyn, lattice_points
from .approx import PsiSpec, parse_psi
from .forms import QuadraticForm

DEFAULT_FORM = {"diag": [1, 1, 1, -1], "m": "1"}


def direction_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per direction: adding directions never shifts earlier ones."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass(frozen=True)
class ExperimentConfig:
    form: QuadraticForm
    psi: PsiSpec
    N: int = 50
    seed: int = 20240601
    checkpoints: tuple[float, ...] = (1e3, 1e4, 1e5)
    T_min: float = 1.0
    budget: int = lattice_points.DEFAULT_BUDGET
    workers: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        cps = tuple(float(c) for c in self.checkpoints)
        if not cps or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        if not 0 < self.T_min <= cps[0]:
            raise ValueError("need 0 < T_min <= first checkpoint")
        object.__setattr__(self, "checkpoints", cps)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        form = QuadraticForm.from_dict(data.pop("form", DEFAULT_FORM))
        psi = parse_psi(data.pop("psi", "powerlaw:eps=2,s=1"))
        known = {"N", "seed", "checkpoints", "T_min", "budget", "workers"}
        kwargs = {k: data.pop(k) for k in list(data) if k in known}
        if "checkpoints" in kwargs:
            kwargs["checkpoints"] = tuple(kwargs["checkpoints"])
        if "budget" in kwargs:
            kwargs["budget"] = int(float(kwargs["budget"]))
        return cls(form=form, psi=psi, options=data, **kwargs)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# --------------------------------------------------------------------------
# dichotomy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DichotomyRow:
    direction: int
    T: float
    hits: int
    hits_from_first: int
    predicted_volume: float
    verdict: str
    partial: bool

    HEADER = "direction,T,hits,hits_from_first,predicted_volume,verdict,partial"

    def csv(self) -> str:
        return (f"{self.direction},{self.T:g},{self.hits},{self.hits_from_first},"
                f"{self.predicted_volume!r},{self.verdict},{int(self.partial)}")


def _direction_rows(args):
    cfg, i, volumes, verdict = args
    v = approx.sample_boundary(cfg.form, direction_rng(cfg.seed, i))
    try:
        pts = lattice_points.cusp_points(cfg.form, v, cfg.psi, cfg.T_min, cfg.checkpoints[-1],
                                         budget=cfg.budget)
        partial = False
    except lattice_points.BudgetExceeded:
        pts, partial = np.zeros((0, cfg.form.dim), dtype=np.int64), True
    n2 = np.einsum("ij,ij->i", pts, pts).astype(object) if len(pts) else np.zeros(0, dtype=object)
    first2 = math.ceil(Fraction(cfg.checkpoints[0]) ** 2)
    rows = []
    for T, vol in zip(cfg.checkpoints, volumes):
        cap = math.floor(Fraction(T) ** 2)
        hits = int(sum(1 for a in n2 if a <= cap))
        later = int(sum(1 for a in n2 if first2 <= a <= cap))
        rows.append(DichotomyRow(i, T, hits, later, vol, verdict, partial))
    return rows


def run_dichotomy(cfg: ExperimentConfig) -> list[DichotomyRow]:
    """Hit counts of ``N`` seeded boundary directions at each checkpoint."""
    cfg.form.require_dichotomy_dimension()
    d = cfg.form.d
    p = forms.hyperbolic_basis(cfg.form).p
    verdict = geometry.divergence_classifier(cfg.psi, d).criterion
    volumes = [geometry.cusp_volume(cfg.psi, math.log(cfg.T_min), math.log(T), d, cfg.form.m, p)
               for T in cfg.checkpoints]
    jobs = [(cfg, i, volumes, verdict) for i in range(cfg.N)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(_direction_rows, jobs))
    else:
        parts = [_direction_rows(j) for j in jobs]
    return [row for part in parts for row in part]


def dichotomy_stats(rows: list[DichotomyRow]) -> dict:
    by_dir: dict[int, list[DichotomyRow]] = {}
    for r in rows:
        by_dir.setdefault(r.direction, []).append(r)
    cps = sorted({r.T for r in rows})
    medians = [float(np.median([r.hits for r in rows if r.T == T])) for T in cps]
    gained = [rs[-1].hits_from_first > 0 for rs in by_dir.values()]
    return {
        "checkpoints": cps,
        "median_hits": medians,
        "frac_gaining": sum(gained) / len(gained),
        "frac_zero_late": 1 - sum(gained) / len(gained),
        "monotone": all(a.hits <= b.hits for rs in by_dir.values() for a, b in zip(rs, rs[1:])),
        "partial": sum(rs[0].partial for rs in by_dir.values()),
    }


# --------------------------------------------------------------------------
# examples
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Claim:
    name: str
    expected: str
    observed: str
    ok: bool

    HEADER = "claim,expected,observed,status"

    def csv(self) -> str:
        return f"{self.name},{self.expected},{self.observed},{'PASS' if self.ok else 'FAIL'}"


def run_examples(options: dict | None = None) -> list[Claim]:
    o = {"pell_count": 50, "witnesses": 10, "eps_pass": 0.8, "eps_fail": 0.7,
         "q0_diag": [1, 1, 1, 1], "v": ["3/5", "4/5", "0", "0"], "y_bound": 10_000}
    o.update(options or {})
    claims = []
    pell = approx.pell_solutions(o["pell_count"])
    claims.append(Claim("pell_identity", f"{o['pell_count']} exact",
                        str(sum(k * k - 7 * l * l == 1 for k, l in pell)),
                        all(k * k - 7 * l * l == 1 for k, l in pell)))

    good = approx.pell_summary(o["eps_pass"], o["witnesses"])
    ok_good = good["pass_from"] is not None and all(w.ok for w in good["witnesses"][good["pass_from"] - 1:])
    claims.append(Claim(f"pell_witness_eps_{o['eps_pass']:g}", "pass for large j",
                        f"pass_from={good['pass_from']}", ok_good))
    bad = approx.pell_summary(o["eps_fail"], o["witnesses"])
    ok_bad = bad["fail_from"] is not None and not any(
        w.approx_ok for w in bad["witnesses"][bad["fail_from"] - 1:])
    claims.append(Claim(f"pell_witness_eps_{o['eps_fail']:g}", "fail for large j",
                        f"fail_from={bad['fail_from']}", ok_bad))
    claims.append(Claim("pell_variety", "all exact", str(good["all_variety_ok"] and bad["all_variety_ok"]),
                        good["all_variety_ok"] and bad["all_variety_ok"]))

    n = len(o["q0_diag"])
    gram = [[o["q0_diag"][i] if i == j else 0 for j in range(n)] for i in range(n)]
    rep = approx.rational_obstruction_certificate(gram, o["v"], o["y_bound"])
    claims.append(Claim("rational_obstruction", f"0 solutions |y|<={o['y_bound']} eps=1/{rep.k}",
                        f"{len(rep.solutions)} solutions / {rep.candidates} candidates", rep.ok))
    return claims


# --------------------------------------------------------------------------
# self checks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteResult:
    suite: str
    ok: bool
    detail: str

    HEADER = "suite,status,detail"

    def csv(self) -> str:
        return f"{self.suite},{'PASS' if self.ok else 'FAIL'},{self.detail}"


def _suite_forms(opts):
    form = QuadraticForm.from_dict(opts.get("form", DEFAULT_FORM))
    basis = forms.hyperbolic_basis(form)
    ok = forms.check_basis(form, basis)
    rng = np.random.default_rng(opts.get("seed", 0))
    for _ in range(50):
        c = [Fraction(int(a), int(b)) for a, b in zip(rng.integers(-9, 10, form.dim), rng.integers(1, 9, form.dim))]
        ok &= forms.evaluate(form, basis.to_standard(c)) == forms.normal_form_value(basis, c)
    return ok, f"signature={form.signature}"


def _suite_group(opts):
    tol = opts.get("tol", 1e-12)
    d, p = opts.get("d", 3), opts.get("p", 3)
    rng = np.random.default_rng(opts.get("seed", 0))
    worst = 0.0
    for _ in range(100):
        t = rng.uniform(-3, 3)
        s = rng.normal(size=d - 1)
        a, ai = geometry.flow(t, d + 1), geometry.flow(-t, d + 1)
        u = geometry.horospherical(s, p)
        G = geometry.normal_gram(d, p)
        worst = max(worst,
                    np.linalg.norm(group_dyn.involution(a, 1) - ai, 2),
                    np.linalg.norm(a @ u @ ai - geometry.horospherical(math.exp(-t) * s, p), 2),
                    np.linalg.norm(u.T @ G @ u - G, 2),
                    np.linalg.norm(a.T @ G @ a - G, 2),
                    np.linalg.norm(u @ geometry.horospherical(-s, p) - np.eye(d + 1), 2))
    return worst <= tol, f"max_err={worst:.3e}"


def _suite_uzu(opts):
    tol = opts.get("tol", 1e-9)
    d, p = opts.get("d", 3), opts.get("p", 3)
    rng = np.random.default_rng(opts.get("seed", 0))
    worst = 0.0
    for _ in range(opts.get("samples", 1000)):
        g = linalg.expm(group_dyn.random_lie_element(d, p, rng, rng.uniform(0, 0.2)))
        dec = group_dyn.decompose_uzu(g, p, tol=1.0)
        worst = max(worst, dec.residual)
    return worst <= tol, f"max_residual={worst:.3e}"


def _suite_transversality(opts):
    rep = group_dyn.transversality_checks(opts.get("d", 3), opts.get("p", 3), opts.get("m", 1))
    ok = abs(rep.det_phi - 1) <= opts.get("det_tol", 1e-4) and rep.dv_du_plus_error <= opts.get("dv_tol", 1e-5)
    return ok, f"det={rep.det_phi:.12f} dv_err={rep.dv_du_plus_error:.2e}"


def _suite_volume(opts):
    worst = 0.0
    for d in (3, 4):
        for t in (1.0, 2.0, 3.0):
            reg = geometry.CoordinateRegion(t, approx.PowerLaw(0.8, 1.1), d, d, 1.0)
            if reg.ball_formula_valid:
                a = geometry.region_volume_exact(reg)
                b = geometry.region_volume_radial(reg)
                worst = max(worst, abs(a - b) / a)
    return worst <= opts.get("tol", 1e-9), f"max_rel={worst:.2e}"


def _suite_sampler(opts):
    form = QuadraticForm.from_dict(opts.get("form", DEFAULT_FORM))
    V = approx.sample_boundary_many(form, np.random.default_rng(opts.get("seed", 0)), 100_000)
    G = form.gram_float()
    q = np.abs(np.einsum("ij,jk,ik->i", V, G, V)).max()
    nrm = np.abs(np.linalg.norm(V, axis=1) - 1).max()
    return q <= 1e-12 and nrm <= 1e-12, f"max|Q|={q:.1e} max|norm-1|={nrm:.1e}"


def _suite_classifier(opts):
    cases = [(approx.PowerLaw(1, 1), 3, "divergent"), (approx.PowerLaw(1, 1.01), 3, "convergent"),
             (approx.LogPower(1, 0.5), 3, "divergent"), (approx.LogPower(1, 1.0), 3, "convergent")]
    ok = all(geometry.divergence_classifier(p, d).criterion == want for p, d, want in cases)
    return ok, f"{len(cases)} cases"


SUITES: dict[str, Callable] = {
    "forms": _suite_forms,
    "group_identities": _suite_group,
    "uzu_roundtrip": _suite_uzu,
    "transversality": _suite_transversality,
    "volume": _suite_volume,
    "sampler": _suite_sampler,
    "classifier": _suite_classifier,
}


def run_selfcheck(options: dict | None = None) -> list[SuiteResult]:
    opts = dict(options or {})
    out = []
    for name, fn in SUITES.items():
        try:
            ok, detail = fn(opts)
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(SuiteResult(name, bool(ok), detail.replace(",", ";")))
    return out


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
