"""Command line front end.  CSV goes to stdout (or ``--out``), logs to stderr.

Exit status: 0 success, 2 invariant failure, 3 budget exhaustion.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import sys

from . import approx, experiments, geometry, group_dyn, lattice_points
from .forms import FormError, QuadraticForm

log = logging.getLogger("quadapprox")

EXIT_OK, EXIT_INVARIANT, EXIT_BUDGET = 0, 2, 3


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _floats(text: str) -> list[float]:
    return [float(a) for a in text.split(",") if a.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--psi", help='e.g. "powerlaw:eps=0.5,s=1"')
    p.add_argument("--T", help="norm bound, or comma separated checkpoints")
    p.add_argument("--N", type=int, help="number of directions")
    p.add_argument("--budget", type=float, help="candidate budget per search")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadapprox", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="all integer points with |x| <= T")
    _common(p)

    p = sub.add_parser("cusp-hits", help="integer points in one cusp")
    _common(p)
    p.add_argument("--direction", help="JSON list; defaults to a seeded boundary sample")
    p.add_argument("--T-min", type=float, dest="T_min", default=None)
    p.add_argument("--jsonl", action="store_true", help="emit JSON lines instead of CSV")

    p = sub.add_parser("dichotomy", help="hit counts of sampled directions at checkpoints")
    _common(p)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("volume", help="region or cusp volumes in (t, s) coordinates")
    _common(p)
    p.add_argument("--t", type=float, help="single t: region volume by every method")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=math.log(1e5))
    p.add_argument("--samples", type=int, default=10**6)

    p = sub.add_parser("classify", help="divergence verdict of the volume integral")
    _common(p)
    p.add_argument("--d", type=int, default=3)

    p = sub.add_parser("examples", help="check the two explicit constructions")
    _common(p)

    p = sub.add_parser("selfcheck", help="run all invariant suites")
    _common(p)
    p.add_argument("--tol", type=float, help="tolerance override for float suites")

    p = sub.add_parser("gamma-count", help="integral group elements in U-Z a_t U+ boxes")
    _common(p)
    p.add_argument("--r", type=_floats, default=[1.0, 1.0, 1.0], help="r1,r2,r3")
    p.add_argument("--t-values", type=_floats, default=[3, 4, 5, 6])
    p.add_argument("--entry-bound", type=int)
    return ap


def _form(cfg: dict) -> QuadraticForm:
    return QuadraticForm.from_dict(cfg.get("form", experiments.DEFAULT_FORM))


def _psi(args, cfg: dict, default: str) -> approx.PsiSpec:
    return approx.parse_psi(args.psi or cfg.get("psi", default))


def _budget(args, cfg) -> int:
    b = args.budget if args.budget is not None else cfg.get("budget", lattice_points.DEFAULT_BUDGET)
    return int(float(b))


def cmd_enumerate(args, cfg, out) -> int:
    form = _form(cfg)
    T = float(args.T or cfg.get("T", 10))
    pts = lattice_points.points_all(form, T, budget=_budget(args, cfg))
    out.write(",".join(f"x{i + 1}" for i in range(form.dim)) + ",norm\n")
    for row in pts:
        out.write(",".join(str(int(a)) for a in row) + f",{math.sqrt(int(row @ row))!r}\n")
    log.info("%d points with |x| <= %g", len(pts), T)
    return EXIT_OK


def cmd_cusp_hits(args, cfg, out) -> int:
    form = _form(cfg)
    psi = _psi(args, cfg, "powerlaw:eps=1,s=1")
    T = float(args.T or cfg.get("T", 1000))
    T_min = args.T_min if args.T_min is not None else float(cfg.get("T_min", 1.0))
    if args.direction or "direction" in cfg:
        v = approx.boundary_direction(form, json.loads(args.direction) if args.direction else cfg["direction"])
    else:
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        v = approx.sample_boundary(form, experiments.direction_rng(seed, 0))
    recs = list(lattice_points.enumerate_in_cusp(form, v, psi, T_min, T, budget=_budget(args, cfg)))
    if args.jsonl:
        lattice_points.write_jsonl(recs, out)
    else:
        out.write(",".join(f"x{i + 1}" for i in range(form.dim)) + ",norm,err,psi\n")
        for r in recs:
            out.write(",".join(map(str, r.point.coords))
                      + f",{r.point.norm!r},{r.direction_error!r},{r.psi_value!r}\n")
    summary = lattice_points.count_hits(recs)
    log.info("direction %s: count,min_norm,max_norm = %s", v.tolist(), summary.csv_row())
    return EXIT_OK


def _experiment_config(args, cfg) -> experiments.ExperimentConfig:
    ec = experiments.ExperimentConfig.from_dict(cfg)
    return ec.with_overrides(
        seed=args.seed, N=args.N,
        psi=approx.parse_psi(args.psi) if args.psi else None,
        checkpoints=tuple(_floats(args.T)) if args.T else None,
        budget=int(args.budget) if args.budget is not None else None,
        workers=getattr(args, "workers", None))


def cmd_dichotomy(args, cfg, out) -> int:
    ec = _experiment_config(args, cfg)
    rows = experiments.run_dichotomy(ec)
    out.write(experiments.DichotomyRow.HEADER + "\n")
    for r in rows:
        out.write(r.csv() + "\n")
    stats = experiments.dichotomy_stats(rows)
    log.info("summary %s", json.dumps(stats))
    if not stats["monotone"]:
        return EXIT_INVARIANT
    return EXIT_BUDGET if stats["partial"] else EXIT_OK


def cmd_volume(args, cfg, out) -> int:
    form = _form(cfg)
    psi = _psi(args, cfg, "powerlaw:eps=1,s=1")
    d = form.d
    p = form.signature[0]
    m = float(form.m)
    out.write("t0,t1,value,method,stderr\n")
    if args.t is not None:
        reg = geometry.CoordinateRegion(args.t, psi, d, p, m)
        if reg.ball_formula_valid:
            out.write(f"{args.t!r},{args.t!r},{geometry.region_volume_exact(reg)!r},exact,\n")
        out.write(f"{args.t!r},{args.t!r},{geometry.region_volume_radial(reg)!r},radial,\n")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        est, err = geometry.region_volume_mc(reg, experiments.direction_rng(seed, 0), args.samples)
        out.write(f"{args.t!r},{args.t!r},{est!r},montecarlo,{err!r}\n")
    else:
        val = geometry.cusp_volume(psi, args.t0, args.t1, d, form.m, p)
        out.write(f"{args.t0!r},{args.t1!r},{val!r},quadrature,\n")
    return EXIT_OK


def cmd_classify(args, cfg, out) -> int:
    psi = _psi(args, cfg, "powerlaw:eps=1,s=1")
    verdict = geometry.divergence_classifier(psi, int(cfg.get("d", args.d)))
    out.write(json.dumps(verdict.to_dict()) + "\n")
    return EXIT_OK


def cmd_examples(args, cfg, out) -> int:
    claims = experiments.run_examples(cfg.get("examples"))
    out.write(experiments.Claim.HEADER + "\n")
    for c in claims:
        out.write(c.csv() + "\n")
        log.info("%s: expected %s, observed %s", c.name, c.expected, c.observed)
    return EXIT_OK if all(c.ok for c in claims) else EXIT_INVARIANT


def cmd_selfcheck(args, cfg, out) -> int:
    opts = dict(cfg)
    if args.tol is not None:
        opts["tol"] = args.tol
    if args.seed is not None:
        opts["seed"] = args.seed
    results = experiments.run_selfcheck(opts)
    out.write(experiments.SuiteResult.HEADER + "\n")
    for r in results:
        out.write(r.csv() + "\n")
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVARIANT


def cmd_gamma_count(args, cfg, out) -> int:
    form = QuadraticForm.from_dict(cfg.get("form", {"diag": [1, 1, -1], "m": "1"}))
    r1, r2, r3 = (args.r * 3)[:3] if len(args.r) == 1 else args.r
    out.write("t,count,lower_bound\n")
    lower = False
    for t in args.t_values:
        res = group_dyn.gamma_in_box(form, group_dyn.BoxSpec(r1, r2, r3, t), args.entry_bound)
        lower |= res.lower_bound
        out.write(f"{t:g},{res.count},{int(res.lower_bound)}\n")
    return EXIT_BUDGET if lower else EXIT_OK


COMMANDS = {
    "enumerate": cmd_enumerate,
    "cusp-hits": cmd_cusp_hits,
    "dichotomy": cmd_dichotomy,
    "volume": cmd_volume,
    "classify": cmd_classify,
    "examples": cmd_examples,
    "selfcheck": cmd_selfcheck,
    "gamma-count": cmd_gamma_count,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args.config)
        with contextlib.ExitStack() as stack:
            out = stack.enter_context(open(args.out, "w")) if args.out else sys.stdout
            return COMMANDS[args.command](args, cfg, out)
    except lattice_points.BudgetExceeded as exc:
        log.error("%s", exc)
        return EXIT_BUDGET
    except (FormError, ValueError, AssertionError) as exc:
        log.error("%s", exc)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
