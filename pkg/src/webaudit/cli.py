"""Command-line front end.

Every command writes a JSON report (to ``--out`` or stdout) and, where it
makes sense, an SVG figure (``--svg``).  Exit codes: 0 definitive verdict,
1 precondition failure or inconclusive verdict, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path


from webaudit import expr as ex
from webaudit import forms, report, scenarios
from webaudit import web2 as w2
from webaudit import web3 as w3
from webaudit.errors import PreconditionError, WebauditError
from webaudit.field import ClosedFormField, Rect, grid_from_csv, grid_to_csv, sample_to_grid

EXIT_OK, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2
OUTPUT_FLAGS = ("out", "out_dir", "svg")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# argument helpers


def _floats(text, n, label):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{label} must be {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{label} must have {n} values, got {len(vals)}")
    return vals


def _rect(text, label="--domain"):
    vals = _floats(text, 4, label)
    try:
        return Rect(*vals)
    except ValueError as err:
        raise UsageError(f"{label}: {err}") from None


def _command_echo(name, args):
    """Command name plus non-output arguments, in a fixed order."""
    keep = {k: v for k, v in sorted(vars(args).items()) if k not in OUTPUT_FLAGS and k not in ("func", "command")}
    return {"name": name, "args": keep}


def _emit(args, rep):
    text = report.dumps(rep)
    if args.out:
        report.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _finish(args, name, digest_payload, tests, data, t0):
    rep = report.envelope(
        _command_echo(name, args),
        report.digest(digest_payload),
        tests,
        data,
        {"wall_time_s": time.perf_counter() - t0},
    )
    _emit(args, rep)
    return rep


def _file_payload(path):
    p = Path(path)
    if p.is_dir():
        files = sorted(x for x in p.iterdir() if x.is_file())
        return report.file_digest(files)
    return report.file_digest([p])


# ----------------------------------------------------------------------------
# web loading


def _load_field(args):
    if bool(args.f) == bool(args.grid):
        raise UsageError("give exactly one of --f or --grid")
    if args.f:
        f = ClosedFormField(args.f, ("x", "y"))
        domain = _rect(args.domain) if args.domain else Rect(0.5, 1.5, 0.5, 1.5)
        return f, domain, {"f": ex.unparse(f.expression)}
    f = grid_from_csv(args.grid, ("x", "y"))
    domain = _rect(args.domain) if args.domain else None
    return f, domain, {"grid": _file_payload(args.grid)}


def _load_demand_web(args):
    if bool(args.scenario) == bool(args.web):
        raise UsageError("give exactly one of --scenario or --web")
    if args.scenario:
        spec = scenarios.ScenarioSpec.load(args.scenario)
        obj = spec.build()
        if not isinstance(obj, w2.DemandWeb):
            raise UsageError(f"scenario kind {spec.kind!r} is not a demand web")
        return obj, {"scenario": spec.as_dict()}
    return scenarios.import_web(args.web), {"web": _file_payload(args.web)}


# ----------------------------------------------------------------------------
# commands


def cmd_separability(args):
    t0 = time.perf_counter()
    f, domain, payload = _load_field(args)
    web = w3.Web3(f, domain)
    tol = args.tol if args.tol is not None else (1e-8 if f.symbolic else 1e-3)
    rep = w3.separability_test(web, n=args.probes, tol=tol, route=args.route)
    payload.update(domain=web.domain.as_list(), tol=tol, probes=args.probes, route=args.route)
    tests = [
        report.result_entry("saint_robert_residual", rep.verdict, tol, rep.residuals, rep.probes, args.full),
        report.result_entry("chern_curvature", rep.verdict, None, rep.curvature, rep.probes, args.full),
    ]
    data = {
        "verdict": rep.verdict,
        "route": rep.route,
        "domain": web.domain.as_list(),
        "max_abs_curvature": rep.max_abs_curvature,
        "max_abs_residual": rep.max_abs_residual,
        "probe_failures": {str(k): v for k, v in sorted(rep.failures.items())},
    }
    _finish(args, "separability", payload, tests, data, t0)
    if args.svg:
        from webaudit.plotting import separability_figure

        separability_figure(web, rep, args.svg)
    return EXIT_INCONCLUSIVE if rep.verdict == "inconclusive" else EXIT_OK


def _default_hexagon_domain(x0, y0, x1, x2):
    s = max(abs(x1 - x0), abs(x2 - x0))
    return Rect(x0 - 2 * s, x0 + 5 * s, y0 - 2 * s, y0 + 5 * s)


def cmd_hexagon(args):
    t0 = time.perf_counter()
    x0, y0, x1, x2 = _floats(args.base, 4, "--base")
    f = ClosedFormField(args.f, ("x", "y"))
    domain = _rect(args.domain) if args.domain else _default_hexagon_domain(x0, y0, x1, x2)
    web = w3.Web3(f, domain)
    h = w3.thomsen_closure_gap(web, x0, y0, x1, x2)
    tol = args.tol if args.tol is not None else 1e-7 * domain.height
    verdict = "closed" if abs(h.gap) <= tol else "open"
    payload = {"f": ex.unparse(f.expression), "base": [x0, y0, x1, x2], "domain": domain.as_list(), "tol": tol}
    data = {
        "x0": h.x0, "y0": h.y0, "x1": h.x1, "x2": h.x2,
        "y1": h.y1, "y2": h.y2, "y2_closing": h.y2_closing, "gap": h.gap,
        "domain": domain.as_list(), "verdict": verdict,
    }
    if args.full:
        data["polylines"] = h.polylines
    tests = [report.result_entry("thomsen_closure_gap", verdict, tol, [h.gap], None, args.full)]
    _finish(args, "hexagon", payload, tests, data, t0)
    if args.svg:
        from webaudit.plotting import hexagon_figure

        hexagon_figure(h, web, args.svg)
    return EXIT_OK


def cmd_audit(args):
    t0 = time.perf_counter()
    web, payload = _load_demand_web(args)
    tol = w2.parse_tolerances(args.tol_set, web)
    rep = w2.audit(web, tol, n=args.probes)
    payload.update(tolerances=tol.as_dict(), probes=args.probes)
    fams = {
        "lagrangian": (rep.lagrangian, rep.probes),
        "samuelson": (rep.samuelson, rep.probes),
        "taylor": (rep.taylor, rep.probes),
        "area_ratio": (rep.area_ratio, [c[0] for c in rep.area_cells]),
        "hexagon": ([None if h is None else h.gap for h in rep.hexagon], None),
    }
    tests = []
    for name in ("lagrangian", "samuelson", "taylor", "area_ratio", "hexagon"):
        v = rep.verdicts[name]
        vals, probes = fams[name]
        extra = {"vacuous": v["vacuous"]} if name == "hexagon" else {}
        tests.append(report.result_entry(name, v["status"], v["tolerance"], vals, probes, args.full, **extra))
    data = {
        "kind": getattr(web, "kind", "unknown"),
        "domain": web.domain.as_list(),
        "verdicts": rep.verdicts,
        "inconsistencies": rep.inconsistencies,
        "orientation_reversing": rep.orientation_reversing,
        "failures": {k: {str(i): m for i, m in sorted(v.items())} for k, v in sorted(rep.failures.items())},
        "tolerances": tol.as_dict(),
    }
    statics = getattr(web, "statics", None)
    if statics is not None:
        data["comparative_statics"] = statics.as_dict()
    _finish(args, "audit", payload, tests, data, t0)
    if args.svg:
        from webaudit.plotting import audit_figure

        audit_figure(web, rep, args.svg)
    return EXIT_OK


def cmd_rectify(args):
    t0 = time.perf_counter()
    web, payload = _load_demand_web(args)
    anchor = _floats(args.anchor, 2, "--anchor") if args.anchor else None
    payload.update(anchor=anchor, n=args.n)
    rect = w2.rectify(web, anchor, n=args.n)
    dets = rect.rectified_abs_det
    tests = [report.result_entry("rectified_abs_det", "pass" if rect.max_det_error <= 1e-6 else "fail", 1e-6,
                                 [d - 1.0 for d in dets], rect.probes, args.full)]
    data = {
        "anchor": list(rect.anchor),
        "q1": rect.q_grid, "F": rect.F_table, "f": rect.factorization.f_table,
        "p1": rect.p_grid, "G": rect.G_table, "g": rect.factorization.g_table,
        "factor_relative_error": rect.factorization.max_error,
        "max_abs_det_error": rect.max_det_error,
        "F_slope_at_anchor": rect.factorization.f(rect.anchor[0]),
        "G_slope_at_anchor": rect.factorization.g(rect.anchor[1]),
    }
    _finish(args, "rectify", payload, tests, data, t0)
    if args.svg:
        from webaudit.plotting import rectify_figure

        rectify_figure(rect, args.svg)
    return EXIT_OK


def cmd_recover(args):
    t0 = time.perf_counter()
    f = ClosedFormField(args.f, ("x", "y"))
    domain = _rect(args.domain) if args.domain else Rect(1.0, 2.0, 1.0, 2.0)
    web = w3.Web3(f, domain)
    anchor = _floats(args.anchor, 2, "--anchor") if args.anchor else list(domain.center)
    payload = {"f": ex.unparse(f.expression), "domain": domain.as_list(), "anchor": anchor, "n": args.n}
    rep = w3.recover_additive(web, anchor, n=args.n)
    spreads = []
    seeds = []
    inner = domain.inset(0.3)
    for k in range(args.curves):
        seed = (inner.xlo + inner.width * k / max(1, args.curves - 1), inner.center[1])
        try:
            poly = w3.trace_level_curve(web, seed, 0.1 * domain.width, 0.01 * domain.width)
        except WebauditError as err:
            poly = err.polyline if hasattr(err, "polyline") and len(err.polyline) > 1 else None
        if poly:
            spreads.append(w3.level_curve_spread(rep, poly))
            seeds.append(seed)
    rng = float(rep.phi_table.max() - rep.phi_table.min())
    tol = 1e-6 * rng
    ok = bool(spreads) and max(spreads) <= tol
    tests = [report.result_entry("level_curve_spread", "pass" if ok else "fail", tol, spreads, seeds, args.full)]
    data = {
        "anchor": list(rep.anchor),
        "gauge": "U1(x*) = U2(y*) = 0, U1'(x*) = 1",
        "x": rep.x_grid, "U1": rep.u1_table,
        "y": rep.y_grid, "U2": rep.u2_table,
        "f": rep.f_grid, "phi": rep.phi_table,
    }
    _finish(args, "recover", payload, tests, data, t0)
    if args.svg:
        from webaudit.plotting import recovery_figure

        recovery_figure(rep, args.svg)
    return EXIT_OK


def cmd_forms_verify(args):
    t0 = time.perf_counter()
    checks = forms.verify_contact_chain(points=args.points, seed=args.seed)
    tests = [
        report.result_entry(c.name, "holds" if c.holds else "fails", 1e-10, [c.max_difference], None, args.full,
                            computed=c.computed, expected=c.expected, note=c.note)
        for c in checks
    ]
    data = {"coordinates": list(forms.CONTACT_COORDS), "all_hold": all(c.holds for c in checks)}
    _finish(args, "forms-verify", {"points": args.points, "seed": args.seed}, tests, data, t0)
    return EXIT_OK if data["all_hold"] else EXIT_INCONCLUSIVE


def cmd_generate(args):
    t0 = time.perf_counter()
    spec = scenarios.ScenarioSpec.load(args.spec)
    obj = spec.build()
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    data = {"kind": spec.kind, "seed": spec.seed, "spec": spec.as_dict()}
    tests = []
    if isinstance(obj, w2.DemandWeb):
        scenarios.export_web(obj, outdir / "web")
        data["files"] = ["web/manifest.json"]
        p1, q1 = obj.domain.center
        lag = w2.lagrangian_residual(obj, (p1, q1))
        tests.append(report.result_entry("lagrangian_residual_at_center", "computed", None, [lag],
                                         [(p1, q1)], args.full))
    else:
        field = obj.field if isinstance(obj, scenarios.SeparableField) else obj.f
        rect = obj.rect if isinstance(obj, scenarios.SeparableField) else obj.domain
        grid_to_csv(sample_to_grid(field, rect, args.n), outdir / "f.csv")
        data["files"] = ["f.csv"]
        data["f"] = ex.unparse(field.expression)
        if isinstance(obj, scenarios.SeparableField):
            data["generators"] = {"u1": ex.unparse(obj.u1), "u2": ex.unparse(obj.u2), "psi": ex.unparse(obj.psi)}
        web = obj.web() if isinstance(obj, scenarios.SeparableField) else obj
        rep = w3.separability_test(web)
        tests.append(report.result_entry("saint_robert_residual", rep.verdict, rep.tolerance, rep.residuals,
                                         rep.probes, args.full))
    args.out = str(outdir / "report.json")
    _finish(args, "generate", {"spec": spec.as_dict(), "n": args.n}, tests, data, t0)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="webaudit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, svg=True):
        sp.add_argument("--out", help="report path (default: stdout)")
        if svg:
            sp.add_argument("--svg", help="write an SVG figure here")
        sp.add_argument("--full", action="store_true", help="include residual arrays")

    s = sub.add_parser("separability", help="Chern curvature / de Saint Robert test")
    s.add_argument("--f", help="closed-form f(x, y)")
    s.add_argument("--grid", help="grid CSV of f")
    s.add_argument("--domain", help="xlo,xhi,ylo,yhi")
    s.add_argument("--tol", type=float)
    s.add_argument("--probes", type=int, default=5)
    s.add_argument("--route", choices=w3.ROUTES, default="auto")
    common(s)
    s.set_defaults(func=cmd_separability)

    s = sub.add_parser("hexagon", help="Thomsen hexagon closure gap")
    s.add_argument("--f", required=True)
    s.add_argument("--base", required=True, help="x0,y0,x1,x2")
    s.add_argument("--domain", help="xlo,xhi,ylo,yhi (default: derived from the base)")
    s.add_argument("--tol", type=float)
    common(s)
    s.set_defaults(func=cmd_hexagon)

    for name, fn, help_ in (("audit", cmd_audit, "integrability audit of a demand web"),
                            ("rectify", cmd_rectify, "rectifying maps F, G")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--scenario", help="scenario JSON")
        s.add_argument("--web", help="exported web directory")
        if name == "audit":
            s.add_argument("--tol-set", default="auto", help="default|grid|strict|key=value,...")
            s.add_argument("--probes", type=int, default=5)
        else:
            s.add_argument("--anchor", help="q1,p1")
            s.add_argument("--n", type=int, default=33)
        common(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("recover", help="additive representation of a trivial web")
    s.add_argument("--f", required=True)
    s.add_argument("--domain", help="xlo,xhi,ylo,yhi (default 1,2,1,2)")
    s.add_argument("--anchor", help="x,y (default: domain center)")
    s.add_argument("--n", type=int, default=33)
    s.add_argument("--curves", type=int, default=10)
    common(s)
    s.set_defaults(func=cmd_recover)

    s = sub.add_parser("forms-verify", help="check the contact-form identities")
    s.add_argument("--points", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    common(s, svg=False)
    s.set_defaults(func=cmd_forms_verify)

    s = sub.add_parser("generate", help="materialize a scenario")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", dest="out_dir", required=True, help="output directory")
    s.add_argument("--n", type=int, default=65, help="grid size for utility fields")
    s.add_argument("--full", action="store_true")
    s.set_defaults(func=cmd_generate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except PreconditionError as err:
        print(f"webaudit {args.command}: precondition failed: {err}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (UsageError, WebauditError, ValueError, OSError, json.JSONDecodeError) as err:
        print(f"webaudit {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
