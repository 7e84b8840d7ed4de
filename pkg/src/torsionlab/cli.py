"""Command-line front end.

Exit codes: 0 success, 1 a check failed (reports are still written),
2 usage error, 3 a solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import audit as A
from . import constants as C
from . import experiments as X
from . import schemas
from .errors import FitDegenerate, NoConvergence, TorsionLabError
from .geometry import (Annulus, Bitmap, Disk, Dumbbell, LShape, Polygon, PuncturedSquare,
                       Rectangle, distance_field, rasterize, spec_from_dict, topology_check,
                       write_pgm)
from .solver import field_to_csv, field_to_raw, solve_principal_eigen, solve_torsion

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NOCONV = 0, 1, 2, 3

CHECK_HELP = "check ids:\n" + "\n".join(
    f"  {cid:<16} {desc}" for cid, desc in
    [(k, v[2]) for k, v in A.SUMMARY_CHECKS.items()] + list(A.FIELD_CHECKS.items()))


class UsageError(Exception):
    pass


def _domain_args(p):
    g = p.add_argument_group("domain")
    g.add_argument("--domain", choices=["disk", "square", "rectangle", "l_shape", "annulus",
                                        "punctured_square", "dumbbell", "polygon", "bitmap"])
    g.add_argument("--spec-file", help="JSON domain spec (instead of --domain flags)")
    g.add_argument("--name", help="domain name used in reports")
    g.add_argument("--radius", type=float, help="disk radius or dumbbell disc radius")
    g.add_argument("--a", type=float, help="rectangle / L-shape width")
    g.add_argument("--b", type=float, help="rectangle / L-shape height")
    g.add_argument("--side", type=float, help="square side (default 1)")
    g.add_argument("--notch", type=float, help="L-shape notch size")
    g.add_argument("--r-in", type=float)
    g.add_argument("--r-out", type=float)
    g.add_argument("--N", type=int, help="punctured square: holes per row")
    g.add_argument("--rho", type=float, help="punctured square: hole radius")
    g.add_argument("--n", type=int, help="dumbbell: number of discs")
    g.add_argument("--tube-w", type=float)
    g.add_argument("--tube-len", type=float)
    g.add_argument("--vertices", help="polygon vertices as JSON [[x,y],...]")
    g.add_argument("--pgm", help="bitmap domain: PGM file (255 = inside)")


def _grid_args(p, levels=True):
    p.add_argument("--h", type=_parse_h, help="grid spacing, e.g. 0.015625 or 1/64 (default 1/64)")
    if levels:
        p.add_argument("--h-levels", help="comma-separated halving spacings, e.g. 1/64,1/128,1/256")
    p.add_argument("--tol", type=float, default=1e-10, help="relative CG tolerance")
    p.add_argument("--eigen-tol", type=float, default=1e-8, help="eigenvalue tolerance")


def _out_args(p):
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--output", "-o", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torsionlab",
        description="Torsion functions, principal eigenvalues and shape-inequality audits "
                    "on rasterized planar domains.",
        epilog=CHECK_HELP + f"\n\nenvironment:\n  {X.OUTPUT_ENV}  default output directory",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="print the constants record")
    _out_args(p)
    p.add_argument("--c0", type=float, default=C.DEFAULT_C0_LOWER,
                   help="lower bound for the Bloch-Landau constant")

    p = sub.add_parser("solve", help="solve one domain on one grid")
    _domain_args(p)
    _grid_args(p, levels=False)
    _out_args(p)
    p.add_argument("--save-w", help="write the torsion function (.csv or .raw)")
    p.add_argument("--save-u", help="write the eigenfunction (.csv or .raw)")
    p.add_argument("--save-mask", help="write the raster as PGM")

    p = sub.add_parser("audit", help="audit checks on one domain",
                       epilog=CHECK_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    _domain_args(p)
    _grid_args(p)
    _out_args(p)
    p.add_argument("--checks", help="comma-separated check ids (default: all)")

    p = sub.add_parser("corpus", help="audit matrix over a corpus of domains")
    p.add_argument("--config", help="scenario JSON (default: built-in corpus)")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("sweep", help="punctured-square or dumbbell family sweep")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario JSON with kind punctured or dumbbell")
    src.add_argument("--family", choices=["punctured", "dumbbell"], help="use built-in defaults")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("oracle", help="compare the solver with closed-form values")
    p.add_argument("--config")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("convergence", help="observed convergence order of each functional")
    _domain_args(p)
    p.add_argument("--h-levels", required=True, help="at least three halving spacings")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--eigen-tol", type=float, default=1e-8)
    _out_args(p)
    return parser


# --------------------------------------------------------------------------

def _parse_h(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _levels(text):
    try:
        return [_parse_h(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --h-levels {text!r}") from exc


DOMAIN_FLAGS = ("radius", "a", "b", "side", "notch", "r_in", "r_out", "N", "rho", "n", "tube_w",
                "tube_len", "vertices", "pgm")


def spec_from_args(args):
    """Build the domain spec from flags; conflicting inputs are usage errors."""
    given = [f for f in DOMAIN_FLAGS if getattr(args, f, None) is not None]
    if args.spec_file:
        if args.domain or given:
            raise UsageError("--spec-file cannot be combined with --domain or shape flags")
        with open(args.spec_file) as fh:
            data = json.load(fh)
        data.pop("name", None)
        data.pop("h_levels", None)
        return spec_from_dict(data)
    if not args.domain:
        raise UsageError("one of --domain or --spec-file is required")
    allowed = {
        "disk": {"radius"}, "square": {"side"}, "rectangle": {"a", "b"},
        "l_shape": {"a", "b", "notch"}, "annulus": {"r_in", "r_out"},
        "punctured_square": {"N", "rho", "side"}, "dumbbell": {"n", "radius", "tube_w", "tube_len"},
        "polygon": {"vertices"}, "bitmap": {"pgm"},
    }[args.domain]
    extra = set(given) - allowed
    if extra:
        flags = ", ".join("--" + f.replace("_", "-") for f in sorted(extra))
        raise UsageError(f"{flags} not valid for --domain {args.domain}")

    def get(name, default=None):
        v = getattr(args, name)
        if v is None:
            if default is None:
                raise UsageError(f"--{name.replace('_', '-')} is required for {args.domain}")
            return default
        return v

    d = args.domain
    if d == "disk":
        return Disk(get("radius", 1.0))
    if d == "square":
        s = get("side", 1.0)
        return Rectangle(s, s)
    if d == "rectangle":
        return Rectangle(get("a", 1.0), get("b", 1.0))
    if d == "l_shape":
        return LShape(get("a", 1.0), get("b", 1.0), get("notch", 0.5))
    if d == "annulus":
        return Annulus(get("r_in"), get("r_out"))
    if d == "punctured_square":
        return PuncturedSquare(get("N", 3), get("rho"), get("side", 1.0))
    if d == "dumbbell":
        R = get("radius", 1.0)
        return Dumbbell(get("n", 2), R, get("tube_w", 0.25 * R), get("tube_len", R))
    if d == "polygon":
        try:
            verts = json.loads(get("vertices"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"--vertices is not valid JSON: {exc}") from exc
        return Polygon(tuple(tuple(v) for v in verts))
    return Bitmap(get("pgm"))


def _emit(text: str, output):
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _save_field(field_, mask, path):
    if path.endswith(".raw"):
        field_to_raw(field_, path)
    else:
        field_to_csv(field_, mask, path)


def _summary_csv(summary_dict) -> str:
    keys = [k for k in summary_dict if k not in ("errors", "orders")]
    vals = [json.dumps(summary_dict[k]) if isinstance(summary_dict[k], list) else summary_dict[k]
            for k in keys]
    return ",".join(keys) + "\n" + ",".join(str(v) for v in vals) + "\n"


def cmd_constants(args):
    doc = C.paper_constants(args.c0).to_json_dict()
    schemas.validate("constants", doc)
    if args.format == "json":
        text = X.dumps(doc)
    else:
        rows = ["name,double,hex,decimal"]
        rows += [f"{k},{v['double']!r},{v['hex']},{v['decimal']}"
                 for k, v in doc["constants"].items()]
        text = "\n".join(rows) + "\n"
    _emit(text, args.output)
    return EXIT_OK


def cmd_solve(args):
    spec = spec_from_args(args)
    h = args.h or 1 / 64
    mask = rasterize(spec, h, args.name)
    torsion = solve_torsion(mask, args.tol)
    spectral = solve_principal_eigen(mask, args.eigen_tol)
    dist = distance_field(mask)
    topo = topology_check(mask)
    summary = A.summarize(mask, torsion, spectral, dist, topo)
    doc = {"domain": spec.to_dict(), "summary": summary.to_dict(), "topology": topo.to_dict(),
           "solver": {"h": h, "cg_iterations": torsion.iterations,
                      "torsion_residual_rel": torsion.residual_rel,
                      "eigen_outer_iterations": spectral.outer_iterations,
                      "eigen_residual_rel": spectral.residual_rel,
                      "lambda_lower": spectral.lambda_lower}}
    doc = X._clean(doc)
    schemas.validate("solve_output", doc)
    if args.save_w:
        _save_field(torsion.w, mask, args.save_w)
    if args.save_u:
        _save_field(spectral.u, mask, args.save_u)
    if args.save_mask:
        write_pgm(mask, args.save_mask)
    _emit(X.dumps(doc) if args.format == "json" else _summary_csv(doc["summary"]), args.output)
    return EXIT_OK


def cmd_audit(args):
    spec = spec_from_args(args)
    checks = None
    if args.checks:
        checks = [c.strip() for c in args.checks.split(",") if c.strip()]
        unknown = set(checks) - set(A.CHECK_IDS)
        if unknown:
            raise UsageError(f"unknown check ids: {', '.join(sorted(unknown))}")
    if args.h and args.h_levels:
        raise UsageError("--h and --h-levels are mutually exclusive")
    levels = _levels(args.h_levels) if args.h_levels else [args.h or 1 / 64]
    if args.h_levels and len(levels) < 3:
        raise UsageError("--h-levels needs at least three spacings")
    consts = C.paper_constants()
    name = args.name or spec.label
    runs = [X.solve_level(spec, h, name, args.tol, args.eigen_tol) for h in levels]
    summary = (A.extrapolate_summaries([r.summary for r in runs]) if len(runs) >= 3
               else runs[-1].summary)
    reports = X.summary_reports(summary, consts, checks)
    field_ids = set(A.FIELD_CHECKS) if checks is None else set(checks) & set(A.FIELD_CHECKS)
    if field_ids:
        reports += X.field_reports(runs[-1], spec, consts, args.tol, sorted(field_ids))
    reports = A.sort_reports(reports)
    counts = X._counts(reports)
    doc = X._clean({"domain": spec.to_dict(), "summary": summary.to_dict(),
                    "reports": [r.to_dict() for r in reports], "counts": counts})
    schemas.validate("audit_output", doc)
    _emit(X.dumps(doc) if args.format == "json" else X.reports_to_csv(reports), args.output)
    for r in reports:
        if r.status == "not_applicable":
            print(f"{r.check_id}: NotApplicable ({r.note})", file=sys.stderr)
    return EXIT_FAIL if counts["fail"] else EXIT_OK


def _load_cfg(args, kind, scenario):
    if args.config:
        cfg = X.ExperimentConfig.from_json(args.config)
    else:
        cfg = X.ExperimentConfig(scenario=scenario, kind=kind)
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _check_written(paths):
    doc = json.loads(Path(paths["json"]).read_text())
    schemas.validate(schemas.scenario_kind(doc), doc)
    print(f"wrote {paths['json']} and {paths['csv']}", file=sys.stderr)


def _noconv(domains):
    return any(d.error and d.error.startswith("NoConvergence") for d in domains)


def cmd_corpus(args):
    cfg = _load_cfg(args, "corpus", "corpus")
    if cfg.kind != "corpus":
        raise UsageError(f"config kind is {cfg.kind!r}, expected 'corpus'")
    rep = X.run_corpus_audit(cfg)
    _check_written(rep.paths)
    print(f"pass={rep.counts['pass']} fail={rep.counts['fail']} "
          f"not_applicable={rep.counts['not_applicable']}", file=sys.stderr)
    if _noconv(rep.domains):
        return EXIT_NOCONV
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep(args):
    if args.config:
        cfg = _load_cfg(args, None, None)
    else:
        cfg = _load_cfg(argparse.Namespace(config=None, output_dir=args.output_dir,
                                           workers=args.workers), args.family, args.family)
    if cfg.kind not in ("punctured", "dumbbell"):
        raise UsageError(f"config kind is {cfg.kind!r}, expected 'punctured' or 'dumbbell'")
    rep = X.sweep_punctured(cfg) if cfg.kind == "punctured" else X.sweep_dumbbell(cfg)
    _check_written(rep.paths)
    if any(r.error and r.error.startswith("NoConvergence") for r in rep.rows):
        return EXIT_NOCONV
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_oracle(args):
    cfg = _load_cfg(args, "oracle", "oracle")
    if cfg.kind != "oracle":
        raise UsageError(f"config kind is {cfg.kind!r}, expected 'oracle'")
    rep = X.run_oracle_suite(cfg)
    _check_written(rep.paths)
    for r in rep.rows:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.domain}.{r.quantity}: "
              f"rel err {r.rel_error:.2e} (tol {r.tolerance:g})", file=sys.stderr)
    if _noconv(rep.domains):
        return EXIT_NOCONV
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_convergence(args):
    spec = spec_from_args(args)
    levels = _levels(args.h_levels)
    if len(levels) < 3:
        raise UsageError("--h-levels needs at least three spacings")
    study = X.convergence_study(spec, levels, args.tol, args.eigen_tol, args.name)
    doc = X._clean({"scenario": "convergence", "kind": "convergence", "studies": [study]})
    schemas.validate("convergence_output", doc)
    if args.format == "json":
        text = X.dumps(doc)
    else:
        lines = ["functional,h,value,observed_order,extrapolated,error_estimate,monotone"]
        for key, row in study["functionals"].items():
            for h, v in zip(study["h"], row["values"]):
                lines.append(f"{key},{h!r},{v!r},{row['observed_order']},{row['extrapolated']!r},"
                             f"{row['error_estimate']!r},{row['monotone']}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.output)
    return EXIT_OK


COMMANDS = {"constants": cmd_constants, "solve": cmd_solve, "audit": cmd_audit,
            "corpus": cmd_corpus, "sweep": cmd_sweep, "oracle": cmd_oracle,
            "convergence": cmd_convergence}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"torsionlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoConvergence, FitDegenerate, RuntimeError) as exc:
        print(f"torsionlab: could not compute: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (TorsionLabError, ValueError, OSError) as exc:
        print(f"torsionlab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
