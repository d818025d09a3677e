"""Command-line interface: ``gvi fit|diagnose|oracle|bench|validate``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure. On
failure a JSON object with ``code``, ``module`` and ``message`` is written
to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import diagnostics, gaussian_fit, logreg_bench, oracle, potential, quadrature, validate
from .errors import GVIError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


def _fail(code, module, message, exit_code):
    sys.stderr.write(json.dumps({"code": code, "module": module, "message": message}) + "\n")
    return exit_code


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path!r} is not valid JSON: {exc}") from None


def _load_potential(path):
    doc = _read_json(path, "potential")
    try:
        return potential.potential_from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GVIError) and not isinstance(exc, potential.PotentialError):
            raise
        raise UsageError(f"invalid potential document: {exc}") from None


def _rule(args, dim):
    if args.quad is None:
        return quadrature.default_rule(dim)
    try:
        return quadrature.parse_rule(args.quad, dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _approx_from_doc(doc, d):
    return gaussian_fit.GaussianApprox(
        np.asarray(doc["mean"], dtype=float), np.asarray(doc["cov"], dtype=float).reshape(d, d), doc.get("method", "")
    )


# ---------------------------------------------------------------- commands


def cmd_fit(args):
    p = _load_potential(args.potential)
    rule = _rule(args, p.dim)
    out = {}
    mode = potential.find_mode(p)
    if args.method in ("laplace", "both"):
        out["laplace"] = gaussian_fit.laplace_fit(p, mode=mode).to_dict()
    if args.method in ("vi", "both"):
        approx, report = gaussian_fit.vi_fit_contraction(p, rule, tol=args.tol, mode=mode)
        doc = approx.to_dict()
        rep = report.to_dict()
        rep.pop("wall_time")
        doc["report"] = rep
        out["vi"] = doc
    if p.dim > oracle.MAX_DIM:
        out["note"] = "unverified dimension"
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _g_suite(spec, center):
    if spec in (None, "default"):
        return diagnostics.default_g_suite(center)
    doc = _read_json(spec, "g-suite")
    suite = []
    c = np.asarray(center, dtype=float)
    for item in doc:
        kind = item.get("type")
        i = int(item.get("index", 0))
        if kind == "coordinate":
            suite.append(diagnostics.GFunction(f"x{i + 1}", lambda X, i=i: X[:, i], diagnostics.LINEAR))
        elif kind == "centered_square":
            suite.append(diagnostics.GFunction(f"(x{i + 1}-m{i + 1})^2", lambda X, i=i: (X[:, i] - c[i]) ** 2, diagnostics.EVEN))
        elif kind == "halfspace":
            suite.append(diagnostics.GFunction(f"1{{x{i + 1}>=m{i + 1}}}", lambda X, i=i: (X[:, i] >= c[i]).astype(float), diagnostics.GENERAL))
        elif kind == "cube":
            suite.append(diagnostics.GFunction(f"(x{i + 1}-m{i + 1})^3", lambda X, i=i: (X[:, i] - c[i]) ** 3, diagnostics.GENERAL))
        else:
            raise UsageError(f"unknown g-suite entry type {kind!r}")
    return suite


def cmd_diagnose(args):
    p = _load_potential(args.potential)
    rule = _rule(args, p.dim)
    mode = potential.find_mode(p)
    lap = gaussian_fit.laplace_fit(p, mode=mode)
    if args.fit:
        doc = _read_json(args.fit, "fit")
        try:
            vi = _approx_from_doc(doc.get("vi", doc), p.dim)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"invalid fit document: {exc}") from None
    else:
        vi, _ = gaussian_fit.vi_fit_contraction(p, rule, mode=mode)
    ev = None
    if p.dim <= oracle.MAX_DIM:
        ev = oracle.GridEvaluation(p, oracle.default_grid(p, args.grid, mode=mode))
    reports = diagnostics.error_report(p, vi, lap, ev, _g_suite(args.g_suite, vi.mean), rule)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "report.csv"), diagnostics.reports_to_csv(reports, label=p.label))
    _write(os.path.join(args.out, "report.json"), diagnostics.reports_to_json(reports) + "\n")
    if ev is None:
        sys.stdout.write("oracle columns: unverified dimension\n")
    return EXIT_OK


def cmd_oracle(args):
    p = _load_potential(args.potential)
    if p.dim > oracle.MAX_DIM:
        raise UsageError(f"grid oracle supports d <= {oracle.MAX_DIM}; d={p.dim} is an unverified dimension")
    ev = oracle.GridEvaluation(p, oracle.default_grid(p, args.grid))
    doc = ev.to_dict()
    if args.refine:
        rep = oracle.refinement_check(p, ev.grid)
        doc["refinement"] = {"max_rel_change": rep.max_rel_change, "passed": rep.passed}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args):
    doc = _read_json(args.config, "config") if args.config else {}
    if args.preset == "theory":
        doc.setdefault("lam", 1.0)
    if "GVI_SEED" in os.environ:
        try:
            doc["seed"] = int(os.environ["GVI_SEED"])
        except ValueError:
            raise UsageError("GVI_SEED must be an integer") from None
    try:
        cfg = logreg_bench.BenchConfig.from_dict(doc)
    except TypeError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    t0 = time.perf_counter()
    records, summary = logreg_bench.run_benchmark(cfg, jobs=args.jobs)
    logreg_bench.emit_outputs(records, summary, args.out, cfg)
    for metric, fit in summary["slopes"].items():
        slope = "n/a" if fit is None else f"{fit['slope']:.3f}"
        sys.stdout.write(f"{metric:14s} slope {slope}\n")
    sys.stdout.write(f"{summary['cells']} cells, {summary['failures']} failed, {time.perf_counter() - t0:.1f}s\n")
    return EXIT_OK


def cmd_validate(args):
    t0 = time.perf_counter()
    results = validate.run_suite(args.level)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        sys.stdout.write(f"{status} {r.name} ({r.seconds:.1f}s): {r.detail}\n")
    failed = [r.name for r in results if not r.passed]
    sys.stdout.write(f"{len(results) - len(failed)}/{len(results)} invariants passed in {time.perf_counter() - t0:.1f}s\n")
    if failed:
        return _fail("InvariantFailure", "validate", "failed invariants: " + ", ".join(failed), EXIT_NUMERICAL)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    ap = argparse.ArgumentParser(prog="gvi", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="Laplace and/or variational Gaussian fit")
    f.add_argument("--potential", required=True)
    f.add_argument("--method", choices=("vi", "laplace", "both"), default="both")
    f.add_argument("--quad", help="gh:L or mc:M:seed")
    f.add_argument("--tol", type=float, default=1e-10)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("diagnose", help="error report against the grid oracle")
    g.add_argument("--potential", required=True)
    g.add_argument("--fit", help="fit JSON produced by 'gvi fit' (default: fit now)")
    g.add_argument("--g-suite", default="default")
    g.add_argument("--grid", type=int, default=None, help="grid points per axis")
    g.add_argument("--quad")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_diagnose)

    o = sub.add_parser("oracle", help="grid moments of the target")
    o.add_argument("--potential", required=True)
    o.add_argument("--grid", type=int, default=None)
    o.add_argument("--refine", action="store_true", help="also report the P -> 2P change")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", help="logistic-regression benchmark")
    b.add_argument("--config")
    b.add_argument("--preset", choices=("figure", "theory"), default="figure")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="run invariant suites")
    v.add_argument("--level", choices=("quick", "full"), default="quick")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", "cli", str(exc), EXIT_USAGE)
    except GVIError as exc:
        err = exc.to_dict()
        return _fail(err["code"], err["module"], err["message"], EXIT_NUMERICAL)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, "gvi", str(exc), EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
