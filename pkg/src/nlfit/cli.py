"""CSV-in, JSON-out command line interface.

Input CSV files have a header row; the last column is the response y and the
preceding columns are predictors. Exit codes: 0 success, 1 computation
failure (error JSON on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from nlfit import bayes, curvature, glm, hetero, inference, sim
from nlfit.core import Dataset
from nlfit.errors import IoError, NlfitError, ParseError
from nlfit.models import MODEL_IDS, ModelSpec, get_model
from nlfit.solvers import SOLVERS, SolverOptions, fit

COMMANDS = ("fit", "glm", "region", "curvature", "smooth", "bayes", "simulate", "coverage", "table1", "figure1")


class UsageError(Exception):
    """Invalid command-line configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# input and output
# ---------------------------------------------------------------------------

def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise IoError(f"{path} is not UTF-8: {exc}") from None
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise IoError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} columns, found {len(row)}",
                             lineno, min(len(row), len(header)) + 1)
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell.strip())
            except ValueError:
                raise ParseError(f"line {lineno}, column {col} ({header[col - 1]!r}): "
                                 f"cannot parse {cell!r} as a number", lineno, col) from None
            if not math.isfinite(v):
                raise ParseError(f"line {lineno}, column {col}: non-finite value {cell!r}", lineno, col)
            parsed.append(v)
        values.append(parsed)
    if not values:
        raise IoError(f"{path}: no observations")
    return header, np.asarray(values, dtype=float)


def read_csv(path: str | Path) -> Dataset:
    """Dataset from a CSV file: last column y, earlier columns predictors."""
    header, table = read_table(path)
    if table.shape[1] < 2:
        raise ParseError(f"{path}: need at least one predictor column and a response column", 1, 1)
    return Dataset(table[:, :-1], table[:, -1])


def _fmt(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist(), indent)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _emit(text: str, output: str | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"{flag}: expected finite comma-separated numbers, got {text!r}")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nlfit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, model=True, seed=False):
        if data:
            sp.add_argument("--data", required=True, help="CSV with header; last column is y")
        if model:
            sp.add_argument("--model", required=True, help=f"catalog id: {', '.join(MODEL_IDS)}")
            sp.add_argument("--degree", type=int, help="degree for --model polynomial")
            sp.add_argument("--init", required=True, help="comma-separated starting values")
            sp.add_argument("--solver", choices=sorted(SOLVERS), default="gn")
            sp.add_argument("--max-iter", type=int, default=100)
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--output", help="write to this file instead of stdout")
        if seed:
            sp.add_argument("--seed", type=int, help="64-bit PRNG key (required)")

    common(sub.add_parser("fit", help="least-squares fit with Wald intervals"))

    g = sub.add_parser("glm", help="exponential-family GLM by IRLS")
    common(g, model=False)
    g.add_argument("--family", choices=sorted(glm.FAMILIES), required=True)
    g.add_argument("--link", choices=sorted(glm.LINKS), help="default: the canonical link")
    g.add_argument("--no-intercept", action="store_true", help="do not prepend a column of ones")
    g.add_argument("--max-iter", type=int, default=100)

    r = sub.add_parser("region", help="Wald or likelihood confidence region")
    common(r)
    r.add_argument("--kind", choices=("wald", "likelihood"), default="likelihood")
    r.add_argument("--membership-only", action="store_true", help="skip the boundary grid; test --point values")
    r.add_argument("--point", action="append", default=[], help="parameter vector to test (repeatable)")
    r.add_argument("--grid-size", type=int, default=201)

    c = sub.add_parser("curvature", help="RMS intrinsic and parameter-effects curvature")
    common(c)
    c.add_argument("--directions", type=int, default=curvature.DEFAULT_DIRECTIONS)

    s = sub.add_parser("smooth", help="Nadaraya-Watson kernel smoother")
    common(s, model=False)
    s.add_argument("--bandwidth", type=float, required=True)
    s.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    s.add_argument("--query", help="comma-separated query points (default: the observed x)")
    s.set_defaults(format="csv")

    b = sub.add_parser("bayes", help="random-walk Metropolis posterior summary")
    common(b, seed=True)
    b.add_argument("--iterations", type=int, default=50_000)
    b.add_argument("--burn-in", type=int, default=10_000)
    b.add_argument("--proposal-sd", help="p + 1 comma-separated sds (theta..., log sigma)")
    b.add_argument("--chain-output", help="write the full chain as CSV")

    sm = sub.add_parser("simulate", help="generate a synthetic dataset as CSV")
    common(sm, data=False, model=False, seed=True)
    sm.add_argument("--generator", choices=sorted(sim.THETA_STAR), required=True)
    sm.add_argument("--n", type=int, required=True)
    sm.add_argument("--theta-star", help="override the generating parameters")
    sm.set_defaults(format="csv")

    cv = sub.add_parser("coverage", help="Monte Carlo coverage of confidence regions")
    common(cv, data=False, model=False, seed=True)
    cv.add_argument("--kind", choices=("wald", "likelihood"), default="likelihood")
    cv.add_argument("--n", type=int, default=100)
    cv.add_argument("--reps", type=int, default=500)

    t = sub.add_parser("table1", help="NLS versus Bayesian fits from two starting values")
    common(t, data=False, model=False, seed=True)
    t.add_argument("--n", type=int, default=100)
    t.add_argument("--iterations", type=int, default=50_000)
    t.add_argument("--burn-in", type=int, default=10_000)

    f = sub.add_parser("figure1", help="Wald versus likelihood region boundaries")
    common(f, data=False, model=False, seed=True)
    f.add_argument("--n", type=int, default=50)
    f.add_argument("--grid-size", type=int, default=201)
    f.add_argument("--grid-dir", help="also write wald.csv and likelihood.csv here")
    return p


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    """Parse and validate; raises UsageError naming the offending flag."""
    args = build_parser().parse_args(argv)
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if hasattr(args, "seed") and args.seed is None:
        raise UsageError(f"--seed is required for {args.command}")
    if hasattr(args, "model"):
        try:
            model = get_model(args.model, args.degree)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"--model: {exc.args[0]}") from None
        args.model_spec = model
        args.init_vec = _floats(args.init, "--init")
        if len(args.init_vec) != model.p:
            raise UsageError(f"--init: init length {len(args.init_vec)}, model requires {model.p}")
    if hasattr(args, "max_iter") and args.max_iter < 1:
        raise UsageError("--max-iter must be >= 1")
    for name in ("n", "reps", "iterations", "grid_size", "directions"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.command == "coverage" and args.reps < 100:
        raise UsageError("--reps must be >= 100")
    if args.command in ("bayes", "table1") and not 0 <= args.burn_in < args.iterations:
        raise UsageError("--burn-in must satisfy 0 <= burn-in < iterations")
    if args.command == "bayes" and args.proposal_sd is not None:
        sd = _floats(args.proposal_sd, "--proposal-sd")
        if len(sd) != args.model_spec.p + 1 or min(sd) <= 0:
            raise UsageError(f"--proposal-sd: need {args.model_spec.p + 1} positive values")
        args.proposal_sd = tuple(sd)
    if args.command == "smooth" and not args.bandwidth > 0:
        raise UsageError("--bandwidth must be positive")
    if args.command == "region" and args.kind == "likelihood" and args.model_spec.p != 2 \
            and not args.membership_only:
        raise UsageError(f"--kind likelihood: boundary grid requires p=2 (model {args.model} has "
                         f"p={args.model_spec.p}); use --membership-only")
    if args.command == "simulate" and args.theta_star is not None:
        ts = _floats(args.theta_star, "--theta-star")
        if len(ts) != 2:
            raise UsageError("--theta-star needs 2 values")
        args.theta_star = tuple(ts)
    if args.command == "region":
        pts = [_floats(pt, "--point") for pt in args.point]
        if any(len(pt) != args.model_spec.p for pt in pts):
            raise UsageError(f"--point needs {args.model_spec.p} values")
        args.point = pts
    return args


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _fit_or_fail(args, data: Dataset):
    res = fit(args.model_spec, data, args.init_vec, args.solver, SolverOptions(max_iter=args.max_iter))
    res.raise_for_status()
    return res


def _fit_payload(model: ModelSpec, res, report) -> dict:
    return {
        "model": model.id,
        "parameters": list(model.param_names),
        "method": res.method,
        "status": res.status.value,
        "converged_by": res.converged_by,
        "iterations": res.iterations,
        "n": res.n,
        "theta_hat": res.theta_hat,
        "s_value": res.s_value,
        "s2": report.s2,
        "sigma2_mle": report.sigma2_mle,
        "std_errors": report.std_errors,
        "covariance": report.covariance,
        "alpha": report.alpha,
        "wald_intervals": report.wald_intervals,
    }


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(float(v)) for v in row])
    return buf.getvalue()


def cmd_fit(args) -> str:
    data = read_csv(args.data)
    res = _fit_or_fail(args, data)
    report = inference.build_report(res, data, args.alpha)
    payload = _fit_payload(args.model_spec, res, report)
    if args.format == "csv":
        rows = [[th, se, lo, hi] for th, se, (lo, hi) in
                zip(res.theta_hat, report.std_errors, report.wald_intervals)]
        return _csv_text(["estimate", "std_error", "lower", "upper"], rows)
    return to_json(payload)


def cmd_glm(args) -> str:
    header, table = read_table(args.data)
    X, y = table[:, :-1], table[:, -1]
    names = header[:-1]
    if not args.no_intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["(intercept)", *names]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = glm.irls_fit(args.family, args.link, X, y, SolverOptions(max_iter=args.max_iter))
    grad = glm.glm_gradient(args.family, res.link, X, y, res.beta_hat)
    payload = {
        "family": res.family,
        "link": res.link,
        "coefficients": names,
        "beta_hat": res.beta_hat,
        "status": res.status,
        "iterations": res.iterations,
        "deviance": res.deviance,
        "dispersion": res.dispersion,
        "gradient_norm": float(np.max(np.abs(grad))),
        "warnings": [str(w.message) for w in caught],
    }
    if args.format == "csv":
        return _csv_text(["estimate"], [[b] for b in res.beta_hat])
    return to_json(payload)


def cmd_region(args) -> str:
    data = read_csv(args.data)
    model = args.model_spec
    res = _fit_or_fail(args, data)
    report = inference.build_report(res, data, args.alpha)
    if args.kind == "wald":
        region = inference.wald_region(res, report)
    elif args.membership_only:
        region = inference.likelihood_region(res, model, data, args.alpha)
    else:
        coarse = inference.likelihood_region(res, model, data, args.alpha)
        grid = inference.enclosing_grid(res.theta_hat, report.std_errors, coarse,
                                        (args.grid_size, args.grid_size))
        region = inference.likelihood_region(res, model, data, args.alpha, grid)
    points = args.point or [res.theta_hat.tolist()]
    membership = [{"theta": pt, "statistic": region.statistic(pt), "inside": region.contains(pt)}
                  for pt in points]
    if args.format == "csv" and not args.membership_only:
        if region.boundary_grid is None:
            raise UsageError(f"boundary grid requires p=2 (model {model.id} has p={model.p})")
        return inference.write_grid_csv(region)
    payload = {
        "model": model.id,
        "kind": region.kind,
        "level": region.level,
        "threshold": region.threshold,
        "theta_hat": res.theta_hat,
        "membership": membership,
    }
    if not args.membership_only and region.boundary_grid is not None:
        payload["boundary"] = region.boundary_grid
    return to_json(payload)


def cmd_curvature(args) -> str:
    data = read_csv(args.data)
    res = _fit_or_fail(args, data)
    rep = curvature.rms_curvatures(args.model_spec, data, res, args.alpha, args.directions)
    payload = {"model": args.model_spec.id, "theta_hat": res.theta_hat, **rep.to_dict()}
    return to_json(payload)


def cmd_smooth(args) -> str:
    data = read_csv(args.data)
    if data.k != 1:
        raise UsageError("smooth supports a single predictor column")
    q = np.asarray(_floats(args.query, "--query")) if args.query else data.x[:, 0].copy()
    est = np.atleast_1d(hetero.nadaraya_watson(q, data, hetero.KernelSpec(args.kernel, args.bandwidth)))
    if args.format == "json":
        return to_json({"kernel": args.kernel, "bandwidth": args.bandwidth, "query_x": q, "estimate": est})
    return _csv_text(["query_x", "estimate"], zip(q, est))


def cmd_bayes(args) -> str:
    data = read_csv(args.data)
    model = args.model_spec
    spec = bayes.ChainSpec(tuple(args.init_vec), args.seed, args.iterations, args.burn_in, args.proposal_sd)
    summary, chain = bayes.metropolis_fit(model, data, spec)
    if args.chain_output:
        bayes.write_chain_csv(chain, model.param_names, args.chain_output)
    payload = {"model": model.id, "parameters": list(model.param_names), "seed": args.seed,
               "iterations": args.iterations, "burn_in": args.burn_in, **summary.to_dict()}
    return to_json(payload)


def cmd_simulate(args) -> str:
    data = sim.generate(sim.GeneratorSpec(args.generator, args.n, args.seed, args.theta_star))
    if args.format == "json":
        return to_json({"generator": args.generator, "seed": args.seed, "x": data.x[:, 0], "y": data.y})
    return _csv_text(["x", "y"], zip(data.x[:, 0], data.y))


def cmd_coverage(args) -> str:
    res = sim.coverage_experiment(args.kind, args.n, args.reps, args.alpha, args.seed)
    return to_json(res.to_dict())


def cmd_table1(args) -> str:
    return to_json(sim.table1_experiment(args.seed, args.n, args.iterations, args.burn_in))


def cmd_figure1(args) -> str:
    out = sim.figure1_experiment(args.n, args.seed, args.alpha, (args.grid_size, args.grid_size))
    wald_csv = out.pop("wald_grid_csv")
    lik_csv = out.pop("likelihood_grid_csv")
    if args.grid_dir:
        d = Path(args.grid_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "wald.csv").write_text(wald_csv, encoding="utf-8")
        (d / "likelihood.csv").write_text(lik_csv, encoding="utf-8")
    out["wald_boundary"] = inference.read_grid_csv(wald_csv)[1]
    out["likelihood_boundary"] = inference.read_grid_csv(lik_csv)[1]
    return to_json(out)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(args: argparse.Namespace) -> int:
    try:
        text = HANDLERS[args.command](args)
        _emit(text, args.output)
    except UsageError as exc:
        sys.stderr.write(f"nlfit: usage error: {exc}\n")
        return 2
    except (NlfitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, ParseError):
            err.update(line=exc.line, column=exc.column)
        sys.stderr.write(to_json(err) + "\n")
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"nlfit: usage error: {exc}\n")
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
