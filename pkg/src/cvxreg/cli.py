"""Command line interface: ``cvxreg {synth,fit,eval,bench,report}``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge (outputs
are still written), 4 I/O failure. Every command writes
``<out>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import __version__, admm, constraints, harness, interpolant
from .model import CertifiedModel, CvxRegError, FunctionClass, ValidationError, validate_observations

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


class InvalidFlag(ValidationError):
    pass


def _fmt(v):
    return f"{v:.17g}"


def _default_workers():
    env = os.environ.get("CVXREG_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidFlag(f"CVXREG_WORKERS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out, subcommand, config, inputs, outputs, seed=None):
    _write_json(f"{out}.manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
    })


# --- data files ---------------------------------------------------------------


def write_data(path, X, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{k}" for k in range(X.shape[1])] + ["y"])
        for row, val in zip(X, y):
            w.writerow([_fmt(v) for v in row] + [_fmt(val)])


def read_data(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    if header[-1] != "y" or not all(h == f"x_{k}" for k, h in enumerate(header[:-1])):
        raise ValidationError(f"{path}: expected header x_0,...,x_(d-1),y")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows")
    return validate_observations(data[:, :-1], data[:, -1])


def model_to_json(model, config, trace, converged):
    worst = model.worst
    return {
        "schema_version": SCHEMA_VERSION,
        "class": model.fclass.to_json(),
        "sites": model.sites.tolist(),
        "f": model.values.tolist(),
        "g": model.gradients.tolist(),
        "certified": bool(model.certified),
        "worst_residual": None if worst is None else
        {"i": worst.i, "j": worst.j, "residual": worst.residual},
        "trace": {
            "iterations": trace.iterations,
            "final_residual": trace.residual[-1] if trace.residual else None,
            "final_objective": trace.objective[-1] if trace.objective else None,
            "converged": bool(converged),
            "newton_failures": trace.newton_failures,
        },
        "config": config,
    }


def model_from_json(obj):
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema {obj.get('schema_version')!r}")
    fclass = FunctionClass.from_json(obj["class"])
    model = CertifiedModel(np.array(obj["sites"], dtype=float), np.array(obj["f"], dtype=float),
                           np.array(obj["g"], dtype=float), fclass)
    model.certified = bool(obj.get("certified", False))
    return model


def read_model(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return model_from_json(obj)


TRUE_FUNCTIONS = {"x2": harness.quadratic, "none": None}


# --- commands -----------------------------------------------------------------


def cmd_synth(args):
    if args.n < 2:
        raise InvalidFlag("--n must be >= 2")
    if args.sigma < 0:
        raise InvalidFlag("--sigma must be >= 0")
    obs = harness.synth_quadratic(args.n, args.sigma, args.seed, random_sites=args.random_sites)
    write_data(args.out, obs.points, obs.values)
    write_manifest(args.out, "synth",
                   {"n": args.n, "sigma": args.sigma, "random_sites": args.random_sites},
                   {}, {"data": args.out}, seed=args.seed)
    return EXIT_OK


def _fit_config(args, n):
    try:
        fclass = FunctionClass(args.mu, args.L)
    except ValidationError as exc:
        raise InvalidFlag(str(exc)) from None
    workers = args.workers if args.workers is not None else _default_workers()
    cfg = admm.AdmmConfig(rho=args.rho, eps=args.eps, max_iters=args.max_iters,
                          z_update=args.z_update, workers=workers)
    resolved = {
        "mu": fclass.mu, "L": fclass.to_json()["L"], "rho": cfg.resolved_rho(n), "eps": cfg.eps,
        "max_iters": cfg.max_iters, "warm_start": args.warm_start,
        "z_update": cfg.z_update.value, "workers": workers,
        "newton_tol": cfg.newton_tol, "max_newton_iters": cfg.max_newton_iters,
        "certify_tol": args.certify_tol,
    }
    return fclass, cfg, resolved


def evaluate_grid(model, lo, hi, ns, true_fn):
    """Grid values of the model's interpolant plus the error metric if ``true_fn``."""
    if model.d != 1:
        raise ValidationError("grid evaluation needs one-dimensional sites")
    if ns < 2:
        raise InvalidFlag("--ns must be >= 2")
    interp = interpolant.build(model)
    grid = np.linspace(lo, hi, ns)
    values, ok = interpolant.evaluate_many(interp, grid[:, None], raise_on_fail=False)
    truth = None if true_fn is None else np.asarray(true_fn(grid), dtype=float)
    metric = None if truth is None else float(np.mean((values - truth) ** 2))
    return grid, values, truth, ok, metric


def write_grid(path, grid, values, truth, ok):
    header = ["x", "phi_hat"] + (["phi_true"] if truth is not None else [])
    flagged = not np.all(ok)
    if flagged:
        header.append("converged")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(grid)):
            row = [_fmt(grid[k]), _fmt(values[k])]
            if truth is not None:
                row.append(_fmt(truth[k]))
            if flagged:
                row.append(int(ok[k]))
            w.writerow(row)


def _run_eval(model, args, out, model_path):
    lo, hi = args.range
    grid, values, truth, ok, metric = evaluate_grid(model, lo, hi, args.ns, TRUE_FUNCTIONS[args.true_fn])
    write_grid(out, grid, values, truth, ok)
    outputs = {"grid": out}
    if metric is not None:
        _write_json(f"{out}.metric.json", {"schema_version": SCHEMA_VERSION, "E": metric,
                                           "range": [lo, hi], "ns": args.ns, "true_fn": args.true_fn})
        outputs["metric"] = f"{out}.metric.json"
    write_manifest(out, "eval", {"range": [lo, hi], "ns": args.ns, "true_fn": args.true_fn},
                   {"model": model_path}, outputs)
    return EXIT_OK if np.all(ok) else EXIT_NOT_CONVERGED


def cmd_fit(args):
    obs = read_data(args.input)
    fclass, cfg, resolved = _fit_config(args, obs.n)
    z0 = harness.warm_start_vector(obs, args.warm_start)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", admm.ConvergenceWarning)
        res = admm.fit(obs, fclass, cfg, warm_start=z0)
    constraints.certify(res.model, args.certify_tol)
    _write_json(args.out, model_to_json(res.model, resolved, res.trace, res.converged))
    write_manifest(args.out, "fit", resolved, {"data": args.input}, {"model": args.out})
    status = EXIT_OK if res.converged else EXIT_NOT_CONVERGED
    if args.pipeline:
        if not args.eval_out:
            raise InvalidFlag("--pipeline needs --eval-out")
        # evaluate exactly what was written, as `eval` would read it back
        ev = _run_eval(read_model(args.out), args, args.eval_out, args.out)
        status = max(status, ev)
    return status


def cmd_eval(args):
    model = read_model(args.model)
    return _run_eval(model, args, args.out, args.model)


def cmd_bench(args):
    workers = args.workers if args.workers is not None else _default_workers()
    try:
        fclass = FunctionClass(args.mu, args.L)
    except ValidationError as exc:
        raise InvalidFlag(str(exc)) from None
    if any(n < 2 for n in args.n_list) or args.seeds < 1:
        raise InvalidFlag("--n-list entries must be >= 2 and --seeds >= 1")
    configs = []
    for eps in args.eps_list:
        for n in args.n_list:
            for seed in range(args.seeds):
                configs.append(harness.ExperimentConfig(
                    n=n, noise_sigma=args.sigma, fclass=fclass, seed=seed,
                    admm=admm.AdmmConfig(eps=eps, max_iters=args.max_iters, workers=workers),
                    warm_start=args.warm_start))
    records = harness.bench_scaling(configs, timing=not args.no_timing)
    timing_path = None if args.no_timing else f"{args.out}.timing.csv"
    harness.write_records(records, args.out, timing_path)
    harness.write_records_json(records, f"{args.out}.json")
    outputs = {"records": args.out, "records_json": f"{args.out}.json"}
    if timing_path:
        outputs["timing"] = timing_path
    write_manifest(args.out, "bench", {
        "n_list": args.n_list, "seeds": args.seeds, "sigma": args.sigma, "eps_list": args.eps_list,
        "mu": fclass.mu, "L": fclass.to_json()["L"], "max_iters": args.max_iters,
        "warm_start": args.warm_start, "workers": workers, "timing": not args.no_timing,
    }, {}, outputs, seed=list(range(args.seeds)))
    return EXIT_OK


def format_table(table):
    cols = ["method", "n", "runs"] + [k for k in ("iters", "residual", "E_metric",
                                                  "time_total_s", "time_per_iter_s")
                                       if table and k in table[0]]
    lines = [",".join(cols)]
    for row in table:
        lines.append(",".join(_fmt(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def cmd_report(args):
    rows = harness.read_records(args.input)
    timing_path = f"{args.input}.timing.csv"
    if os.path.exists(timing_path):
        key = ("n", "method", "seed", "eps")
        times = {tuple(r[k] for k in key): r for r in harness.read_records(timing_path)}
        for r in rows:
            t = times.get(tuple(r[k] for k in key))
            if t is not None:
                r.update(time_total_s=t["time_total_s"], time_per_iter_s=t["time_per_iter_s"])
    text = format_table(harness.aggregate(rows))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _add_eval_flags(p):
    p.add_argument("--range", nargs=2, type=float, default=[-1.0, 1.0], metavar=("A", "B"))
    p.add_argument("--ns", type=int, default=1000)
    p.add_argument("--true-fn", choices=sorted(TRUE_FUNCTIONS), default="none")


def build_parser():
    parser = argparse.ArgumentParser(prog="cvxreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="noisy samples of x^2 on [-1, 1]")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-sites", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a model to a data CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--L", default="5", help='number or "inf"')
    p.add_argument("--rho", type=float, default=None, help="default 1/n")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--warm-start", choices=["gp", "none"], default="gp")
    p.add_argument("--z-update", choices=["exact", "paper"], default="exact")
    p.add_argument("--certify-tol", type=float, default=1e-6)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--pipeline", action="store_true", help="also evaluate the fitted model on a grid")
    p.add_argument("--eval-out", default=None)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a model file on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="scaling and accuracy benchmark on synthetic data")
    p.add_argument("--n-list", nargs="+", type=int, required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--eps-list", nargs="+", type=float, default=[0.03, 0.01])
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--L", default="5")
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--warm-start", choices=["gp", "none"], default="gp")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-timing", action="store_true", help="skip the per-iteration timing runs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="aggregate a bench records CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"cvxreg: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cvxreg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CvxRegError as exc:
        print(f"cvxreg: solver error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
