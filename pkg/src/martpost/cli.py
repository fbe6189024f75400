"""Command-line front end.

Every command writes its outputs plus one ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np
from scipy import stats

from . import __version__
from .bootstrap import UnsupportedStatistic, bayesian_bootstrap, efron_bootstrap
from .config import CopulaConfig, InitialDensity
from .conjugate import PINNED_DATA, NormalModelState, exact_posterior, forward_sample_posterior_mean, terminal_variance
from .density import FitState, fit_multivariate, prequential_loglik
from .diagnostics import run_suite
from .io import DataError, load_fit, read_csv, save_fit, select_columns, write_csv
from .optimize import OptimizationError, OptimizationSpec, optimize_rho
from .regression import (
    RegressionFit,
    classifier_prequential_loglik,
    fit_classifier,
    fit_regression,
    regression_prequential_loglik,
)
from .resampling import (
    THREADS_ENV,
    ResampleConfig,
    default_grid,
    extract_statistics,
    resample_classifier,
    resample_multivariate,
    resample_regression,
    resample_univariate,
    tensor_grid,
)
from .special import AlphaSchedule

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


FIT_DEFAULTS = {
    "rho": "0.8",
    "rho_y": None,
    "perms": 10,
    "seed": 0,
    "alpha": "paper_default",
    "alpha_a": None,
    "mode": "conditional",
    "init_mean": None,
    "init_sd": None,
    "standardize": True,
}


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _resolve(args, defaults: dict) -> dict:
    """Command-line flags > config file > built-in defaults."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise DataError(f"cannot read config file {args.config}: {err}") from None
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else cfg.get(key, default)
    return out


def _copula_config(opts: dict) -> CopulaConfig:
    init = InitialDensity()
    if opts["init_mean"] is not None or opts["init_sd"] is not None:
        if opts["init_mean"] is None or opts["init_sd"] is None:
            raise UsageError("--init-mean and --init-sd go together")
        init = InitialDensity("user_normal", _floats(opts["init_mean"]), _floats(opts["init_sd"]))
    schedule = AlphaSchedule(opts["alpha"], opts["alpha_a"])
    rho = (0.5,) if str(opts["rho"]) == "auto" else _floats(opts["rho"])
    return CopulaConfig(rho=rho, alpha=schedule, init=init, permutations=int(opts["perms"]), seed=int(opts["seed"]),
                        rho_y=None if opts["rho_y"] is None else float(opts["rho_y"]),
                        standardize=bool(opts["standardize"]))


def _write_manifest(out, command, argv, inputs, config, seed, timings):
    manifest = {"command": command, "argv": list(argv), "inputs": inputs, "config": config, "master_seed": seed,
                "version": __version__, "timings": timings}
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# -- fit -------------------------------------------------------------------


def cmd_fit(args, argv):
    t0 = time.perf_counter()
    opts = _resolve(args, FIT_DEFAULTS)
    try:
        config = _copula_config(opts)
    except ValueError as err:
        raise UsageError(str(err)) from None
    header, data = read_csv(args.input)
    if data.shape[0] == 0:
        raise DataError(f"{args.input}: no data rows")
    target = args.response or args.label
    if args.response and args.label:
        raise UsageError("use either --response or --label, not both")
    cols = args.cols.split(",") if args.cols else [h for h in header if h != target]
    auto = str(opts["rho"]) == "auto"
    trace = None
    if target is None:
        y = select_columns(header, data, cols)
        if auto:
            res = optimize_rho(y, config, OptimizationSpec(shared_rho=not args.per_dim_rho))
            config, trace = res.config, res.trace
        fit = fit_multivariate(y, config, names=cols)
        score = prequential_loglik(fit)
        columns = cols
    else:
        x = select_columns(header, data, [c for c in cols if c != target])
        resp = select_columns(header, data, [target])[:, 0]
        columns = [c for c in cols if c != target] + [target]
        kw = {"labels": resp} if args.label else {"y": resp}
        if auto:
            res = optimize_rho(x, config, OptimizationSpec(shared_rho=not args.per_dim_rho), mode=opts["mode"], **kw)
            config, trace = res.config, res.trace
        if args.label:
            fit = fit_classifier(x, resp, config, opts["mode"])
            score = classifier_prequential_loglik(fit)
        else:
            fit = fit_regression(x, resp, config, opts["mode"])
            score = regression_prequential_loglik(fit)
    os.makedirs(args.out, exist_ok=True)
    save_fit(os.path.join(args.out, "fit.json"), fit, columns)
    report = {"prequential_loglik": score, "rho": list(config.rho), "rho_y": config.rho_y, "rho_selected": auto,
              "permutation_seeds": [s for s in fit.perm_seeds], "n": int(fit.n), "columns": columns}
    _write_json(os.path.join(args.out, "score.json"), report)
    if trace is not None:
        write_csv(os.path.join(args.out, "optimization_trace.csv"), ["iteration", "coordinate", "rho", "score"],
                  [(int(i), int(k), r, s) for i, k, r, s in trace])
    _write_manifest(args.out, "fit", argv, {"input": args.input}, {**opts, "resolved": config.to_dict(),
                    "response": args.response, "label": args.label, "cols": cols}, config.seed,
                    {"total_s": time.perf_counter() - t0})
    print(f"prequential log-likelihood {score:.6f}; rho {', '.join(f'{r:.4f}' for r in config.rho)}")


# -- resample --------------------------------------------------------------


def _probe_matrix(path, columns):
    header, data = read_csv(path)
    return select_columns(header, data, columns)


def _summary(values):
    return {"mean": np.mean(values, axis=0).tolist(), "q025": np.quantile(values, 0.025, axis=0).tolist(),
            "q975": np.quantile(values, 0.975, axis=0).tolist()}


def cmd_resample(args, argv):
    t0 = time.perf_counter()
    fit, columns = load_fit(args.fit)
    rc = ResampleConfig(forward_steps=args.forward, ensemble_size=args.samples, master_seed=args.seed,
                        record_trace=args.trace, trace_stride=args.stride, workers=args.threads)
    if isinstance(fit, FitState) and fit.d == 1:
        if args.grid_min is not None or args.grid_max is not None:
            g0 = default_grid(fit)
            lo = args.grid_min if args.grid_min is not None else g0[0]
            hi = args.grid_max if args.grid_max is not None else g0[-1]
            grid = np.linspace(lo, hi, args.grid_size)
        else:
            grid = default_grid(fit, args.grid_size)
        ens = resample_univariate(fit, grid, rc)
    elif isinstance(fit, FitState):
        if args.probes:
            nodes = _probe_matrix(args.probes, columns)
        else:
            size = args.grid_size if args.grid_size ** fit.d <= 10_000 else int(10_000 ** (1.0 / fit.d))
            axes = [fit.mean[k] + fit.sd[k] * np.linspace(-3, 3, size) for k in np.argsort(fit.ordering)]
            nodes = tensor_grid(axes)
        ens = resample_multivariate(fit, nodes, rc)
    else:
        cov = columns[:-1]
        if args.probes:
            xp = _probe_matrix(args.probes, cov)
        else:
            xp = fit.train_x[: min(fit.n, 10)] * fit.x_sd + fit.x_mean
        if isinstance(fit, RegressionFit):
            y_grid = fit.y_mean + fit.y_sd * np.linspace(-4, 4, args.grid_size)
            ens = resample_regression(fit, xp, y_grid, rc)
        else:
            ens = resample_classifier(fit, xp, rc)
    os.makedirs(args.out, exist_ok=True)
    B = ens.size
    if args.statistic:
        vals = extract_statistics(ens, args.statistic)
        write_csv(os.path.join(args.out, "statistics.csv"), ["trajectory", "statistic", "value"],
                  [(b, args.statistic, vals[b]) for b in range(B)])
        summary = {"statistic": args.statistic, **_summary(vals)}
    else:
        K = ens.cdf.shape[1]
        if ens.kind == "multivariate":
            d = ens.cdf.shape[2]
            header = ["trajectory", "node", "density"] + [f"cdf_{j}" for j in range(d)]
            rows = [(b, k, ens.density[b, k], *ens.cdf[b, k]) for b in range(B) for k in range(K)]
        elif ens.kind == "classifier":
            header = ["trajectory", "node", "prob"]
            rows = [(b, k, ens.cdf[b, k]) for b in range(B) for k in range(K)]
        else:
            header = ["trajectory", "node", "density", "cdf"]
            rows = [(b, k, ens.density[b, k], ens.cdf[b, k]) for b in range(B) for k in range(K)]
        write_csv(os.path.join(args.out, "ensemble.csv"), header, rows)
        write_csv(os.path.join(args.out, "nodes.csv"), _node_header(ens, columns), _node_rows(ens))
        main_vals = ens.cdf if ens.kind == "classifier" else ens.density
        summary = {"node_count": K, "density" if ens.kind != "classifier" else "prob": _summary(main_vals)}
    if args.trace:
        steps, tr = ens.trace_steps, ens.trace
        write_csv(os.path.join(args.out, "trace.csv"), ["trajectory", "step", "l1_p", "l1_P", "mean_abs_p"],
                  [(b, int(steps[t]), *tr[b, t]) for b in range(B) for t in range(len(steps))])
    summary.update({"kind": ens.kind, "trajectories": B, "forward_steps": args.forward, "n": int(ens.n)})
    _write_json(os.path.join(args.out, "summary.json"), summary)
    _write_manifest(args.out, "resample", argv, {"fit": args.fit, "probes": args.probes},
                    {"forward": args.forward, "samples": args.samples, "grid_size": args.grid_size,
                     "grid_min": args.grid_min, "grid_max": args.grid_max, "statistic": args.statistic,
                     "trace": args.trace, "stride": args.stride}, args.seed, {"total_s": time.perf_counter() - t0})


def _node_header(ens, columns):
    if ens.kind == "univariate":
        return ["node", columns[0] if columns else "y"]
    if ens.kind == "regression":
        return ["node"] + list(columns)
    return ["node"] + list(columns[: ens.nodes.shape[1]])


def _node_rows(ens):
    if ens.kind == "univariate":
        return [(k, v) for k, v in enumerate(ens.nodes)]
    if ens.kind == "regression":
        y_grid = ens.meta["y_grid"]
        return [(k * len(y_grid) + g, *x, yv) for k, x in enumerate(ens.nodes) for g, yv in enumerate(y_grid)]
    return [(k, *x) for k, x in enumerate(ens.nodes)]


# -- bootstrap ---------------------------------------------------------------


def cmd_bootstrap(args, argv):
    t0 = time.perf_counter()
    header, data = read_csv(args.input)
    col = args.col or header[0]
    y = select_columns(header, data, [col])[:, 0]
    fn = bayesian_bootstrap if args.kind == "bayes" else efron_bootstrap
    ens = fn(y, args.statistic, args.samples, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "bootstrap.csv"), ["replicate", "value"],
              [(b, v) for b, v in enumerate(ens.values)])
    _write_json(os.path.join(args.out, "summary.json"),
                {"kind": args.kind, "statistic": args.statistic, "samples": args.samples,
                 "variance": float(np.var(ens.values)), **_summary(ens.values)})
    _write_manifest(args.out, "bootstrap", argv, {"input": args.input},
                    {"kind": args.kind, "statistic": args.statistic, "samples": args.samples, "col": col},
                    args.seed, {"total_s": time.perf_counter() - t0})


# -- diagnose ----------------------------------------------------------------


def cmd_diagnose(args, argv):
    t0 = time.perf_counter()
    fit, columns = load_fit(args.fit)
    probes = _probe_matrix(args.probes, columns) if args.probes else None
    suites = tuple(args.suite.split(","))
    report = run_suite(fit, suites, probes=probes, N=args.N, continuation=args.continuation,
                       trajectories=args.trajectories, seed=args.seed, workers=args.threads)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "diagnostics.json"), report)
    _write_manifest(args.out, "diagnose", argv, {"fit": args.fit, "probes": args.probes},
                    {"suite": list(suites), "N": args.N, "continuation": args.continuation,
                     "trajectories": args.trajectories}, args.seed, {"total_s": time.perf_counter() - t0})
    for r in report["reports"]:
        print(f"{r['check']}: {'PASS' if r['passed'] else 'FAIL'}")
    if not report["passed"]:
        raise NumericFailure("one or more diagnostics failed")


# -- example-normal ----------------------------------------------------------


def example_data(n: int, seed: int) -> np.ndarray:
    if n == len(PINNED_DATA):
        return PINNED_DATA.copy()
    return np.random.default_rng(seed).normal(2.0, 1.0, n)


def cmd_example_normal(args, argv):
    t0 = time.perf_counter()
    data = example_data(args.n, args.seed)
    state = NormalModelState.from_data(data)
    res = forward_sample_posterior_mean(state, args.forward, args.samples, args.seed, record_paths=args.paths > 0)
    mean, var = exact_posterior(data)
    N = args.n + args.forward
    terminal = res.terminal
    sd_ratio = float(np.std(terminal) / np.sqrt(var))
    expected_ratio = float(np.sqrt(terminal_variance(args.n, N) / var))
    ks = float(stats.kstest(terminal, "norm", args=(mean, np.sqrt(var))).statistic)
    report = {"n": args.n, "N": N, "samples": args.samples, "posterior_mean": mean, "posterior_var": var,
              "terminal_mean": float(np.mean(terminal)), "terminal_var": float(np.var(terminal)),
              "mean_diff": float(np.mean(terminal) - mean), "sd_ratio": sd_ratio,
              "expected_sd_ratio": expected_ratio, "ks_statistic": ks,
              "passed": bool(abs(np.mean(terminal) - mean) < 0.02 and abs(sd_ratio / expected_ratio - 1) < 0.05
                             and ks < 0.05)}
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "terminal.csv"), ["trajectory", "theta_N"],
              [(b, v) for b, v in enumerate(terminal)])
    if args.paths > 0:
        k = min(args.paths, args.samples)
        write_csv(os.path.join(args.out, "paths.csv"), ["trajectory", "step", "theta"],
                  [(b, t, res.paths[b, t]) for b in range(k) for t in range(args.forward + 1)])
    _write_json(os.path.join(args.out, "report.json"), report)
    _write_manifest(args.out, "example-normal", argv, {}, {"n": args.n, "forward": args.forward,
                    "samples": args.samples, "paths": args.paths}, args.seed, {"total_s": time.perf_counter() - t0})
    print(f"KS {ks:.4f}; mean diff {report['mean_diff']:.4f}; sd ratio {sd_ratio:.4f} "
          f"(expected {expected_ratio:.4f})")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="martpost", description="Martingale posteriors via copula predictive resampling.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="fit a copula predictive to CSV data")
    f.add_argument("--input", required=True)
    f.add_argument("--cols", help="comma-separated columns (default: all but the response/label)")
    f.add_argument("--response", help="response column for regression")
    f.add_argument("--label", help="binary label column for classification")
    f.add_argument("--mode", choices=("joint", "conditional"))
    f.add_argument("--rho", help="bandwidth(s), comma-separated, or 'auto'")
    f.add_argument("--rho-y", dest="rho_y", type=float)
    f.add_argument("--per-dim-rho", action="store_true", help="with --rho auto, one bandwidth per dimension")
    f.add_argument("--perms", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--alpha", choices=AlphaSchedule.FORMS)
    f.add_argument("--alpha-a", dest="alpha_a", type=float)
    f.add_argument("--init-mean", dest="init_mean")
    f.add_argument("--init-sd", dest="init_sd")
    f.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    f.add_argument("--config", help="JSON file of defaults for the options above")
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("resample", help="predictive resampling from a fit document")
    r.add_argument("--fit", required=True)
    r.add_argument("--out", default=".")
    r.add_argument("--forward", type=int, default=5000)
    r.add_argument("--samples", type=int, default=1000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--grid-size", dest="grid_size", type=int, default=200)
    r.add_argument("--grid-min", dest="grid_min", type=float)
    r.add_argument("--grid-max", dest="grid_max", type=float)
    r.add_argument("--probes", help="CSV of probe points (columns named as in the fit)")
    r.add_argument("--statistic", help="mean | var | modes | quantile:<tau>")
    r.add_argument("--trace", action="store_true")
    r.add_argument("--stride", type=int, default=50)
    r.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or CPU count)")
    r.set_defaults(func=cmd_resample)

    b = sub.add_parser("bootstrap", help="Bayesian or Efron bootstrap of a statistic")
    b.add_argument("--input", required=True)
    b.add_argument("--col")
    b.add_argument("--kind", choices=("bayes", "efron"), default="bayes")
    b.add_argument("--statistic", default="mean")
    b.add_argument("--samples", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=".")
    b.set_defaults(func=cmd_bootstrap)

    d = sub.add_parser("diagnose", help="invariant checks on a fit document")
    d.add_argument("--fit", required=True)
    d.add_argument("--suite", default="martingale,normalization,concentration")
    d.add_argument("--probes")
    d.add_argument("--N", type=int)
    d.add_argument("--continuation", type=int, default=1000)
    d.add_argument("--trajectories", type=int, default=1000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--threads", type=int)
    d.add_argument("--out", default=".")
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("example-normal", help="conjugate normal forward-sampling reproduction")
    e.add_argument("--n", type=int, default=10)
    e.add_argument("--forward", type=int, default=1000)
    e.add_argument("--samples", type=int, default=2000)
    e.add_argument("--paths", type=int, default=20, help="number of trajectories whose paths are written")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_example_normal)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        for name in ("forward", "samples", "stride", "grid_size", "trajectories", "continuation"):
            if getattr(args, name, 0) is not None and getattr(args, name, 0) < 0:
                raise UsageError(f"--{name.replace('_', '-')} must be non-negative")
        args.func(args, argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, UnsupportedStatistic, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (OptimizationError, NumericFailure, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
