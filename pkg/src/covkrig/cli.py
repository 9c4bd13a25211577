"""Experiment command line: convergence runs, adaptive comparison,
target-precision prediction, budget allocation, plus fit/eigs debug dumps.

Every command reads one TOML config (path or preset name), writes CSV files
whose floats carry 17 significant digits (binary round-trip exact), and a
manifest.json recording the config hash, seed and timing.  Reruns with the
same config and seed produce byte-identical outputs.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, resolve_config_arg
from .errors import ConfigurationError, CovkrigError, NoConvergenceError
from .kernels import SQEXP, KernelSpec
from .measures import measure_report
from .model import fit
from .problems import true_means
from .procedures import (
    PURPOSE_TEST,
    PURPOSE_TRAIN,
    _simulate_design_tables,
    predict_m_for_target,
    run_adaptive_experiment,
    run_predict_m_experiment,
    run_static_experiment,
)
from .rates import RateParams, solve_allocation
from .sampling import NORMAL, RngStream, draw_covariates, draw_test_points
from .spectrum import nystrom_eigenvalues, se_gaussian_eigenvalues

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

WORKERS_ENV = "COVKRIG_WORKERS"

CONVERGENCE_COLUMNS = (
    "problem",
    "kernel",
    "dist",
    "m",
    "n",
    "macro_reps",
    "mean_max_imse",
    "se_max_imse",
    "mean_ipfs_ind",
    "se_ipfs_ind",
    "mean_ipfs_apfs",
    "se_ipfs_apfs",
)


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _write_manifest(out_dir: Path, run_cfg, command, elapsed, warnings, extra=None):
    manifest = {
        "command": command,
        "config_path": run_cfg.path,
        "config_hash": run_cfg.config_hash(),
        "master_seed": run_cfg.first.master_seed,
        "tool_version": __version__,
        "elapsed_seconds": round(elapsed, 3),
        "workers": _workers(),
        "warnings": list(warnings),
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _row_values(r, with_strategy=False):
    vals = [
        r.problem,
        r.kernel,
        r.dist,
        r.m,
        r.n,
        r.macro_reps,
        r.mean_max_imse,
        r.se_max_imse,
        r.mean_ipfs_ind,
        r.se_ipfs_ind,
        r.mean_ipfs_apfs,
        r.se_ipfs_apfs,
    ]
    if with_strategy:
        vals.insert(3, r.strategy)
    return vals


def _sorted_rows(rows):
    return sorted(rows, key=lambda r: (r.kernel, r.strategy, r.n, r.m))


def cmd_convergence(args):
    run_cfg = load_config(resolve_config_arg(args.config))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = []
    warnings = []
    for n, cfg in sorted(run_cfg.experiment_by_n.items()):
        table = run_static_experiment(cfg, workers=_workers())
        rows.extend(table.rows)
        failures = sum(r.failures for r in table.rows)
        if failures:
            warnings.append(f"n={n}: {failures} cell fit failure(s)")
    _write_csv(
        out_dir / "convergence.csv",
        CONVERGENCE_COLUMNS,
        [_row_values(r) for r in _sorted_rows(rows)],
    )
    _write_manifest(out_dir, run_cfg, "convergence", time.perf_counter() - t0, warnings)
    print(f"wrote {out_dir / 'convergence.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_adaptive_compare(args):
    run_cfg = load_config(resolve_config_arg(args.config))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    adaptive_cfg = run_cfg.adaptive
    n0 = int(adaptive_cfg.get("n0", run_cfg.first.n))
    pool_size = int(adaptive_cfg.get("pool_size", 512))
    rows = []
    warnings = []
    for n, cfg in sorted(run_cfg.experiment_by_n.items()):
        static = run_static_experiment(cfg, workers=_workers())
        adaptive = run_adaptive_experiment(cfg, n0=n0, pool_size=pool_size, workers=_workers())
        rows.extend(static.rows)
        rows.extend(adaptive.rows)
    columns = CONVERGENCE_COLUMNS[:3] + ("strategy",) + CONVERGENCE_COLUMNS[3:]
    _write_csv(
        out_dir / "adaptive_compare.csv",
        columns,
        [_row_values(r, with_strategy=True) for r in _sorted_rows(rows)],
    )
    _write_manifest(
        out_dir,
        run_cfg,
        "adaptive-compare",
        time.perf_counter() - t0,
        warnings,
        extra={"n0": n0, "pool_size": pool_size, "maximizer": f"pool of {pool_size} draws per step"},
    )
    print(f"wrote {out_dir / 'adaptive_compare.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_predict_m(args):
    if args.slope is not None or args.intercept is not None:
        # direct mode: evaluate the rounding formula on a given fitted line
        if args.slope is None or args.intercept is None or args.c0 is None:
            raise ConfigurationError("--slope, --intercept and --c0 must be given together")
        fake = [(10, float(np.exp(args.intercept + args.slope * np.log(10)))),
                (20, float(np.exp(args.intercept + args.slope * np.log(20)))),
                (40, float(np.exp(args.intercept + args.slope * np.log(40))))]
        result = predict_m_for_target(fake, args.c0)
        print(f"slope={result.slope:.6g} intercept={result.intercept:.6g} m_hat={result.m_hat}")
        return EXIT_OK

    run_cfg = load_config(resolve_config_arg(args.config))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    pm = run_cfg.predict_m
    c0 = args.c0 if args.c0 is not None else pm.get("c0")
    if c0 is None:
        raise ConfigurationError("a target precision c0 is required (--c0 or [predict_m].c0)")
    schedule = pm["subsample_schedule"]
    if len(schedule) < 3:
        raise ConfigurationError("subsample_schedule needs at least 3 sizes")
    cfg = run_cfg.first
    report = run_predict_m_experiment(
        cfg, float(c0), subsample_schedule=schedule, resamples=int(pm["resamples"])
    )
    rows = [(m, v) for m, v in report["curve"]]
    _write_csv(out_dir / "predict_m.csv", ("m", "mean_max_imse"), rows)
    _write_manifest(
        out_dir,
        run_cfg,
        "predict-m",
        time.perf_counter() - t0,
        [],
        extra={
            "c0": float(c0),
            "m_hat": report["m_hat"],
            "slope": report["slope"],
            "intercept": report["intercept"],
            "subsample_schedule": list(report["subsample_schedule"]),
            "resamples": report["resamples"],
        },
    )
    print(
        f"slope={report['slope']:.6g} intercept={report['intercept']:.6g} "
        f"m_hat={report['m_hat']} schedule={list(report['subsample_schedule'])}"
    )
    print(f"wrote {out_dir / 'predict_m.csv'}")
    return EXIT_OK


def cmd_allocate(args):
    run_cfg = load_config(resolve_config_arg(args.config))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    alloc = run_cfg.allocate
    n_tot = int(args.n_tot if args.n_tot is not None else alloc.get("n_tot", 0))
    if n_tot < 1:
        raise ConfigurationError("a positive total budget n_tot is required")
    m = int(alloc.get("m", run_cfg.first.m_schedule[-1]))
    designs = alloc.get("designs")
    if not designs:
        raise ConfigurationError("[allocate].designs must list per-design kernel specs")
    cfg = run_cfg.first
    params, eigs = [], []
    for i, entry in enumerate(designs):
        spec = KernelSpec(
            family=entry.get("family", SQEXP),
            tau2=entry.get("tau2"),
            phi=entry.get("phi"),
            a=entry.get("a"),
            b=entry.get("b"),
        )
        # one shared node draw: the nodes are quadrature points, and sharing
        # them keeps identical kernel specs exactly symmetric
        stream = RngStream(cfg.master_seed, (0, 5, 0, 0, 0))
        eigs.append(
            nystrom_eigenvalues(
                spec, cfg.dist, n_nodes=int(alloc.get("n_nodes", 500)), L=50, stream=stream
            )
        )
        params.append(
            RateParams(
                kernel_class=entry.get("kernel_class", "exp_decay"),
                d=cfg.problem.dim,
                r_star=float(alloc.get("r_star", 2.0)),
                kappa_star=entry.get("kappa_star", 1.0),
                nu_star=entry.get("nu_star"),
                sigma_bar2=float(alloc.get("sigma_bar2", 1.0)),
                sigma_underbar2=float(alloc.get("sigma_underbar2", 1.0)),
                c_f=float(alloc.get("c_f", 1.0)),
                q=int(alloc.get("q", 1)),
                lambda_min_ff=float(alloc.get("lambda_min_ff", 1.0)),
            )
        )
    rho_star, bounds, warnings = solve_allocation(
        params,
        eigs,
        n_tot,
        m,
        grid_resolution=float(alloc.get("grid_resolution", 1e-3)),
        zeta_max=int(alloc.get("zeta_max", 1000)),
    )
    rows = [
        (i, float(rho_star[i]), float(rho_star[i] * n_tot / m), float(bounds[i]))
        for i in range(len(designs))
    ]
    _write_csv(out_dir / "allocation.csv", ("design", "rho", "n_i", "bound"), rows)
    _write_manifest(
        out_dir,
        run_cfg,
        "allocate",
        time.perf_counter() - t0,
        warnings,
        extra={"n_tot": n_tot, "m": m, "max_bound": float(np.max(bounds)),
               "zeta_max": int(alloc.get("zeta_max", 1000)), "r_star": float(alloc.get("r_star", 2.0))},
    )
    print("rho* =", " ".join(f"{v:.6g}" for v in rho_star))
    print("n_i  =", " ".join(f"{v:.6g}" for v in rho_star * n_tot / m))
    print(f"max R_i = {float(np.max(bounds)):.6g}")
    return EXIT_OK


def cmd_fit(args):
    """Single-model debug: fit one design on one cell and print the result."""
    run_cfg = load_config(resolve_config_arg(args.config))
    cfg = run_cfg.first
    m = cfg.m_schedule[0]
    X = draw_covariates(cfg.dist, m, RngStream(cfg.master_seed, (0, PURPOSE_TRAIN, 0, 0, 0)))
    tables = _simulate_design_tables(cfg, X, 0, 0, cfg.n)
    design = int(args.design)
    model = fit(
        X,
        tables[design],
        cfg.kernel_families[0],
        regressors=cfg.regressors,
        noise_degree=cfg.noise_degree,
        search_budget=cfg.search_budget,
        kernel_spec=cfg.kernel_spec,
    )
    Xtest = draw_test_points(
        cfg.dist, cfg.resolved_m_prime(), RngStream(cfg.master_seed, (0, PURPOSE_TEST, 0, 0, 0))
    )
    report = measure_report([model], Xtest, cfg.delta0, true_means=true_means(cfg.problem, Xtest)[:, [design]])
    k = model.kernel
    hyper = f"tau2={k.tau2:.6g} phi={k.phi:.6g}" if k.stationary else f"a={k.a:.6g} b={k.b:.6g}"
    print(f"design={design} family={k.family} {hyper} loglik={model.loglik:.6g}")
    print(f"imse={report.max_imse:.6g} (m={m}, n={cfg.n}, m'={report.m_prime})")
    return EXIT_OK


def cmd_eigs(args):
    """Spectrum dump: closed form for the 1-d SE/Gaussian pair, Nystrom otherwise."""
    run_cfg = load_config(resolve_config_arg(args.config))
    cfg = run_cfg.first
    fam = cfg.kernel_families[0]
    top = int(args.top)
    if args.closed_form:
        if not (fam == SQEXP and cfg.dist.kind == NORMAL and cfg.problem.dim == 1):
            raise ConfigurationError(
                "the closed form needs the sqexp family with 1-d normal sampling"
            )
        a1 = 1.0 / (4.0 * cfg.dist.stdev[0] ** 2)
        seq = se_gaussian_eigenvalues(args.phi, a1, top)
    else:
        spec = KernelSpec(family=fam, tau2=args.tau2, phi=args.phi)
        seq = nystrom_eigenvalues(
            spec, cfg.dist, n_nodes=int(args.nodes), L=top,
            stream=RngStream(cfg.master_seed, (0, 5, 0, 0, 0)),
        )
    for l, v in enumerate(seq.values, start=1):
        print(f"mu_{l} = {v:.10g}")
    print(f"tail_bound = {seq.tail_bound:.10g}  trace = {seq.trace():.10g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="covkrig",
        description="Stochastic-kriging convergence experiments over a covariate space",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="static convergence experiment -> convergence.csv")
    p.add_argument("config", help="config file path or preset name")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("adaptive-compare", help="static vs adaptive sampling -> one CSV")
    p.add_argument("config")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_adaptive_compare)

    p = sub.add_parser("predict-m", help="target-precision prediction of m")
    p.add_argument("config", nargs="?", default=None)
    p.add_argument("--c0", type=float, default=None, help="target maximal IMSE")
    p.add_argument("--slope", type=float, default=None, help="direct mode: fitted slope")
    p.add_argument("--intercept", type=float, default=None, help="direct mode: fitted intercept")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_predict_m)

    p = sub.add_parser("allocate", help="min-max budget allocation across designs")
    p.add_argument("config")
    p.add_argument("--n-tot", type=int, default=None, dest="n_tot")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("fit", help="debug: fit a single design once and print hyperparameters")
    p.add_argument("config")
    p.add_argument("--design", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eigs", help="debug: dump kernel eigenvalues")
    p.add_argument("config")
    p.add_argument("--tau2", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--nodes", type=int, default=500)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--closed-form", action="store_true")
    p.set_defaults(func=cmd_eigs)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CovkrigError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
