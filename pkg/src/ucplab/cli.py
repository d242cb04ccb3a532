"""Command-line entry point ``ucp-lab``.

Exit codes: 0 success, 1 compute failure, 2 configuration error.
"""

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__, anderson, constants, geometry
from .anderson import CouplingDistribution, DeloneAndersonModel
from .config import load_config, resolve
from .exceptions import ConfigError, UcpLabError
from .io import jsonable, write_csv, write_json
from .plotdata import MalformedReport, emit_plot_data
from .selftest import run_selftest
from .ucp import UCPVerifier, UcpReport

log = logging.getLogger("ucplab")

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG = 0, 1, 2


def pool_size(flag=None):
    """Worker count: the flag, else ``UCPLAB_THREADS``, else the CPU count."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("UCPLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"UCPLAB_THREADS must be an integer, got {env!r}", field="UCPLAB_THREADS")
    return os.cpu_count() or 1


# building blocks from a resolved config ----------------------------------------

def background_from(cfg):
    v0 = cfg["model"]["V0"]
    if v0.get("kind", "cosine") == "zero":
        return None
    return anderson.cosine_background(v0.get("amplitude", 0.5))


def distribution_from(cfg):
    spec = dict(cfg["model"]["distribution"])
    return CouplingDistribution(spec.pop("kind", "uniform"), **spec)


def model_from(cfg):
    m = cfg["model"]
    return DeloneAndersonModel(V0=background_from(cfg), C_minus=m["C_minus"], C_plus=m["C_plus"],
                               delta_minus=m["delta_minus"], delta_plus=m["delta_plus"],
                               dist=distribution_from(cfg), profile=m["profile"])


def carleman_from(cfg):
    c = cfg["constants"]
    return constants.CarlemanConfig(c["C2"], c["C3"], c["K_Delta"], c["C_dim"])


def _L_list(cfg):
    L = cfg["numeric"]["L"]
    return [int(x) if float(x).is_integer() else x for x in (L if isinstance(L, list) else [L])]


def _first_L(cfg):
    return _L_list(cfg)[0]


# experiments -------------------------------------------------------------------

def run_ucp(cfg, out, n_jobs):
    n = cfg["numeric"]
    est = UCPVerifier(V0=background_from(cfg), L_values=_L_list(cfg), d=n["d"], bc=n["bc"],
                      n_eigs=n["n_eigs"], delta=n["delta"], nodes_per_unit=n["nodes_per_unit"],
                      balls=cfg["model"]["balls"], seed=cfg["randomness"]["seed"], T=n.get("T"),
                      tol=n["tol"], config=carleman_from(cfg), n_jobs=n_jobs).fit()
    write_csv(os.path.join(out, "ucp_report.csv"), [r.row() for r in est.reports_], UcpReport.CSV_COLUMNS)
    return est.summary()


def run_wegner(cfg, out, n_jobs):
    n, r, c = cfg["numeric"], cfg["randomness"], cfg["constants"]
    est = anderson.WegnerEstimator(
        model=model_from(cfg), L=_first_L(cfg), d=n["d"], bc=n["bc"], E=n["E"], E_offset=n["E_offset"],
        epsilons=tuple(n["epsilons"]), n_real=r["n_real"], seed=r["seed"],
        nodes_per_unit=n["nodes_per_unit"], kappa=n["kappa"], q=n["q"], config=carleman_from(cfg),
        K1=c["K1"], K2=c["K2"], n_jobs=n_jobs).fit()
    write_csv(os.path.join(out, "wegner.csv"), est.table_, anderson.WegnerEstimator.CSV_COLUMNS)
    return {"lambda0": est.lambda0_, "E": est.E_, "slope_fit": est.slope_, "monotone": est.monotone_,
            "n_dropped": len(est.dropped_), "C_W": est.c_W_, "window_J": list(est.window_J_)}


def _lift(cfg):
    n = cfg["numeric"]
    return anderson.EigenvalueLifting(model=model_from(cfg), L=_first_L(cfg), d=n["d"], bc=n["bc"],
                                      nodes_per_unit=n["nodes_per_unit"], t_values=tuple(n["t_values"]),
                                      eta=n["eta"], config=carleman_from(cfg)).fit()


def _lift_summary(est):
    return {"kappa_emp": est.kappa_emp_, "kappa_analytic": est.kappa_analytic_,
            "min_lift_margin": float(est.lift_margins().min()),
            "max_second_difference": float(est.second_differences().max(initial=-np.inf)),
            "max_hf_residual": float(np.nanmax(est.hf_residuals_ / (1 + np.abs(est.lambda_)))),
            "hf_skipped_t": est.skipped_}


def run_lift(cfg, out, n_jobs):
    est = _lift(cfg)
    write_csv(os.path.join(out, "lift.csv"), est.curve_rows(), ("t", "lambda", "hf_lhs", "hf_rhs"))
    return _lift_summary(est)


def run_uncertainty(cfg, out, n_jobs):
    est = _lift(cfg)
    q = cfg["numeric"]["q"]
    kappa = cfg["numeric"]["kappa"] or est.kappa_emp_
    res = anderson.uncertainty_check(est.H0_, est.W_, q, kappa)
    write_csv(os.path.join(out, "lift.csv"), est.curve_rows(), ("t", "lambda", "hf_lhs", "hf_rhs"))
    row = {"q": q, "kappa": kappa, "status": res.status, "min_eigenvalue": res.min_eigenvalue,
           "dim": res.dim, "bound": res.bound, "energy_cut": res.energy_cut, "ok": res.ok}
    write_csv(os.path.join(out, "uncertainty.csv"), [row])
    return {**_lift_summary(est), "uncertainty": row}


def run_ssf(cfg, out, n_jobs):
    n, seed = cfg["numeric"], cfg["randomness"]["seed"]
    size, rank_max = n["matrix_size"], n["rank"]
    steps, summary = [], []
    for i in range(n["n_instances"]):
        rng = np.random.default_rng([seed, i])
        A = rng.standard_normal((size, size))
        A = (A + A.T) / 2
        rank = int(rng.integers(1, rank_max + 1))
        V = rng.standard_normal((size, rank))
        u = V @ np.diag(rng.uniform(0.1, 2.0, rank)) @ V.T
        rec, res = anderson.ssf(A, A + u)
        steps += [{"instance": i, "breakpoint": b, "xi": int(x)} for b, x in zip(rec.breakpoints, rec.xi)]
        summary.append({"instance": i, "rank": rank, "trace_residual": res,
                        "xi_min": int(rec.xi.min()), "xi_max": int(rec.xi.max())})
    write_csv(os.path.join(out, "ssf_breakpoints.csv"), steps, ("instance", "breakpoint", "xi"))
    write_csv(os.path.join(out, "ssf_summary.csv"), summary)
    return {"max_trace_residual": max(s["trace_residual"] for s in summary),
            "xi_within_rank": all(0 <= s["xi_min"] and s["xi_max"] <= s["rank"] for s in summary)}


def _constants_outputs(report, out):
    write_csv(os.path.join(out, "constants.csv"), [report.flat()])
    write_json(os.path.join(out, "constants.json"), report.as_dict())
    return report.as_dict()


def run_constants(cfg, out, n_jobs):
    n, c, m = cfg["numeric"], cfg["constants"], cfg["model"]
    report = constants.constants_report(n["d"], c["K_V"], n["delta"], n["bc"], carleman_from(cfg),
                                        C_minus=m["C_minus"], E0=c["E0"], K1=c["K1"], K2=c["K2"], M=m["M"])
    return _constants_outputs(report, out)


def run_gen_delone(cfg, out, n_jobs):
    n, m = cfg["numeric"], cfg["model"]
    window = geometry.BoxSpec(n["d"], _first_L(cfg), bc=n["bc"])
    arr = geometry.generate_delone(n["d"], m["M_tilde"], m["M"], window, cfg["randomness"]["seed"],
                                   delta=m["delta_minus"], n_extra=m["n_extra"])
    arr.to_json(os.path.join(out, "delone.json"))
    res = geometry.validate_delone(arr.points, m["M_tilde"], m["M"], window)
    return {"n_points": len(arr.points), "n_gamma2": len(arr.gamma2_points), "valid": bool(res),
            "violation": None if res else jsonable(res)}


RUNNERS = {
    "ucp": run_ucp, "wegner": run_wegner, "lift": run_lift, "uncertainty": run_uncertainty,
    "ssf": run_ssf, "constants": run_constants, "gen-delone": run_gen_delone,
}


def _provenance(path, cfg, n_jobs, wall, argv, status):
    import joblib
    import scipy
    import sklearn

    lines = [
        f"ucplab {__version__}",
        f"python {platform.python_version()}",
        f"numpy {np.__version__}",
        f"scipy {scipy.__version__}",
        f"scikit-learn {sklearn.__version__}",
        f"joblib {joblib.__version__}",
        f"platform {platform.platform()}",
        f"experiment {cfg['experiment']}",
        f"seed {cfg['randomness']['seed']}",
        f"workers {n_jobs}",
        f"wall_time_s {wall:.3f}",
        f"status {status}",
        f"argv {' '.join(argv)}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def run_config(cfg, out, n_jobs, argv=()):
    """Run a resolved config, writing every artefact into ``out``; returns the exit code."""
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "resolved_config.json"), cfg)
    start = time.perf_counter()
    status, code, summary = "ok", EXIT_OK, None
    try:
        summary = RUNNERS[cfg["experiment"]](cfg, out, n_jobs)
    except ConfigError:
        raise
    except (UcpLabError, ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        status, code = f"failed in {cfg['experiment']}: {type(exc).__name__}: {exc}", EXIT_COMPUTE
        log.error("compute failure in experiment %r: %s", cfg["experiment"], exc)
    wall = time.perf_counter() - start
    if summary is not None:
        write_json(os.path.join(out, "summary.json"), {"experiment": cfg["experiment"], "results": summary})
    _provenance(os.path.join(out, "provenance.log"), cfg, n_jobs, wall, list(argv), status)
    return code


# argument parsing --------------------------------------------------------------

def _cmd_run(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"randomness.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={json.dumps(args.out)}")
    cfg = load_config(args.config, overrides)
    n_jobs = pool_size(args.n_jobs)
    code = run_config(cfg, cfg["output"]["dir"], n_jobs, sys.argv)
    if code == EXIT_OK:
        print(f"wrote results to {cfg['output']['dir']}")
    return code


def _cmd_constants(args):
    cfg = resolve({
        "experiment": "constants",
        "randomness": {"seed": 0},
        "numeric": {"d": args.d, "delta": args.delta, "bc": args.bc},
        "model": {"C_minus": args.c_minus, "M": args.M},
        "constants": {"C2": args.c2, "C3": args.c3, "K_Delta": args.k_delta, "C_dim": args.c_dim,
                      "K_V": args.kv, "E0": args.e0, "K1": args.k1, "K2": args.k2},
        "output": {"dir": args.out},
    })
    os.makedirs(args.out, exist_ok=True)
    report = run_constants(cfg, args.out, 1)
    print(json.dumps(jsonable(report), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_gen_delone(args):
    window = geometry.BoxSpec(args.d, args.L, bc="periodic")
    arr = geometry.generate_delone(args.d, args.m_tilde, args.M, window, args.seed, delta=args.delta,
                                   n_extra=args.n_extra)
    text = arr.to_json(args.out)
    res = geometry.validate_delone(arr.points, args.m_tilde, args.M, window)
    if args.out is None:
        print(text)
    else:
        print(f"wrote {len(arr.points)} points to {args.out} (valid: {bool(res)})")
    return EXIT_OK if res else EXIT_COMPUTE


def _cmd_plot_data(args):
    try:
        written = emit_plot_data(args.reports, args.out)
    except (MalformedReport, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    for w in written:
        print(w)
    return EXIT_OK


def _cmd_selftest(args):
    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_COMPUTE


def build_parser():
    p = argparse.ArgumentParser(prog="ucp-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment described by a JSON config")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                   help="override a config field (value parsed as JSON); repeatable")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--n-jobs", type=int, help="worker pool size")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("constants", help="evaluate the analytic constants")
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--kv", type=float, default=0.0)
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--bc", choices=("periodic", "dirichlet"), default="periodic")
    c.add_argument("--c2", type=float, default=1.0)
    c.add_argument("--c3", type=float, default=1.0)
    c.add_argument("--k-delta", type=float, default=1.0)
    c.add_argument("--c-dim", type=float, default=constants.math.e)
    c.add_argument("--c-minus", type=float, default=1.0)
    c.add_argument("--e0", type=float, default=0.0)
    c.add_argument("--k1", type=float, default=1.0)
    c.add_argument("--k2", type=float, default=1.0)
    c.add_argument("--M", type=int, default=1)
    c.add_argument("--out", default=".", help="directory for constants.csv and constants.json")
    c.set_defaults(func=_cmd_constants)

    g = sub.add_parser("gen-delone", help="generate and validate a Delone arrangement")
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--L", type=float, default=7)
    g.add_argument("--m-tilde", type=float, default=0.9)
    g.add_argument("--M", type=int, default=1)
    g.add_argument("--delta", type=float)
    g.add_argument("--n-extra", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="JSON file; printed to stdout when omitted")
    g.set_defaults(func=_cmd_gen_delone)

    d = sub.add_parser("plot-data", help="convert report CSVs into gnuplot data files")
    d.add_argument("reports", nargs="+")
    d.add_argument("--out", default="plots")
    d.set_defaults(func=_cmd_plot_data)

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc if str(exc).startswith("config error") else f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UcpLabError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
