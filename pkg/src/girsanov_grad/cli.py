"""Command-line entry point: ``girsanov-grad {estimate,optimize,verify,sweep}``.

Run settings come from ``--config`` (a JSON object) and flags; flags win.
The config may hold a ``"problem"`` entry (builtin name or full problem
object, see :mod:`girsanov_grad.config`) plus any flag by its long name
with dashes replaced by underscores, e.g. ``{"seed": 7, "n": 20000}``.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import _accel
from .config import problem_from_dict
from .errors import GirsanovGradError, InvalidInputError
from .estimate import (
    estimate_free_energy,
    estimate_gradient,
    estimate_hessian,
    estimate_kl,
    estimate_phi,
    get_records,
)
from .model import BUILTINS, builtin
from .optimize import LINE_SEARCHES, Termination, gradient_descent, newton
from .simulate import dump_records_csv, simulate
from . import verify as V

# defaults applied after config and flags are merged
DEFAULTS = {
    "problem": "brownian-exit",
    "n": 10000,
    "out_dir": ".",
    "bridge": False,
    "formula": "paper",
    "method": "gd",
    "max_iter": 200,
    "grad_tol": 1e-3,
    "line_search": "girsanov",
    "suite": "identities",
    "b_grid": "0.2:1.2:0.1",
}


def _floats(text):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--problem", help=f"builtin name {sorted(BUILTINS)} or JSON problem file")
    g.add_argument("--config", help="JSON run config; flags override its entries")
    g.add_argument("--seed", type=int, help="record-generating seed (required)")
    g.add_argument("--threads", type=int, help="worker threads (default $GIRSANOV_GRAD_THREADS)")
    g.add_argument("--out-dir", help="directory for output files")
    g.add_argument("--dt", type=float, help="override the time step")
    g.add_argument("--t-max", type=float, help="override the truncation horizon")
    g.add_argument("--bridge", action="store_true", default=None,
                   help="Brownian-bridge exit correction")
    g.add_argument("--n", type=int, help="number of sample paths")
    g.add_argument("--b", type=float, help="right endpoint for brownian-exit")
    g.add_argument("--lambda", dest="lam", type=float, help="regularisation weight")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="girsanov-grad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common], help="Phi, gradient, Hessian, KL, F")
    est.add_argument("--a", type=_floats, help="coefficients, comma separated (default 0)")
    est.add_argument("--w", type=_floats, help="KL direction (default -a)")
    est.add_argument("--formula", choices=("paper", "exact"))
    est.add_argument("--dump-paths", action="store_true", default=None,
                     help="also write one CSV row per trajectory")

    opt = sub.add_parser("optimize", parents=[common], help="gradient descent or Newton")
    opt.add_argument("--method", choices=("gd", "newton"))
    opt.add_argument("--a0", type=_floats, help="starting coefficients (default 0)")
    opt.add_argument("--max-iter", type=int)
    opt.add_argument("--grad-tol", type=float)
    opt.add_argument("--line-search", choices=LINE_SEARCHES)
    opt.add_argument("--fresh-samples", action="store_true", default=None)

    ver = sub.add_parser("verify", parents=[common], help="oracle and identity checks")
    ver.add_argument("--suite", choices=("nonconvexity", "identities"))
    ver.add_argument("--b-grid", help="lo:hi:step grid of right endpoints")

    swp = sub.add_parser("sweep", parents=[common], help="q(b) sweep CSV")
    swp.add_argument("--b-grid", help="lo:hi:step grid of right endpoints")
    return parser


def _merge(args, parser):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config must be a JSON object")
    merged = dict(DEFAULTS)
    merged.update({k: v for k, v in cfg.items()})
    merged.update({k: v for k, v in vars(args).items() if v is not None})
    if merged.get("seed") is None:
        parser.error("--seed is required (directly or in --config)")
    if merged.get("threads") is None:
        merged["threads"] = _accel.default_threads()
    if int(merged["threads"]) < 1:
        parser.error("--threads must be >= 1")
    if int(merged["n"]) < 2:
        parser.error("--n must be >= 2")
    return merged


def _problem(cfg):
    src = cfg["problem"]
    params = dict(cfg.get("problem_params", {}))
    if isinstance(src, dict):
        spec = problem_from_dict(src)
    elif src in BUILTINS:
        if src == "brownian-exit" and cfg.get("b") is not None:
            params["b"] = cfg["b"]
        spec = builtin(src, **params)
    elif os.path.exists(str(src)):
        with open(src) as fh:
            spec = problem_from_dict(json.load(fh))
    else:
        raise InvalidInputError(f"unknown problem {src!r}")
    changes = {}
    if cfg.get("lam") is not None:
        changes["lam"] = float(cfg["lam"])
    if cfg.get("dt") is not None:
        changes["dt"] = float(cfg["dt"])
    if cfg.get("t_max") is not None:
        changes["t_max"] = float(cfg["t_max"])
    if cfg.get("bridge"):
        changes["bridge"] = True
    return spec.with_(**changes) if changes else spec


def _coeffs(values, spec, name):
    if values is None:
        return np.zeros(spec.n_basis)
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 1 and spec.n_basis > 1:
        a = np.full(spec.n_basis, a[0])
    if a.size != spec.n_basis:
        raise InvalidInputError(f"--{name} needs {spec.n_basis} values, got {a.size}")
    return a


def _write_json(out_dir, name, obj):
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_estimate(cfg):
    spec = _problem(cfg)
    a = _coeffs(cfg.get("a"), spec, "a")
    w = -a if cfg.get("w") is None else _coeffs(cfg["w"], spec, "w")
    n, seed, threads, out = int(cfg["n"]), int(cfg["seed"]), int(cfg["threads"]), cfg["out_dir"]
    records = get_records(spec, a, n, seed, threads=threads)
    formula = cfg["formula"]
    _write_json(out, "phi.json", estimate_phi(spec, a, records=records).to_dict())
    _write_json(out, "gradient.json",
                estimate_gradient(spec, a, records=records, formula=formula).to_dict())
    _write_json(out, "hessian.json",
                estimate_hessian(spec, a, records=records, formula=formula).to_dict())
    _write_json(out, "kl.json", estimate_kl(spec, a, w, records=records).to_dict())
    zero = np.zeros(spec.n_basis)
    fe_records = records if np.all(a == 0) else simulate(spec, zero, n, seed, threads=threads)
    _write_json(out, "free_energy.json",
                estimate_free_energy(spec, spec.lam, records=fe_records).to_dict())
    if cfg.get("dump_paths"):
        dump_records_csv(records, os.path.join(out, "paths.csv"))
    return 0


def cmd_optimize(cfg):
    spec = _problem(cfg)
    a0 = _coeffs(cfg.get("a0"), spec, "a0")
    kwargs = dict(max_iter=int(cfg["max_iter"]), grad_tol=float(cfg["grad_tol"]),
                  threads=int(cfg["threads"]), line_search=cfg["line_search"])
    if cfg["method"] == "gd":
        trace = gradient_descent(spec, a0, int(cfg["n"]), int(cfg["seed"]),
                                 fresh_samples=bool(cfg.get("fresh_samples")), **kwargs)
    elif cfg["method"] == "newton":
        trace = newton(spec, a0, int(cfg["n"]), int(cfg["seed"]), **kwargs)
    else:
        raise InvalidInputError(f"unknown method {cfg['method']!r}")
    trace.to_csv(os.path.join(cfg["out_dir"], "trace.csv"))
    trace.to_json(os.path.join(cfg["out_dir"], "trace.json"))
    return 0 if trace.termination == Termination.GRADIENT_TOLERANCE else 1


def cmd_verify(cfg):
    out, n, seed, threads = cfg["out_dir"], int(cfg["n"]), int(cfg["seed"]), int(cfg["threads"])
    if cfg["suite"] == "nonconvexity":
        grid = V.parse_grid(cfg["b_grid"])
        dt = float(cfg.get("dt") or 1e-3)
        rows, results, study = V.nonconvexity_suite(grid, n, dt, seed, bool(cfg["bridge"]),
                                                    threads)
        V.write_sweep_csv(rows, os.path.join(out, "sweep.csv"))
    elif cfg["suite"] == "identities":
        results = V.identities_suite(n, seed, threads)
    else:
        raise InvalidInputError(f"unknown suite {cfg['suite']!r}")
    V.write_report(results, os.path.join(out, "report.json"))
    return 0 if all(r.passed for r in results) else 1


def cmd_sweep(cfg):
    grid = V.parse_grid(cfg["b_grid"])
    dt = float(cfg.get("dt") or 1e-3)
    rows = V.q_sweep(grid, int(cfg["n"]), dt, int(cfg["seed"]), bool(cfg["bridge"]),
                     int(cfg["threads"]))
    V.write_sweep_csv(rows, os.path.join(cfg["out_dir"], "sweep.csv"))
    return 0


COMMANDS = {"estimate": cmd_estimate, "optimize": cmd_optimize, "verify": cmd_verify,
            "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _merge(args, parser)
    if cfg["command"] in ("verify", "sweep"):
        try:
            V.parse_grid(cfg["b_grid"])
        except InvalidInputError as exc:
            parser.error(str(exc))
    try:
        os.makedirs(cfg["out_dir"], exist_ok=True)
        return COMMANDS[cfg["command"]](cfg)
    except (GirsanovGradError, OSError) as exc:
        print(f"girsanov-grad: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
