"""Command-line front end: ``otmkit {distance,gradient,compare,diagnose}``.

Reports are JSON (sorted keys, schema-versioned). Exit status: 0 on success,
1 on input or precondition errors, 2 when an iterative solve did not converge
(the partial result is still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .chains import (
    CostSpec,
    graph_to_chain,
    load_chain_json,
    load_graph_tsv,
    stationarity_residual,
    structure_check,
    cost_matrix,
)
from .errors import InputError, NotConverged, NotConvergedWarning, NotStationary, OtmError
from .grad import backward, finite_difference_check, full_gradient
from .otm import (
    INFINITE,
    DiscountParams,
    HorizonDistribution,
    dwl_depth_k,
    dwl_depth_k_sparse,
    dwl_infinity,
    extract_optimal_coupling,
    otc_estimate,
    otm_general_p,
    rate_bound_cap,
    truncated_geometric,
    wl_depth_k,
    wl_infinity,
)
from .reference import lower_bound_check, simulate_discounted_cost

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
MODES = ("wl", "dwl", "dwl-inf", "otm-p", "otc", "wl-inf")
INIT_FLAGS = {"deltaC": "delta_C", "C": "C", "zero": "zero"}
COSTS = ("labels:euclidean", "labels:manhattan", "labels:hamming", "labels:discrete")

log = logging.getLogger("otmkit")


# -- input --------------------------------------------------------------------


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_input(path, args):
    """Chain JSON, or a ``.tsv`` edge list (labels from ``<stem>.labels.json`` if present)."""
    p = Path(path)
    if p.suffix == ".tsv":
        lab = p.with_name(p.stem + ".labels.json")
        graph = load_graph_tsv(p, lab if lab.exists() else None)
        initial = args.initial
        return graph_to_chain(graph, args.dangling, args.lazy, initial)
    return load_chain_json(p)


def load_cost(spec: str, X, Y) -> np.ndarray:
    if spec.startswith("file:"):
        C = np.loadtxt(spec[5:], delimiter=",", ndmin=2)
        if C.shape != (X.n, Y.n):
            raise InputError(f"cost file has shape {C.shape}, expected ({X.n}, {Y.n})")
        return C
    if spec.startswith("labels:"):
        return cost_matrix(X, Y, CostSpec(spec[7:]))
    raise InputError(f"unknown cost spec {spec!r}")


def load_horizon(path) -> HorizonDistribution:
    return HorizonDistribution(tuple(json.loads(Path(path).read_text())))


def params_from(args, **over) -> DiscountParams:
    kw = dict(
        delta=args.delta,
        epsilon=args.epsilon,
        depth=INFINITE if args.depth is None else args.depth,
        tol=args.tol,
        max_iter=args.max_iter,
        schedule=args.schedule,
        init=INIT_FLAGS[args.init],
        accelerate=args.accelerate,
        threads=args.threads,
    )
    kw.update(over)
    return DiscountParams(**kw)


def _otc_deltas(top: float) -> list:
    top = min(max(top, 1e-4), 1.0)
    out = [top]
    while out[-1] / 10 >= 1e-4 * (1 - 1e-12):
        out.append(out[-1] / 10)
    return out


# -- commands -----------------------------------------------------------------


def _fp_summary(res) -> dict:
    return {"value": res.value, "iterations": res.iterations, "residual": res.residual,
            "converged": bool(res.converged)}


def cmd_distance(args, X, Y, C) -> tuple[dict, bool]:
    mode = args.mode
    if mode == "wl":
        res = wl_depth_k(X, Y, C, args.depth or 0, epsilon=args.epsilon, threads=args.threads)
        return _fp_summary(res), res.converged
    if mode == "dwl":
        params = params_from(args, depth=args.depth or 0)
        res = (dwl_depth_k_sparse if args.sparse else dwl_depth_k)(X, Y, C, params)
        out = _fp_summary(res)
        out["work"] = res.work
        return out, res.converged
    if mode == "dwl-inf":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConvergedWarning)
            res = dwl_infinity(X, Y, C, params_from(args, depth=INFINITE), sparse=args.sparse)
        out = _fp_summary(res)
        out["work"] = res.work
        return out, res.converged
    if mode == "otm-p":
        if args.p is None:
            raise InputError("--mode otm-p needs --p FILE")
        res = otm_general_p(X, Y, C, load_horizon(args.p), epsilon=args.epsilon)
        return _fp_summary(res), res.converged
    if mode == "otc":
        est = otc_estimate(X, Y, C, _otc_deltas(args.delta), epsilon=args.epsilon, tol=args.tol,
                           max_iter=args.max_iter, accelerate="newton")
        out = est.to_json()
        out["value"] = est.estimate
        return out, all(est.converged)
    if mode == "wl-inf":
        res = wl_infinity(X, Y, C, tol=args.tol or 1e-9, max_iter=args.max_iter)
        return res.to_json(), res.converged
    raise InputError(f"unknown mode {mode!r}")


def _read_upstream(spec, n, m):
    if spec is None:
        return 1.0
    try:
        val = float(spec)
    except ValueError:
        val = json.loads(Path(spec).read_text())
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    if arr.shape != (n, m):
        raise InputError(f"upstream matrix has shape {arr.shape}, expected ({n}, {m})")
    return arr


def cmd_gradient(args, X, Y, C) -> tuple[dict, bool]:
    if not args.delta > 0 or not args.epsilon > 0:
        raise InputError("gradient needs --delta > 0 and --epsilon > 0")
    params = params_from(args, depth=INFINITE)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        res = dwl_infinity(X, Y, C, params)
    if not res.converged:
        return {"value": res.value, "residual": res.residual, "converged": False}, False
    up = _read_upstream(args.upstream, X.n, Y.n)
    if isinstance(up, float):
        out = full_gradient(X, Y, C, params, result=res, upstream=up).to_json()
    else:
        parts = backward(res, up)
        out = {k: v.tolist() for k, v in parts.items()}
        out.update(d_nuX=[0.0] * X.n, d_nuY=[0.0] * Y.n, value=res.value)
        out["upstream"] = "cost_final"
    out["converged"] = True
    out["iterations"] = res.iterations
    out["residual"] = res.residual
    if args.check_fd:
        rep = finite_difference_check(X, Y, C, params, n_directions=8, seed=args.seed)
        out["fd_check"] = rep.to_json()
    return out, True


def cmd_compare(args, X, Y, C) -> tuple[dict, bool]:
    k = 3 if args.depth is None else args.depth
    delta = args.delta
    eps = args.epsilon
    out: dict = {"depth": k, "delta": delta}
    ok = True
    out["wl"] = [wl_depth_k(X, Y, C, t, epsilon=eps).value for t in range(k + 1)]
    out["dwl"] = dwl_depth_k(X, Y, C, params_from(args, depth=k)).value
    if delta > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConvergedWarning)
            inf = dwl_infinity(X, Y, C, params_from(args, depth=INFINITE))
        out["dwl_inf"] = inf.value
        ok &= inf.converged
    p = load_horizon(args.p) if args.p else truncated_geometric(delta, k)
    lb = lower_bound_check(X, Y, C, p, epsilon=eps)
    out["otm_p"] = lb.lhs
    out["wl_average"] = lb.rhs
    flags = {"lower_bound_holds": bool(lb.holds)}
    stationary = max(stationarity_residual(X), stationarity_residual(Y)) <= 1e-8
    if stationary:
        est = otc_estimate(X, Y, C, _otc_deltas(0.1), epsilon=eps, accelerate="newton")
        out["otc"] = est.to_json()
        ok &= all(est.converged)
        slack = 1e-6 * max(float(np.abs(C).max()), 1.0)
        flags["otc_trend_nondecreasing"] = bool(est.nondecreasing)
        flags["upper_bound_holds"] = bool(lb.lhs <= est.estimate + slack)
    elif args.mode == "otc":
        raise NotStationary("otc comparison needs stationary initial distributions")
    else:
        out["otc"] = None
    out["flags"] = flags
    return out, ok


def cmd_diagnose(args, X, Y, C) -> tuple[dict, bool]:
    sx, sy = structure_check(X), structure_check(Y)
    eligible = sx.irreducible and sx.aperiodic and sy.irreducible and sy.aperiodic
    out: dict = {"structure_x": sx.to_json(), "structure_y": sy.to_json(), "wl_inf_eligible": eligible}
    ok = True
    if eligible:
        try:
            w = wl_infinity(X, Y, C, tol=1e-9, max_iter=args.max_iter)
            mono = all(b >= a for a, b in zip(w.mins, w.mins[1:])) and all(
                b <= a for a, b in zip(w.maxs, w.maxs[1:]))
            out["envelope"] = {"mins": w.mins, "maxs": w.maxs, "monotone": mono, "value": w.value}
        except NotConverged as exc:
            out["envelope"] = {"converged": False, "gap": exc.residual}
            ok = False
    # rate-bound replay on the exact path
    delta = args.delta if args.delta > 0 else 0.5
    scale = float(np.abs(C).max())
    base = params_from(args, delta=delta, epsilon=0.0, depth=INFINITE, schedule=0, accelerate="none")
    tol = base.tol or max(1e-8 * scale, 1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        ref = dwl_infinity(X, Y, C, params_from(args, delta=delta, epsilon=0.0, depth=INFINITE,
                                                tol=tol / 10, accelerate="none", schedule=0))
        run = dwl_infinity(X, Y, C, params_from(args, delta=delta, epsilon=0.0, depth=INFINITE, tol=tol,
                                                accelerate="none", schedule=0, record_iterates=True))
    errs = [float(np.abs(M - ref.cost_final).max()) for M in run.iterates]
    bounds = [2 * (1 - delta) ** k / delta * scale for k in range(len(errs))]
    out["rate_bound"] = {
        "delta": delta,
        "errors": errs,
        "bounds": bounds,
        "holds": all(e <= b + 1e-12 for e, b in zip(errs, bounds)),
        "iteration_cap": rate_bound_cap(delta, tol, scale),
    }
    ok &= ref.converged and run.converged
    if ref.converged:
        pol = extract_optimal_coupling(ref, X, Y)
        mc = simulate_discounted_cost(pol, C, delta, n_paths=args.paths, seed=args.seed, chains=(X, Y))
        out["monte_carlo"] = {**mc.to_json(), "target": ref.value,
                              "within_3se": abs(mc.mean - ref.value) <= 3 * mc.std_error + mc.tail_bound}
    return out, ok


COMMANDS = {"distance": cmd_distance, "gradient": cmd_gradient, "compare": cmd_compare, "diagnose": cmd_diagnose}


# -- plumbing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("x", help="chain JSON or graph .tsv")
    common.add_argument("y", help="chain JSON or graph .tsv")
    common.add_argument("--mode", choices=MODES, default="dwl-inf")
    common.add_argument("--depth", type=int, default=None)
    common.add_argument("--delta", type=float, default=0.5)
    common.add_argument("--epsilon", type=float, default=0.0)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--max-iter", type=int, default=100_000)
    common.add_argument("--schedule", type=int, default=0, help="Sinkhorn cap growth per sweep (0 = off)")
    common.add_argument("--sparse", action="store_true")
    common.add_argument("--init", choices=tuple(INIT_FLAGS), default="deltaC")
    common.add_argument("--cost", default="labels:euclidean",
                        help="labels:{euclidean,manhattan,hamming,discrete} or file:PATH (CSV)")
    common.add_argument("--p", default=None, help="JSON array of horizon probabilities")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=None)
    common.add_argument("--format", choices=("json", "tsv"), default="json")
    common.add_argument("--check-fd", action="store_true")
    common.add_argument("--upstream", default=None, help="scalar, or JSON file with a scalar or n x m matrix")
    common.add_argument("--accelerate", choices=("none", "newton"), default="none")
    common.add_argument("--paths", type=int, default=100_000, help="Monte-Carlo paths for diagnose")
    common.add_argument("--lazy", type=float, default=0.0, help="graph inputs: self-loop mass")
    common.add_argument("--dangling", choices=("self_loop", "uniform_jump"), default="self_loop")
    common.add_argument("--initial", choices=("uniform", "stationary"), default="uniform")
    parser = argparse.ArgumentParser(prog="otmkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"otmkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _finite(obj):
    """Replace non-finite floats by None so every numeric field is valid JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _emit(report: dict, args) -> None:
    if args.format == "tsv":
        res = report.get("result") or {}
        lines = [f"{k}\t{v}" for k, v in sorted(res.items()) if isinstance(v, (int, float, bool))]
        if "error" in report:
            lines = [f"error\t{report['error']}"]
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(_finite(report), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("OTMKIT_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": "otmkit",
        "version": __version__,
        "command": {"subcommand": args.command, **{k: v for k, v in vars(args).items() if k != "command"}},
        "seed": args.seed,
    }
    code = EXIT_OK
    try:
        report["inputs"] = {"x": _digest(args.x), "y": _digest(args.y)}
        if args.cost.startswith("file:"):
            report["inputs"]["cost"] = _digest(args.cost[5:])
        X = load_input(args.x, args)
        Y = load_input(args.y, args)
        C = load_cost(args.cost, X, Y)
        log.info("loaded chains with %d and %d states", X.n, Y.n)
        result, converged = COMMANDS[args.command](args, X, Y, C)
        report["result"] = result
        report["converged"] = bool(converged)
        if not converged:
            code = EXIT_NOT_CONVERGED
    except NotConverged as exc:
        report["error"] = f"NotConverged: {exc}"
        report["residual"] = exc.residual
        report["converged"] = False
        code = EXIT_NOT_CONVERGED
    except (OtmError, OSError, ValueError) as exc:
        report = {"error": f"{type(exc).__name__}: {exc}", "schema_version": SCHEMA_VERSION}
        code = EXIT_INPUT
    if "wall_time_s" not in report and code != EXIT_INPUT:
        report["wall_time_s"] = round(time.perf_counter() - t0, 6)
    _emit(report, args)
    return code


if __name__ == "__main__":
    sys.exit(main())
