"""
Command-line front end.

Commands: ``turning-points``, ``stokes-graph``, ``transition`` and ``sweep``.
Every run writes its outputs atomically into ``--out-dir`` and echoes all
arguments (defaults included) into ``<command>.manifest.json`` next to them.

Exit codes: 0 success, 1 usage error, 2 model validation or method
precondition failure, 3 solver failure, 4 unresolved Stokes-graph degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .connection import (ddp_probability, gddp_probability, perturbative_amplitude,
                         transition_probability_ewkb)
from .errors import (DegenerateGraphError, ExactWKBError, MethodPreconditionError,
                     ModelValidationError)
from .integrator import (SolverConfig, default_sample_times, integrate,
                         numeric_transition_probability, trajectory_csv, transported_frames)
from .model import builtin, load_model, model_from_document, model_to_document
from .stokes import build_graph, find_all_turning_points, graph_csv_rows, graph_svg

METHODS = ("ewkb", "ddp", "gddp", "perturbative", "numeric")
WORKERS_ENV = "EXACTWKB_WORKERS"

TURNING_POINT_COLUMNS = ("pair_i", "pair_j", "re", "im", "order")
SWEEP_COLUMNS = ("index", "param", "value", "method", "probability", "raw_probability", "error")

log = logging.getLogger("exactwkb")


class UsageError(Exception):
    pass


# -- output plumbing -------------------------------------------------------------

def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _emit(args, outputs: dict) -> None:
    """Write all outputs, then the manifest that lists them."""
    paths = []
    for name, text in outputs.items():
        path = os.path.join(args.out_dir, name)
        write_atomic(path, text)
        paths.append(path)
    params = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "command": args.command,
        "model": args.model if args.model else {"builtin": args.builtin,
                                                "params": dict(_parse_params(args.param))},
        "parameters": params,
        "outputs": paths,
        "seedless": True,
    }
    write_atomic(os.path.join(args.out_dir, f"{args.command}.manifest.json"),
                 json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- argument helpers --------------------------------------------------------------

def _number(text: str):
    try:
        v = float(text)
    except ValueError:
        try:
            return complex(text.replace(" ", ""))
        except ValueError as exc:
            raise UsageError(f"not a number: {text!r}") from exc
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def _parse_params(items):
    out = []
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--param expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        out.append((k.strip(), _number(v.strip())))
    return out


def _load(args):
    if bool(args.model) == bool(args.builtin):
        raise UsageError("give exactly one of --model or --builtin")
    if args.model:
        model = load_model(args.model)
    else:
        model = builtin(args.builtin, dict(_parse_params(args.param)))
    if args.epsilon is not None:
        model = model.with_epsilon(args.epsilon)
    if getattr(args, "eta", None) is not None:
        model = model.with_eta(args.eta)
    return model


def _parse_vary(text: str):
    try:
        name, rng = text.split("=", 1)
        lo, hi, steps = rng.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError as exc:
        raise UsageError(f"--vary expects name=lo:hi:steps, got {text!r}") from exc
    if steps < 1:
        raise UsageError("--vary needs at least one step")
    values = [lo] if steps == 1 else list(np.linspace(lo, hi, steps))
    return name.strip(), [float(v) for v in values]


def _graph(model, args):
    policy = "auto" if args.auto_epsilon else "fixed"
    graph = build_graph(model, epsilon_policy=policy, flip_sign=args.flip_epsilon)
    if graph.degenerate:
        raise DegenerateGraphError("degenerate Stokes graph", graph.degeneracy_flags)
    return graph


def _warn_graph(graph):
    if graph.intersection_flags:
        log.warning("%d Stokes-line intersections (virtual turning point candidates)",
                    len(graph.intersection_flags))
    if graph.sheet_flags:
        log.warning("%d lines left the principal sheet", len(graph.sheet_flags))


def run_method(model, method, from_level, to_level, options):
    """Dispatch one transition computation; ``options`` is a plain dict."""
    t0, t1 = options.get("t0"), options.get("t1")
    if method == "ewkb":
        policy = "auto" if options.get("auto_epsilon") else "fixed"
        graph = build_graph(model, epsilon_policy=policy,
                            flip_sign=bool(options.get("flip_epsilon")))
        if graph.degenerate:
            raise DegenerateGraphError("degenerate Stokes graph", graph.degeneracy_flags)
        return transition_probability_ewkb(model, from_level, to_level, t0, t1, graph=graph)
    if method in ("ddp", "gddp", "perturbative"):
        if {from_level, to_level} != {1, 2}:
            raise MethodPreconditionError(f"{method} describes the 1 <-> 2 transition only")
        if method == "ddp":
            return ddp_probability(model, t0)
        if method == "gddp":
            return gddp_probability(model, t0)
        lo = -20.0 if t0 is None else t0
        hi = 20.0 if t1 is None else t1
        return perturbative_amplitude(model, lo, hi)
    if method == "numeric":
        cfg = SolverConfig(rel_tol=options.get("rel_tol", 1e-10))
        return numeric_transition_probability(model, from_level, to_level, None, t0, t1, cfg)
    raise MethodPreconditionError(f"unknown method {method!r}")


# -- commands ------------------------------------------------------------------------

def cmd_turning_points(args):
    model = _load(args)
    tps = find_all_turning_points(model, args.window)
    rows = [TURNING_POINT_COLUMNS]
    for tp in tps:
        rows.append((tp.pair[0], tp.pair[1], f"{tp.location.real:.12g}",
                     f"{tp.location.imag:.12g}", tp.order))
    _emit(args, {"turning_points.csv": _csv_text(rows)})
    print(f"{len(tps)} turning points")
    return 0


def cmd_stokes_graph(args):
    model = _load(args)
    graph = _graph(model, args)
    _warn_graph(graph)
    cross = [(x, graph.lines[i]) for x, i in graph.crossings]
    crossing_rows = [("re_t", "pair_i", "pair_j", "dominant", "tp_re", "tp_im")]
    for x, ln in cross:
        crossing_rows.append((f"{x:.12g}", ln.origin.pair[0], ln.origin.pair[1],
                              ln.dominant_index, f"{ln.origin.location.real:.12g}",
                              f"{ln.origin.location.imag:.12g}"))
    _emit(args, {"stokes_graph.csv": _csv_text(graph_csv_rows(graph)),
                 "stokes_crossings.csv": _csv_text(crossing_rows),
                 "stokes_graph.svg": graph_svg(graph)})
    listing = ", ".join(f"{x:.6g}" for x, _ in cross)
    print(f"{len(cross)} crossings at epsilon={graph.epsilon:g}: {listing}")
    return 0


def _options(args):
    return {"t0": args.t0, "t1": args.t1, "auto_epsilon": args.auto_epsilon,
            "flip_epsilon": args.flip_epsilon, "rel_tol": args.rel_tol}


def cmd_transition(args):
    model = _load(args)
    report = run_method(model, args.method, args.from_level, args.to_level, _options(args))
    outputs = {"transition_report.json": report.to_json() + "\n"}
    if args.trajectory and args.method == "numeric":
        d = report.diagnostics
        cfg = SolverConfig(rel_tol=args.rel_tol).with_window(d["t0"], d["t1"])
        psi0 = transported_frames(model, [cfg.t0])[0].right[:, args.from_level - 1]
        traj = integrate(model, None, cfg, psi0, default_sample_times(cfg))
        outputs["trajectory.csv"] = trajectory_csv(model, traj)
    _emit(args, outputs)
    print(f"{report.method} P({report.from_level}->{report.to_level}) = "
          f"{report.probability:.10g} (eta={report.eta:g})")
    return 0


def _sweep_point(job):
    doc, name, value, methods, from_level, to_level, options = job
    rows = []
    try:
        model = model_from_document(doc).with_param(name, value)
    except ExactWKBError as exc:
        return [(m, None, None, f"{type(exc).__name__}: {exc}") for m in methods]
    for m in methods:
        try:
            r = run_method(model, m, from_level, to_level, options)
            rows.append((m, r.probability, r.raw_probability, ""))
        except (ExactWKBError, ValueError, ArithmeticError) as exc:
            rows.append((m, None, None, f"{type(exc).__name__}: {exc}".replace("\n", " ")))
    return rows


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def cmd_sweep(args):
    name, values = _parse_vary(args.vary)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"--methods must be a comma list drawn from {METHODS}")
    model = _load(args)
    model.with_param(name, values[0])  # validates the parameter name up front
    doc = model_to_document(model)
    opts = _options(args)
    jobs = [(doc, name, v, methods, args.from_level, args.to_level, opts) for v in values]
    workers = _workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [SWEEP_COLUMNS]
    failures = 0
    for k, (v, res) in enumerate(zip(values, results)):
        for m, p, raw, err in res:
            failures += bool(err)
            rows.append((k, name, _fmt(v), m, _fmt(p), _fmt(raw), err))
    _emit(args, {"sweep.csv": _csv_text(rows)})
    print(f"{len(values)} points x {len(methods)} methods, {failures} failed")
    return 0


# -- parser --------------------------------------------------------------------------

def _window(text):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("window is re_min,re_max,im_min,im_max") from exc
    if len(parts) != 4 or parts[0] >= parts[1] or parts[2] >= parts[3]:
        raise argparse.ArgumentTypeError("window is re_min,re_max,im_min,im_max")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("model")
    src.add_argument("--model", help="model file (YAML/JSON, see FORMATS.md)")
    src.add_argument("--builtin", choices=("nlzsm", "lzsm3"), help="built-in family")
    src.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                     help="built-in parameter (repeatable)")
    src.add_argument("--epsilon", type=float, default=None,
                     help="complex perturbation of the sweep rates")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default .)")
    common.add_argument("--verbose", action="store_true")

    graph_opts = argparse.ArgumentParser(add_help=False)
    graph_opts.add_argument("--auto-epsilon", action="store_true",
                            help="escalate epsilon (0.01, 0.05) while the graph is degenerate")
    graph_opts.add_argument("--flip-epsilon", action="store_true",
                            help="use negative epsilon in the escalation")

    level_opts = argparse.ArgumentParser(add_help=False)
    level_opts.add_argument("--from", dest="from_level", type=int, default=1)
    level_opts.add_argument("--to", dest="to_level", type=int, default=2)
    level_opts.add_argument("--eta", type=float, default=None, help="override eta")
    level_opts.add_argument("--t0", type=float, default=None, help="sweep start (real)")
    level_opts.add_argument("--t1", type=float, default=None, help="sweep end (real)")
    level_opts.add_argument("--rel-tol", type=float, default=1e-10,
                            help="integrator relative tolerance (numeric method)")

    p = argparse.ArgumentParser(prog="exactwkb", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("turning-points", parents=[common],
                       help="list complex turning points",
                       description="Writes turning_points.csv with columns "
                                   + ", ".join(TURNING_POINT_COLUMNS) + ".")
    s.add_argument("--window", type=_window, default=None,
                   metavar="RE_MIN,RE_MAX,IM_MIN,IM_MAX")
    s.set_defaults(func=cmd_turning_points)

    s = sub.add_parser("stokes-graph", parents=[common, graph_opts],
                       help="trace the Stokes graph",
                       description="Writes stokes_graph.csv (line_id, pair_i, pair_j, dominant, "
                                   "re_t, im_t), stokes_crossings.csv (re_t, pair_i, pair_j, "
                                   "dominant, tp_re, tp_im) and stokes_graph.svg.")
    s.set_defaults(func=cmd_stokes_graph)

    s = sub.add_parser("transition", parents=[common, graph_opts, level_opts],
                       help="one transition probability",
                       description="Writes transition_report.json; with --trajectory and "
                                   "--method numeric also trajectory.csv (t, re/im of each "
                                   "component, adiabatic populations).")
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--trajectory", action="store_true")
    s.set_defaults(func=cmd_transition)

    s = sub.add_parser("sweep", parents=[common, graph_opts, level_opts],
                       help="probabilities over a parameter range",
                       description="Writes sweep.csv with columns " + ", ".join(SWEEP_COLUMNS)
                                   + f". Worker processes from ${WORKERS_ENV} (default 1).")
    s.add_argument("--vary", required=True, metavar="NAME=LO:HI:STEPS")
    s.add_argument("--methods", default="ewkb,numeric", help="comma-separated methods")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ModelValidationError, MethodPreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DegenerateGraphError as exc:
        print(f"warning: degenerate Stokes graph ({len(exc.objects)} flags); "
              "rerun with --auto-epsilon", file=sys.stderr)
        return 4
    except (ExactWKBError, ValueError, ArithmeticError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
