"""Command line entry point: ``delaysync {run,check-gains,analyze,replay}``.

A nonzero exit status is 1 for invalid input and 2 for a diverged run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .analysis import check_condition19, diagnostics, gain_matrices, iss_audit
from .channel import export_delays, import_delays, validate_assumption1
from .consensus import check_jointly_rooted_windows, interaction_graph
from .engine.metrics import metrics
from .engine.scenario import ScenarioError, load_scenario
from .engine.simulate import SimulationDiverged, Trace, run
from .engine.trace import TraceFormatError, emit_trace, load_trace
from .graphs import is_rooted, roots

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

log = logging.getLogger("delaysync")


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=lambda x: x.tolist() if isinstance(x, np.ndarray) else str(x)))


def _preflight(sc) -> None:
    """Warnings that do not stop a run."""
    g = sc.weighted_graph()
    sharp = g.sharp_nodes()
    if sharp:
        rep = check_condition19(sc.gain_set(), sc.h_star, sharp)
        if not rep.all_pass:
            bad = [a for a, ok in zip(rep.agents, rep.passed) if not ok]
            log.warning("gain condition mu_i > 1 + 2 h* fails for agents %s", bad)
    if not is_rooted(g.base):
        log.warning("graph has no spanning tree")
    elif sc.leaders and not set(roots(g.base)) & set(sc.leaders):
        log.warning("no leader is a root of the graph")


def _simulate(sc, delays, args) -> Trace:
    _preflight(sc)
    trace = run(sc, delays)
    if args.out:
        digest = emit_trace(trace, args.out)
        log.info("trace written to %s (%s)", args.out, digest)
    if getattr(args, "delays_out", None):
        export_delays(args.delays_out, trace.delays)
    rep = metrics(trace, args.window)
    _print({"scenario": sc.name, **rep.summary(), "max_age": trace.max_age, "age_violations": trace.age_violations})
    return trace


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    if args.duration is not None:
        sc = replace(sc, duration=args.duration)
    _simulate(sc, None, args)
    return EXIT_OK


def cmd_replay(args) -> int:
    sc = load_scenario(args.scenario)
    try:
        delays = import_delays(args.delays)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    missing = set(sc.weighted_graph().base.edges) - set(delays)
    if missing:
        print(f"error: delay file lacks edges {sorted(missing)}", file=sys.stderr)
        return EXIT_INVALID
    report = validate_assumption1(delays, sc.comm_params())
    if not report.ok:
        print(f"error: delays violate the delivery window: {report.reason} (edge {report.edge})", file=sys.stderr)
        return EXIT_INVALID
    _simulate(sc, delays, args)
    return EXIT_OK


def cmd_check_gains(args) -> int:
    sc = load_scenario(args.scenario)
    h_star = args.h_star if args.h_star is not None else sc.h_star
    g = sc.weighted_graph()
    gains = sc.gain_set()
    rep = check_condition19(gains, h_star, g.sharp_nodes())
    gm = gain_matrices(g, gains, h_star)
    out = {
        "h_star": h_star,
        "agents": [
            {"agent": a, "mu": float(m), "margin": float(mg), "max_h_star": float(mh), "pass": bool(ok)}
            for a, m, mg, mh, ok in zip(rep.agents, rep.mu, rep.margin, rep.max_h_star, rep.passed)
        ],
        "rho_gamma": gm.rho,
        "small_gain": gm.rho < 1.0,
        "pass": rep.all_pass and gm.rho < 1.0,
    }
    _print(out)
    return EXIT_OK if out["pass"] else EXIT_INVALID


def cmd_analyze(args) -> int:
    try:
        trace = load_trace(args.trace)
    except (OSError, TraceFormatError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sc = trace.scenario
    g = sc.weighted_graph()
    rep = metrics(trace, args.window)
    out = {"metrics": rep.summary()}
    sharp = g.sharp_nodes()
    if sharp:
        diag = diagnostics(g, trace.t, trace.p, trace.v, trace.eta, trace.psi, trace.vbar, trace.e, trace.q)
        mus = sc.gain_set().mu[[i - 1 for i in sharp]]
        audit = iss_audit(diag, mus, t0_stride=args.stride)
        out["iss_audit"] = {
            "rtol": args.rtol,
            "psi_tilde_max_violation": float(audit.psi_max_violation.max()),
            "eta_p_tilde_max_violation": float(audit.eta_max_violation.max()),
            "violating_agents": audit.violations(args.rtol),
            "ok": audit.ok(args.rtol),
        }
    window = sc.comm_params().steps_per_hstar(sc.h_star)
    graphs = [interaction_graph(g.n, s) for s in trace.neighbor_sets]
    bad = check_jointly_rooted_windows(graphs, window)
    out["jointly_rooted"] = {"window": window, "windows": max(0, len(graphs) - window + 1), "failing_starts": bad}
    _print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delaysync", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_run_opts(p):
        p.add_argument("scenario", help="scenario file or bundled scenario name")
        p.add_argument("--out", help="write the trace CSV here")
        p.add_argument("--delays-out", help="export the delay sequences as CSV")
        p.add_argument("--window", type=float, default=5.0, help="final window for metrics (s)")

    p = sub.add_parser("run", help="simulate a scenario")
    add_run_opts(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="simulate with delays read from CSV")
    add_run_opts(p)
    p.add_argument("--delays", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("check-gains", help="gain condition and small-gain test")
    p.add_argument("scenario")
    p.add_argument("--h-star", type=float, dest="h_star")
    p.set_defaults(func=cmd_check_gains)

    p = sub.add_parser("analyze", help="audit a saved trace")
    p.add_argument("trace")
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--stride", type=int, default=10, help="spacing of audited start times, in samples")
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
