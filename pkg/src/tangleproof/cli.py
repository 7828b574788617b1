"""Command line entry point: run, force, verify, analyze, replay.

Exit codes: 0 success, 1 configuration or usage error, 2 I/O or schema
error (also a non-empty replay diff), 3 no bottleneck anchor, 4 construction
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .bottleneck import force_bottlenecks, thresholds, verify_bottleneck
from .engine import diff_traces, recount_completions, replay, run, thread_count
from .errors import (
    ConfigurationError,
    ConstructionFailure,
    InfeasibleOverride,
    NoAnchorError,
    NotAtBottleneck,
    SchemaError,
    VerificationInputError,
)
from .io import (
    CONFIG_SCHEMA,
    SCHEMA,
    read_json,
    read_plans,
    read_trace,
    write_json,
    write_plans,
    write_reports,
    write_trace,
)
from .model import ModelParams, reference_params

log = logging.getLogger("tangleproof")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NO_ANCHOR, EXIT_CONSTRUCTION = 0, 1, 2, 3, 4

MODEL_KEYS = ("h", "p_theta", "eps_support", "p_eps", "k_parents", "b", "k_support", "p_k")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tangleproof", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def experiment(sp):
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--seed", type=_seed, action="append", help="repeat for several replicas")
        sp.add_argument("--steps", type=_positive,
                        help="trace length for run; anchor search window for force")
        sp.add_argument("--out", type=Path)
        sp.add_argument("--b", type=int)
        sp.add_argument("--k-parents", type=_positive)

    r = sub.add_parser("run", help="simulate one trace per seed")
    experiment(r)
    r.add_argument("--threads", type=_positive)

    f = sub.add_parser("force", help="force bottlenecks, then verify them")
    experiment(f)
    f.add_argument("--at", type=_positive, action="append", help="explicit anchor arrival(s)")
    f.add_argument("--bottlenecks", type=_positive)
    f.add_argument("--margin", type=int)

    v = sub.add_parser("verify", help="re-check a trace against its plan")
    v.add_argument("trace", type=Path)
    v.add_argument("plan", type=Path)
    v.add_argument("--out", type=Path)
    v.add_argument("--observe", action="store_true", help="report graph facts without requiring the plan")

    a = sub.add_parser("analyze", help="martingale, recurrence, confirmation and d_* metrics")
    a.add_argument("trace", type=Path)
    a.add_argument("--out", type=Path)
    a.add_argument("--b", type=int)
    a.add_argument("--anchor-step", type=_positive, default=1000, help="spacing of coupled-walk anchors")
    a.add_argument("--horizons", type=_positive, default=10, help="points on the horizon grid")

    rp = sub.add_parser("replay", help="re-execute a trace and diff the result")
    rp.add_argument("trace", type=Path)
    rp.add_argument("--out", type=Path, help="write the recomputed trace here")
    return p


def load_config(args) -> dict:
    cfg = {"schema": SCHEMA}
    if getattr(args, "config", None):
        cfg = read_json(args.config, CONFIG_SCHEMA)
    if args.seed:
        cfg["seeds"] = list(args.seed)
    if args.steps is not None:
        cfg["steps"] = args.steps
    if args.out is not None:
        cfg["out"] = str(args.out)
    if args.b is not None:
        cfg["b"] = args.b
    if args.k_parents is not None:
        cfg["k_parents"] = args.k_parents
        cfg.pop("k_support", None)
        cfg.pop("p_k", None)
    for key in ("threads", "bottlenecks", "margin"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    if getattr(args, "at", None):
        cfg["anchor"] = list(args.at)
    return cfg


def params_from_config(cfg: dict) -> ModelParams:
    model = {k: cfg[k] for k in MODEL_KEYS if k in cfg}
    if "h" not in model:
        base = reference_params().to_dict()
        base.update(model)
        model = base
    return ModelParams.from_dict(model)


def _summary(trace) -> dict:
    params = trace.params
    recount = recount_completions(trace.theta, params.h, trace.T)
    resid = np.abs(np.diff(trace.F) - (recount[1:] - trace.delta[1:]))
    rec = analysis.tip_recurrence(trace)

    def stats(x):
        return {"min": int(x.min()), "max": int(x.max()), "mean": float(x.mean())}

    return {
        "seed": trace.seed,
        "steps": trace.T,
        "L": stats(trace.L), "F": stats(trace.F), "W": stats(trace.W),
        "hits": {"b": params.b, "count": int(len(rec.hits)),
                 "first": int(rec.hits[0]) if len(rec.hits) else None,
                 "spaced": len(rec.spaced_hits), "spacing": rec.spacing,
                 "completed_excursions": rec.completed, "max_excursion": rec.max_excursion},
        "eq6_residual_max": int(resid.max()) if len(resid) else 0,
    }


def cmd_run(args) -> int:
    cfg = load_config(args)
    params = params_from_config(cfg)
    steps = cfg.get("steps", 1000)
    seeds = cfg.get("seeds", [0])
    out = Path(cfg.get("out", "out"))
    threads = min(cfg.get("threads", thread_count()), len(seeds))

    def one(seed):
        trace = run(params, seed, steps)
        write_trace(trace, out / f"seed-{seed}")
        return _summary(trace)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            summaries = list(pool.map(one, seeds))
    else:
        summaries = [one(s) for s in seeds]
    write_json(out / "summary.json", {"schema": SCHEMA, "kind": "summary",
                                      "params": params.to_dict(), "runs": summaries})
    for s in summaries:
        print(f"seed {s['seed']}: L max {s['L']['max']}, eq6 residual {s['eq6_residual_max']}")
    return EXIT_OK


def cmd_force(args) -> int:
    cfg = load_config(args)
    params = params_from_config(cfg)
    thr = thresholds(params)
    seed = cfg.get("seeds", [0])[0]
    out = Path(cfg.get("out", "out"))
    anchor = cfg.get("anchor")
    count = cfg.get("bottlenecks", len(anchor) if isinstance(anchor, list) else 1)
    if isinstance(anchor, int):
        anchor = [anchor]
    if anchor is not None and len(anchor) != count:
        raise ConfigurationError(f"{len(anchor)} anchors given for {count} bottlenecks")
    search = cfg.get("steps", 10_000)
    trace, plans = force_bottlenecks(params, seed, count, margin=cfg.get("margin", 500),
                                     at=anchor, search=search)
    reports = [verify_bottleneck(trace, p) for p in plans]
    write_trace(trace, out)
    write_plans(out / "plan.json", plans, params)
    write_reports(out / "report.json", reports,
                  {"thresholds": {"b": thr.b, "b_min": thr.b_min, "a_star": thr.a_star,
                                  "delta_YF": thr.delta_YF, "kappa_A": thr.kappa_A,
                                  "kappa_B": thr.kappa_B, "kappa_C": thr.kappa_C, "rho": thr.rho_sci}})
    for r in reports:
        print(f"bottleneck at {r.i}: c_i={r.c_i} temp2={r.temp2} temp3={r.temp3} "
              f"temp4={r.temp4} cauchy1={r.cauchy1} rho={r.rho}")
    return EXIT_OK


def cmd_verify(args) -> int:
    trace = read_trace(args.trace)
    plans = read_plans(args.plan)
    reports = [verify_bottleneck(trace, p, observe=args.observe) for p in plans]
    out = args.out or args.plan.with_name("report.json")
    write_reports(out, reports)
    for r in reports:
        print(f"bottleneck at {r.i}: temp2={r.temp2} temp3={r.temp3} temp4={r.temp4} cauchy1={r.cauchy1}")
    return EXIT_OK


def analyze_trace(trace, b: int | None = None, anchor_step: int = 1000, horizons: int = 10) -> dict:
    params = trace.params
    anchors = [a for a in range(anchor_step, trace.T + 1, anchor_step) if a > params.h_M]
    if not anchors:
        anchors = [min(params.h_M + 1, trace.T)]
    monitors = [analysis.martingale_check(trace, a, b=b) for a in anchors]
    rec = analysis.tip_recurrence(trace, b)
    grid = sorted(set(np.linspace(0, trace.T, horizons + 1).astype(int).tolist()) - {0}) or [trace.T]
    confirmed = []
    for T in grid:
        conf = analysis.confirmed_set(trace, T)
        confirmed.append({"T": T, "confirmed": len(conf),
                          "fraction": analysis.confirmed_fraction(trace, T)})
    series = [{"s": s, "s2": s2, "d_star": str(analysis.snapshot_d_star(trace, s, s2))}
              for s, s2 in zip(grid, grid[1:])]
    return {
        "schema": SCHEMA,
        "kind": "metrics",
        "seed": trace.seed,
        "steps": trace.T,
        "martingale": {
            "anchors": anchors,
            "max_gap": max(m.max_gap for m in monitors),
            "bound": monitors[0].bound,
            "within_bound": all(m.within_bound for m in monitors),
            "a": monitors[0].a,
            "first_F_hit": monitors[0].first_F_hit,
            "first_L_hit": monitors[0].first_L_hit,
        },
        "tip_recurrence": rec.to_dict(),
        "confirmation": confirmed,
        "d_star": series,
    }


def cmd_analyze(args) -> int:
    trace = read_trace(args.trace)
    metrics = analyze_trace(trace, args.b, args.anchor_step, args.horizons)
    if args.out:
        write_json(args.out, metrics)
    else:
        json.dump(metrics, sys.stdout, indent=2)
        print()
    return EXIT_OK


def cmd_replay(args) -> int:
    trace = read_trace(args.trace)
    again = replay(trace)
    if args.out:
        write_trace(again, args.out)
    diff = diff_traces(trace, again)
    for line in diff:
        print(line)
    print(f"replay diff: {len(diff)} difference(s)")
    return EXIT_OK if not diff else EXIT_IO


COMMANDS = {"run": cmd_run, "force": cmd_force, "verify": cmd_verify,
            "analyze": cmd_analyze, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, NotAtBottleneck) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, VerificationInputError, InfeasibleOverride) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NoAnchorError as exc:
        print(f"no bottleneck anchor found: {exc}", file=sys.stderr)
        return EXIT_NO_ANCHOR
    except ConstructionFailure as exc:
        case = f" (case {exc.case})" if exc.case else ""
        print(f"construction failure{case}: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCTION


if __name__ == "__main__":
    sys.exit(main())
