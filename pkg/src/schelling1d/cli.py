"""Command line entry point.

Every subcommand prints one JSON line to stdout.  Exit status is 0 on
success, 1 on a usage or configuration problem and 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import DomainError, default_thresholds, solve_thresholds
from .dynamics import TraceError, run
from .harness import (
    SweepConfig,
    analyze_trace,
    gsurface,
    gsurface_csv,
    linspace_open,
    load_json,
    output_dir,
    run_config_from_dict,
    sweep,
    sweep_csv,
)
from .planner import PlanInfeasible, PlannerConfig, plan_to_terminal, replay
from .ring import ConfigError, RingState


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _resolve(given, default_name: str) -> Path:
    return Path(given) if given else output_dir() / default_name


def cmd_run(args) -> dict:
    doc = load_json(args.config)
    cfg = run_config_from_dict(doc)
    summary, trace = run(cfg)
    trace_path = _resolve(args.trace or doc.get("trace"), f"run-{cfg.seed}.trace.jsonl")
    summary_path = _resolve(args.summary or doc.get("summary"), f"run-{cfg.seed}.summary.json")
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    trace.write_jsonl(trace_path)
    out = {"config": cfg.as_dict(), **summary.as_dict()}
    _write(summary_path, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return {"command": "run", "outcome": summary.outcome.value,
            "swap_count": summary.swap_count, "trace": str(trace_path),
            "summary": str(summary_path)}


def cmd_sweep(args) -> dict:
    doc = load_json(args.config)
    cfg = SweepConfig.from_dict(doc)
    cells = sweep(cfg, workers=args.workers)
    out = _resolve(args.out or doc.get("output"), "sweep.csv")
    _write(out, sweep_csv(cfg, cells))
    failures = sum(len(c.failures) for c in cells)
    static = sum(c.empirically_static(cfg.static_epsilon) for c in cells)
    return {"command": "sweep", "cells": len(cells), "failed_runs": failures,
            "static_cells": static, "csv": str(out)}


def cmd_plan(args) -> dict:
    try:
        text = Path(args.state).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.state}: {exc.strerror}") from None
    state = RingState.from_snapshot(text)
    plan = plan_to_terminal(state, PlannerConfig(max_swaps=args.max_swaps))
    out = _resolve(args.out, "plan.json")
    _write(out, json.dumps(plan.as_dict()) + "\n")
    res = {"command": "plan", "swaps": len(plan.swaps),
           "claimed_terminal": plan.claimed_terminal.value, "plan": str(out)}
    if args.final:
        _write(Path(args.final), replay(state, plan).snapshot())
        res["final"] = args.final
    return res


def cmd_thresholds(args) -> dict:
    th = solve_thresholds(args.tol) if args.tol is not None else default_thresholds()
    res = {"command": "thresholds", "kappa0": th.kappa0, "lambda0": th.lambda0,
           "tol": th.tol, "residuals": th.residuals}
    if args.out:
        _write(Path(args.out), json.dumps(res, indent=2) + "\n")
    return res


def cmd_gsurface(args) -> dict:
    taus = linspace_open(0.0, 0.5, args.tau_steps)
    rhos = linspace_open(0.0, 0.5, args.rho_steps)
    rows = gsurface(taus, rhos)
    out = _resolve(args.out, "gsurface.csv")
    _write(out, gsurface_csv(rows))
    return {"command": "gsurface", "points": len(rows), "csv": str(out)}


def cmd_analyze(args) -> dict:
    report = analyze_trace(args.trace)
    if args.out:
        _write(Path(args.out), json.dumps(report, indent=2) + "\n")
    return {"command": "analyze-trace", "all_clear": report["all_clear"],
            "stages": report["stages"], "first_violation": report["first_violation"],
            "stopping": report["stopping"]}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="schelling1d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one process and write its trace")
    r.add_argument("--config", required=True)
    r.add_argument("--trace")
    r.add_argument("--summary")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="replicated runs over a (tau, rho) grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plan", help="construct a legal swap sequence to a terminal state")
    pl.add_argument("--state", required=True, help="snapshot file")
    pl.add_argument("--out")
    pl.add_argument("--final", help="write the terminal snapshot here")
    pl.add_argument("--max-swaps", type=int)
    pl.set_defaults(func=cmd_plan)

    t = sub.add_parser("thresholds", help="solve for kappa0 and lambda0")
    t.add_argument("--tol", type=float)
    t.add_argument("--out")
    t.set_defaults(func=cmd_thresholds)

    g = sub.add_parser("gsurface", help="g(tau, rho) grid with predicted regimes")
    g.add_argument("--tau-steps", type=int, default=49)
    g.add_argument("--rho-steps", type=int, default=49)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gsurface)

    a = sub.add_parser("analyze-trace", help="recheck invariants recorded in a trace")
    a.add_argument("trace")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except (UsageError, ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TraceError, PlanInfeasible, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
