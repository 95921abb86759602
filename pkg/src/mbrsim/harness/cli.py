"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 simulation abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..memsys import CalibrationError, calibrate
from ..regulator import ConfigError
from ..simcore import SimulationError
from ..workload import TraceFormatError
from .config import default_config, load_config
from .experiments import (
    BaselineStore,
    MissingBaselineError,
    measure_overhead,
    run_experiment,
    sweep_budget,
    sweep_period,
)
from .results import ResultsError, emit_results

log = logging.getLogger("mbrsim")

DEFAULT_BUDGETS = (50, 100, 1000, 10000)
DEFAULT_PERIODS = (1, 10, 25, 100, 1000)
DEFAULT_OVERHEAD_PERIODS = (1, 2, 5, 10, 100, 1000)


def _numbers(text: str):
    out = []
    for x in text.split(","):
        x = x.strip()
        if not x:
            continue
        v = float(x)
        out.append(int(v) if v.is_integer() else v)
    return out


def _common(p):
    p.add_argument("--config", type=Path, help="experiment config file (default topology if omitted)")
    p.add_argument("--out", type=Path, help="output directory (overrides experiment.output_dir)")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    p.add_argument("--trace-dump", action="store_true",
                   help="also write per-access bus and per-period regulator traces")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for sweeps")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mbrsim", description="VM-centric memory bandwidth "
                                 "reservation simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured setup and its solo baseline")
    _common(p)
    p.add_argument("--setup", choices=("solo", "interf", "interf_mbr"),
                   help="override experiment.setup")

    p = sub.add_parser("sweep-budget", help="critical slowdown and NC throughput vs budget")
    _common(p)
    p.add_argument("--period-us", type=float, default=None, help="fixed period (default: from config)")
    p.add_argument("--budgets", type=_numbers, default=None, help="comma-separated budgets")

    p = sub.add_parser("sweep-period", help="critical slowdown and NC throughput vs period")
    _common(p)
    p.add_argument("--budget", type=int, default=None, help="fixed budget (default: from config)")
    p.add_argument("--periods", type=_numbers, default=None, help="comma-separated periods in us")

    p = sub.add_parser("overhead", help="timer interrupt overhead, PMU disabled")
    _common(p)
    p.add_argument("--periods", type=_numbers, default=None, help="comma-separated periods in us")

    p = sub.add_parser("calibrate", help="fit bus service time and critical intensity")
    _common(p)
    p.add_argument("--target", type=float, default=2.3, help="interf/solo slowdown to hit")
    p.add_argument("--interferers", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=0.10)
    return ap


def _period_arg(v):
    if v is None:
        return None
    return int(v) if float(v).is_integer() else v


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, TraceFormatError, MissingBaselineError, CalibrationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except ResultsError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except SimulationError as e:
        print(f"simulation aborted: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    out = args.out or Path(cfg.output_dir)
    if args.command == "calibrate":
        log.info("calibrating for %.3gx with %d interferers", args.target, args.interferers)
        model = calibrate(args.target, args.interferers, tolerance=args.tolerance,
                          d_timer=cfg.d_timer)
        print(f"bus.service_time = {model.service_time}")
        if model.critical_apki is not None:
            print(f"workload.critical_apki = {model.critical_apki}")
        print(f"# achieved slowdown {model.achieved_slowdown!r}")
        for k, v in model.anchor_errors.items():
            print(f"# anchor {k}: relative error {v:.4f}")
        return 0

    store = BaselineStore(out)
    trace_dir = out if args.trace_dump else None
    if args.command == "run":
        if args.setup:
            from .config import Setup
            cfg = cfg.with_setup(Setup(args.setup))
        log.info("running %s", cfg.setup.value)
        table = run_experiment(cfg, store, trace_dir=trace_dir)
    elif args.command == "sweep-budget":
        period = _period_arg(args.period_us)
        if period is None:
            period = cfg.nc_point()[1]
        budgets = args.budgets
        if budgets is None:
            budgets = cfg.sweep_values if cfg.sweep_axis == "budget" else DEFAULT_BUDGETS
        log.info("budget sweep %s at %s us", list(budgets), period)
        table = sweep_budget(cfg, period, budgets, store, jobs=args.jobs)
    elif args.command == "sweep-period":
        budget = args.budget if args.budget is not None else cfg.nc_point()[0]
        periods = args.periods
        if periods is None:
            periods = cfg.sweep_values if cfg.sweep_axis == "period" else DEFAULT_PERIODS
        log.info("period sweep %s at budget %s", list(periods), budget)
        table = sweep_period(cfg, budget, periods, store, jobs=args.jobs)
    else:
        periods = args.periods or DEFAULT_OVERHEAD_PERIODS
        log.info("overhead at %s us", list(periods))
        table = measure_overhead(cfg, periods)
    for p in emit_results(table, out):
        log.info("wrote %s", p)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
