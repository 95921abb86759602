"""Setups, sweeps and the overhead experiment on top of ``Machine``."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from ..machine import Machine, RunMetrics
from ..regulator import ConfigError, InterruptCosts, timer_overhead_model
from ..simcore import TICKS_PER_US, us_to_ticks
from ..workload import WorkloadKind, cacheline_write_throughput
from .config import ExperimentConfig, Setup, resolve_workload
from .results import ResultTable, Sweep, metrics_from_rows, parse_csv

# Reported overhead curve of the reference hardware (fraction of CPU time)
# next to which the linear d_timer/period model is shown.
REFERENCE_OVERHEAD = {1: 0.143, 2: 0.02}
REFERENCE_OVERHEAD_BELOW = {10: 0.01}
OVERHEAD_MIN_RUN_US = 2000
OVERHEAD_MIN_PERIODS = 2


class MissingBaselineError(LookupError):
    pass


# -- machine construction ------------------------------------------------------

def setup_vms(cfg: ExperimentConfig, setup: Setup | None = None):
    """VMs and per-vCPU workload names for ``setup``.

    Solo keeps only the critical VM. Interf keeps every VM but switches all
    regulation off. InterfMbr runs the configuration as written.
    """
    setup = cfg.setup if setup is None else setup
    if setup is Setup.SOLO:
        chosen = [cfg.critical]
    else:
        chosen = list(cfg.vms)
    out = []
    for v in chosen:
        spec = v.spec
        if setup is Setup.INTERF:
            spec = replace(spec, regulated=False)
        out.append((spec, v.workloads))
    return out


def build_machine(cfg: ExperimentConfig, setup: Setup | None = None, rep: int = 0,
                  **kwargs) -> Machine:
    specs = []
    workloads = {}
    for spec, names in setup_vms(cfg, setup):
        specs.append(spec)
        for v, name in zip(spec.vcpus, names):
            workloads[v] = resolve_workload(cfg, name, rep)
    return Machine(specs, workloads, num_cores=cfg.num_cores, service_time=cfg.service_time,
                   costs=InterruptCosts(cfg.d_timer, cfg.d_pmu), pmu_enabled=cfg.pmu_enabled,
                   max_events=cfg.max_events, **kwargs)


def critical_time(cfg: ExperimentConfig, m: RunMetrics) -> int:
    """The critical VM finishes when its last vCPU does."""
    return max(m.vcpus[v].execution_time for v in cfg.critical.spec.vcpus)


def _derive(cfg: ExperimentConfig, m: RunMetrics, baseline_time: int | None) -> RunMetrics:
    if baseline_time is not None:
        m.relative_execution_time = critical_time(cfg, m) / baseline_time
    writers = [v for v, x in m.vcpus.items()
               if x.workload_kind == WorkloadKind.SATURATING_WRITER.value]
    if writers and m.final_time > 0:
        m.nc_throughput = cacheline_write_throughput(m, m.final_time, writers)
    regulated = [x for x in m.vcpus.values() if x.budget_quota is not None]
    if regulated and m.final_time > 0:
        m.overhead_ratio = sum(x.interrupt_ticks for x in regulated) / (len(regulated) * m.final_time)
    return m


# -- baselines -------------------------------------------------------------------

def baseline_key(cfg: ExperimentConfig, rep: int = 0) -> str:
    crit = cfg.critical
    s = crit.spec
    return (f"{'+'.join(crit.workloads)}|cores={cfg.num_cores}|S={cfg.service_time}"
            f"|N={cfg.instructions}|apki={cfg.critical_apki}|jitter={cfg.jitter}"
            f"|seed={cfg.seed + rep}|vcpus={'+'.join(map(str, s.vcpus))}"
            f"|reg={int(s.regulated)}:{s.budget_vm}:{s.period_vm}|d={cfg.d_timer}:{cfg.d_pmu}"
            f"|pmu={int(cfg.pmu_enabled)}")


class BaselineStore:
    """Solo runs by configuration key, persisted as ``baseline_<workload>.csv``.

    Each file holds results-schema rows; metric names carry the run's key
    in brackets so several baselines (e.g. one per jitter seed) can share a
    workload file. A stored baseline whose key does not match is ignored.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None
        self._runs: dict[str, RunMetrics] = {}
        if self.directory is not None and self.directory.is_dir():
            for p in sorted(self.directory.glob("baseline_*.csv")):
                self._load(p)

    def _load(self, path: Path):
        table = parse_csv(path.read_text(encoding="utf-8"), path)
        keys = []
        for r in table.rows:
            if r.metric_name.startswith("["):
                k = r.metric_name[1:r.metric_name.index("]")]
                if k not in keys:
                    keys.append(k)
        for k in keys:
            self._runs[k] = metrics_from_rows(table.rows, prefix=f"[{k}]")

    def get(self, key: str) -> RunMetrics | None:
        return self._runs.get(key)

    def put(self, cfg: ExperimentConfig, key: str, m: RunMetrics) -> None:
        self._runs[key] = m
        if self.directory is None:
            return
        name = "+".join(cfg.critical.workloads).replace("/", "_").replace(":", "_")
        mine = sorted(k for k in self._runs if k.split("|", 1)[0] == key.split("|", 1)[0])
        t = ResultTable()
        for k in mine:
            t.add_run("solo", self._runs[k], prefix=f"[{k}]")
        self.directory.mkdir(parents=True, exist_ok=True)
        t.write_csv(self.directory / f"baseline_{name}.csv")

    def __contains__(self, key):
        return key in self._runs


def ensure_baseline(cfg: ExperimentConfig, store: BaselineStore, rep: int = 0) -> RunMetrics:
    key = baseline_key(cfg, rep)
    m = store.get(key)
    if m is None:
        m = run_setup(cfg.with_setup(Setup.SOLO), store, rep=rep)
    return m


# -- runs ------------------------------------------------------------------------

def run_setup(cfg: ExperimentConfig, baselines: BaselineStore | None = None, *,
              rep: int = 0, ratio: bool = True, trace_dir=None) -> RunMetrics:
    """Run ``cfg.setup`` once and derive ratio metrics.

    A solo run is its own baseline (relative time 1.0) and is recorded in
    ``baselines``. Other setups need a stored baseline for their ratio;
    without one MissingBaselineError is raised, unless ``ratio`` is False.
    """
    dump = trace_dir is not None
    machine = build_machine(cfg, rep=rep, record_accesses=dump)
    m = machine.run()
    if dump:
        d = Path(trace_dir)
        d.mkdir(parents=True, exist_ok=True)
        tag = cfg.setup.value
        machine.bus.dump_records(d / f"access_trace_{tag}.csv")
        machine.regulator.dump_trace(d / f"regulator_trace_{tag}.csv")
    if cfg.setup is Setup.SOLO:
        _derive(cfg, m, critical_time(cfg, m))
        if baselines is not None:
            baselines.put(cfg, baseline_key(cfg, rep), m)
        return m
    base = None
    if ratio:
        key = baseline_key(cfg, rep)
        b = baselines.get(key) if baselines is not None else None
        if b is None:
            raise MissingBaselineError(
                f"no solo baseline for {cfg.critical_workload!r} ({key}); run the solo setup first"
            )
        base = critical_time(cfg, b)
    return _derive(cfg, m, base)


def _run_point(args):
    cfg, rep, base = args
    m = build_machine(cfg, rep=rep).run()
    return _derive(cfg, m, base)


def _run_points(points, jobs: int):
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_point, points))
    return [_run_point(p) for p in points]


def _prefix(rep: int) -> str:
    return "" if rep == 0 else f"rep{rep}."


def run_experiment(cfg: ExperimentConfig, baselines: BaselineStore | None = None,
                   trace_dir=None) -> ResultTable:
    """The configured setup (plus its solo baseline) for every repetition."""
    store = baselines if baselines is not None else BaselineStore()
    table = ResultTable()
    budget, period = cfg.nc_point() if cfg.setup is Setup.INTERF_MBR else (None, None)
    for rep in range(cfg.repetitions):
        base = ensure_baseline(cfg, store, rep)
        table.add_run("solo", base, prefix=_prefix(rep))
        if cfg.setup is not Setup.SOLO:
            m = run_setup(cfg, store, rep=rep, trace_dir=trace_dir)
            table.add_run(cfg.setup.value, m, budget, period, prefix=_prefix(rep))
    return table


def _check_sweep_cfg(cfg: ExperimentConfig):
    if cfg.setup is not Setup.INTERF_MBR:
        raise ConfigError(f"experiment.setup: sweeps need interf_mbr, got {cfg.setup.value}")
    if not any(v.spec.regulated for v in cfg.nc_vms()):
        raise ConfigError("vm: sweeps need at least one regulated non-critical VM")


def _sweep(cfg, points_cfg, xs, axis, name, baselines, jobs, expect):
    store = baselines if baselines is not None else BaselineStore()
    table = ResultTable()
    bases = []
    for rep in range(cfg.repetitions):
        b = ensure_baseline(cfg, store, rep)
        table.add_run("solo", b, prefix=_prefix(rep))
        bases.append(critical_time(cfg, b))
    work = [(pc, rep, bases[rep]) for pc in points_cfg for rep in range(cfg.repetitions)]
    results = _run_points(work, jobs)
    slow = []
    tput = []
    it = iter(results)
    for pc in points_cfg:
        budget, period = pc.nc_point()
        per = []
        for rep in range(cfg.repetitions):
            m = next(it)
            table.add_run(Setup.INTERF_MBR.value, m, budget, period, prefix=_prefix(rep))
            per.append(m)
        slow.append(sum(m.relative_execution_time for m in per) / len(per))
        tput.append(sum(m.nc_throughput or 0.0 for m in per) / len(per))
    table.sweeps.append(Sweep(name, axis, list(xs),
                              {"critical_slowdown": slow, "nc_throughput": tput}, expect))
    return table


def sweep_budget(cfg: ExperimentConfig, period_us, budgets, baselines=None,
                 jobs: int = 1) -> ResultTable:
    """One interf+mbr run per NC budget at a fixed period."""
    _check_sweep_cfg(cfg)
    budgets = list(budgets)
    if not budgets:
        raise ConfigError("sweep.values: empty budget list")
    for b in budgets:
        if b < 0 or int(b) != b:
            raise ConfigError(f"sweep.values: budget {b} is not a non-negative integer")
    _check_period(period_us, "sweep.period_us")
    points = [cfg.with_nc(budget=int(b), period_us=period_us) for b in budgets]
    return _sweep(cfg, points, budgets, "budget", "budget_sweep", baselines, jobs,
                  {"critical_slowdown": "non-decreasing", "nc_throughput": "non-decreasing"})


def sweep_period(cfg: ExperimentConfig, budget, periods_us, baselines=None,
                 jobs: int = 1) -> ResultTable:
    """One interf+mbr run per NC period at a fixed budget."""
    _check_sweep_cfg(cfg)
    periods = list(periods_us)
    if not periods:
        raise ConfigError("sweep.values: empty period list")
    for p in periods:
        _check_period(p, "sweep.values")
    if budget < 0 or int(budget) != budget:
        raise ConfigError(f"sweep.budget: {budget} is not a non-negative integer")
    points = [cfg.with_nc(budget=int(budget), period_us=p) for p in periods]
    return _sweep(cfg, points, periods, "period", "period_sweep", baselines, jobs,
                  {"critical_slowdown": "non-increasing", "nc_throughput": "non-increasing"})


def _check_period(p, path):
    try:
        ticks = us_to_ticks(p)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None
    if ticks <= 0:
        raise ConfigError(f"{path}: period {p} us must be positive")


# -- overhead --------------------------------------------------------------------

def overhead_run_ticks(period: int, d_timer: int, min_run_us=OVERHEAD_MIN_RUN_US) -> int:
    """At least ``min_run_us`` and two periods, ending just after a handler completes."""
    k = max(OVERHEAD_MIN_PERIODS, math.ceil(min_run_us * TICKS_PER_US / period))
    return k * period + d_timer


def overhead_vm(cfg: ExperimentConfig):
    regs = [v for v in cfg.nc_vms() if v.spec.regulated]
    if len(cfg.vms) == 1 and cfg.vms[0].spec.regulated:
        regs = list(cfg.vms)
    if not regs:
        raise ConfigError("vm: the overhead experiment needs a regulated VM")
    return regs[0]


def measure_overhead(cfg: ExperimentConfig, periods_us, min_run_us=OVERHEAD_MIN_RUN_US,
                     jobs: int = 1) -> ResultTable:
    """Timer interrupt cost of one regulated VM running alone, PMU disabled.

    Per period: measured ``interrupt_ticks / run ticks`` next to the
    ``d_timer / period`` model and, where known, the reference curve.
    """
    periods = list(periods_us)
    if not periods:
        raise ConfigError("sweep.values: empty period list")
    vmc = overhead_vm(cfg)
    table = ResultTable()
    measured = []
    model = []
    reference = []
    for p in periods:
        _check_period(p, "sweep.values")
        spec = replace(vmc.spec, period_vm=p)
        workloads = {v: resolve_workload(cfg, n) for v, n in zip(spec.vcpus, vmc.workloads)}
        mach = Machine([spec], workloads, num_cores=cfg.num_cores, service_time=cfg.service_time,
                       costs=InterruptCosts(cfg.d_timer, cfg.d_pmu), pmu_enabled=False,
                       max_events=cfg.max_events)
        ticks = us_to_ticks(p)
        run = overhead_run_ticks(ticks, cfg.d_timer, min_run_us)
        m = _derive(cfg, mach.run(stop=run), None)
        pred = timer_overhead_model(cfg.d_timer, ticks)
        m.extra = {"overhead_model": pred, "overhead_tolerance": cfg.d_timer / run}
        if p in REFERENCE_OVERHEAD:
            m.extra["overhead_reference"] = REFERENCE_OVERHEAD[p]
        table.add_run("overhead", m, spec.budget_vm, p)
        measured.append(m.overhead_ratio)
        model.append(pred)
        reference.append(REFERENCE_OVERHEAD.get(p))
        if p in REFERENCE_OVERHEAD and abs(pred - REFERENCE_OVERHEAD[p]) > 0.005:
            table.notes.append(
                f"period {p} us: linear model {pred:.4f} vs reference {REFERENCE_OVERHEAD[p]:.4f}"
                " (diverges)"
            )
        if p in REFERENCE_OVERHEAD_BELOW and pred >= REFERENCE_OVERHEAD_BELOW[p]:
            table.notes.append(
                f"period {p} us: linear model {pred:.4f} is not below the reference bound "
                f"{REFERENCE_OVERHEAD_BELOW[p]:.4f} (diverges)"
            )
    series = {"measured": measured, "model": model}
    if any(r is not None for r in reference):
        series["reference"] = reference
    table.sweeps.append(Sweep("overhead", "period", periods, series,
                              {"measured": "non-increasing"}))
    return table


# -- per-profile NC sensitivity ---------------------------------------------------

SENSITIVITY_PROFILES = ("basicmath_small", "qsort_small", "bitcount_small", "susans_small",
                        "susane_small", "susanc_small")
SENSITIVITY_JITTER = 150
SENSITIVITY_REPETITIONS = 3
SENSITIVITY_WINDOW_US = 1000


def profile_sensitivity(cfg: ExperimentConfig, budget, period_us,
                        profiles=SENSITIVITY_PROFILES, window_us=SENSITIVITY_WINDOW_US,
                        jitter=SENSITIVITY_JITTER, repetitions=SENSITIVITY_REPETITIONS,
                        jobs: int = 1) -> ResultTable:
    """NC write throughput next to each critical profile at one regulation point.

    Every run is observed over the same fixed window, so partial periods at
    the end of differently long critical runs do not skew the comparison.
    With strictly periodic access gaps, round-robin locks the critical core
    into a few discrete bus shares and profiles inside one share tie. Seeded
    jitter spreads the gaps so the throughput reflects mean intensity, and
    ``repetitions`` seeds are averaged.
    """
    _check_sweep_cfg(cfg)
    _check_period(period_us, "sweep.period_us")
    if not profiles:
        raise ConfigError("sweep.values: empty profile list")
    window = us_to_ticks(window_us)
    if window <= 0:
        raise ConfigError("window_us: must be positive")
    crit = cfg.critical
    base = replace(cfg.with_nc(budget=budget, period_us=period_us), jitter=jitter,
                   repetitions=repetitions)
    # long enough that no critical profile finishes inside the window
    base = replace(base, instructions=max(cfg.instructions, 4 * window))
    points = []
    for name in profiles:
        vms = tuple(replace(v, workloads=(name,) * len(v.workloads)) if v is crit else v
                    for v in base.vms)
        pc = replace(base, vms=vms)
        points += [(pc, rep, window) for rep in range(repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_run_window, points))
    else:
        runs = [_run_window(p) for p in points]
    table = ResultTable()
    means = []
    it = iter(runs)
    for name in profiles:
        vals = []
        for rep in range(repetitions):
            m = next(it)
            table.add_run(f"sensitivity:{name}", m, budget, period_us, prefix=_prefix(rep))
            vals.append(m.nc_throughput)
        means.append(sum(vals) / len(vals))
        table.add(f"sensitivity:{name}", "nc_throughput_mean", means[-1],
                  budget=budget, period_us=period_us)
    table.sweeps.append(Sweep("profile_sensitivity", "profile", list(profiles),
                              {"nc_throughput": means}, {"nc_throughput": "non-increasing"}))
    return table


def _run_window(args):
    cfg, rep, window = args
    m = build_machine(cfg, rep=rep).run(stop=window)
    return _derive(cfg, m, None)


__all__ = [
    "BaselineStore", "MissingBaselineError", "REFERENCE_OVERHEAD", "baseline_key",
    "build_machine", "critical_time", "ensure_baseline", "measure_overhead",
    "overhead_run_ticks", "profile_sensitivity", "run_experiment", "run_setup", "setup_vms", "sweep_budget",
    "sweep_period",
]
