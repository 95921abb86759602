"""Result tables: long-format CSV, plot-data files and sweep summaries.

Every value lands in ``results.csv`` as one row
``setup,vm,vcpu,budget,period_us,metric_name,value``. Run-level metrics
leave ``vm``/``vcpu`` empty. ``budget``/``period_us`` name the regulation
point of the run (the non-critical VM's parameters) and stay empty when
nothing was regulated. Floats are written with ``repr`` so reading the file
back gives the exact same numbers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..machine import RunMetrics, VcpuMetrics

HEADER = ("setup", "vm", "vcpu", "budget", "period_us", "metric_name", "value")

_VCPU_FIELDS = tuple(sorted(f.name for f in fields(VcpuMetrics) if f.name not in ("vm", "vcpu")))
_RUN_FIELDS = ("bus_busy_ticks", "bus_completed", "events", "final_time", "nc_throughput",
               "overhead_ratio", "relative_execution_time")


class ResultsError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    setup: str
    vm: int | None
    vcpu: int | None
    budget: int | None
    period_us: float | None
    metric_name: str
    value: object


@dataclass
class Sweep:
    """One plotted series family: ``series[name][i]`` belongs to ``xs[i]``.

    ``expect`` maps series names to the trend the summary checks,
    "non-decreasing" or "non-increasing".
    """

    name: str
    axis: str
    xs: list
    series: dict[str, list] = field(default_factory=dict)
    expect: dict[str, str] = field(default_factory=dict)


@dataclass
class ResultTable:
    rows: list[Row] = field(default_factory=list)
    sweeps: list[Sweep] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def add(self, setup, metric, value, vm=None, vcpu=None, budget=None, period_us=None):
        self.rows.append(Row(setup, vm, vcpu, budget, period_us, metric, value))

    def add_run(self, setup: str, m: RunMetrics, budget=None, period_us=None, prefix=""):
        """Add every value of ``m``: run-level rows first, then vCPUs in id order."""
        for name in _RUN_FIELDS:
            self.add(setup, prefix + name, getattr(m, name), budget=budget, period_us=period_us)
        for key in sorted(m.extra):
            self.add(setup, prefix + "extra." + key, m.extra[key],
                     budget=budget, period_us=period_us)
        for v in sorted(m.vcpus):
            vm = m.vcpus[v]
            for name in _VCPU_FIELDS:
                self.add(setup, prefix + name, getattr(vm, name), vm.vm, vm.vcpu,
                         budget, period_us)

    def extend(self, other: "ResultTable"):
        self.rows += other.rows
        self.sweeps += other.sweeps
        self.notes += other.notes

    def select(self, metric, setup=None, vcpu=None, **match):
        out = []
        for r in self.rows:
            if r.metric_name != metric or (setup is not None and r.setup != setup):
                continue
            if vcpu is not None and r.vcpu != vcpu:
                continue
            if all(getattr(r, k) == v for k, v in match.items()):
                out.append(r.value)
        return out

    # -- CSV ---------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for r in self.rows:
            w.writerow([r.setup, _fmt(r.vm), _fmt(r.vcpu), _fmt(r.budget), _fmt(r.period_us),
                        r.metric_name, _fmt(r.value)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path) -> ResultTable:
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv(text, path)


def parse_csv(text: str, path="<results>") -> ResultTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != HEADER:
        raise ResultsError(f"{path}: header must be {','.join(HEADER)}")
    t = ResultTable()
    for rec in reader:
        setup, vm, vcpu, budget, period, metric, value = rec
        t.rows.append(Row(setup, _parse(vm), _parse(vcpu), _parse(budget), _parse(period),
                          metric, _parse(value)))
    return t


def metrics_from_rows(rows, prefix="") -> RunMetrics:
    """Rebuild the RunMetrics whose rows were written by ``add_run``."""
    run = {}
    extra = {}
    vcpus: dict[int, dict] = {}
    for r in rows:
        if not r.metric_name.startswith(prefix):
            continue
        name = r.metric_name[len(prefix):]
        if r.vcpu is None:
            if name.startswith("extra."):
                extra[name[len("extra."):]] = r.value
            elif name in _RUN_FIELDS:
                run[name] = r.value
        else:
            d = vcpus.setdefault(r.vcpu, {"vm": r.vm, "vcpu": r.vcpu})
            d[name] = str(r.value) if name in ("workload", "workload_kind") else r.value
    return RunMetrics(
        final_time=run["final_time"],
        vcpus={v: VcpuMetrics(**d) for v, d in sorted(vcpus.items())},
        bus_completed=run.get("bus_completed", 0), bus_busy_ticks=run.get("bus_busy_ticks", 0),
        events=run.get("events", 0),
        relative_execution_time=run.get("relative_execution_time"),
        nc_throughput=run.get("nc_throughput"), overhead_ratio=run.get("overhead_ratio"),
        extra=extra,
    )


# -- summaries ---------------------------------------------------------------

def trend(ys) -> str:
    """Classify a series as constant, non-decreasing, non-increasing or mixed."""
    ys = [y for y in ys if y is not None]
    up = all(b >= a for a, b in zip(ys, ys[1:]))
    down = all(b <= a for a, b in zip(ys, ys[1:]))
    if up and down:
        return "constant"
    if up:
        return "non-decreasing"
    if down:
        return "non-increasing"
    return "mixed"


def trend_ok(ys, expected: str) -> bool:
    got = trend(ys)
    return got == expected or got == "constant"


def summary_text(table: ResultTable) -> str:
    lines = []
    for sw in table.sweeps:
        lines.append(f"[{sw.name}] axis={sw.axis} x={_listfmt(sw.xs)}")
        for name, ys in sw.series.items():
            vals = [y for y in ys if y is not None and not (isinstance(y, float) and math.isnan(y))]
            lo = min(vals) if vals else None
            hi = max(vals) if vals else None
            line = f"  {name}: min={_fmt(lo)} max={_fmt(hi)} trend={trend(ys)}"
            if name in sw.expect:
                verdict = "PASS" if trend_ok(ys, sw.expect[name]) else "FAIL"
                line += f" expected={sw.expect[name]} verdict={verdict}"
            lines.append(line)
    for n in table.notes:
        lines.append(f"note: {n}")
    if not lines:
        lines.append(f"rows={len(table.rows)} (no sweeps)")
    return "\n".join(lines) + "\n"


def _listfmt(xs):
    return "[" + ", ".join(_fmt(x) for x in xs) + "]"


def fig_csv(sw: Sweep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "series", "y"))
    for name, ys in sw.series.items():
        for x, y in zip(sw.xs, ys):
            w.writerow((_fmt(x), name, _fmt(y)))
    return buf.getvalue()


def emit_results(table: ResultTable, out_dir) -> list[Path]:
    """Write results.csv, summary.txt and fig_<sweep>.csv files; returns the paths.

    Fails before touching the file system when the table is empty.
    """
    if not table.rows:
        raise ResultsError("nothing to emit: the result table is empty")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        p = out / "results.csv"
        table.write_csv(p)
        written.append(p)
        p = out / "summary.txt"
        p.write_text(summary_text(table), encoding="utf-8", newline="")
        written.append(p)
        for sw in table.sweeps:
            p = out / f"fig_{sw.name}.csv"
            p.write_text(fig_csv(sw), encoding="utf-8", newline="")
            written.append(p)
    except OSError as e:
        raise ResultsError(f"cannot write results to {out}: {e}") from None
    return written
