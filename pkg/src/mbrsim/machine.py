"""A simulated platform: cores, shared bus and regulator on one engine.

Within one tick, events resolve in this order: timer ticks, PMU overflow
handler completions, bus transaction completions, compute/handler
completions, then bus arbitration.

Interrupt handlers run as soon as they are raised. While a core is in a
handler it makes no workload progress: computation is suspended, and a
queued bus request is held back from arbitration until the handler ends.
A transaction already in service cannot be retracted and completes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .memsys import DEFAULT_SERVICE_TIME, Bus
from .regulator import InterruptCosts, Regulator, VmSpec
from .simcore import (
    DEFAULT_MAX_EVENTS,
    Activity,
    BusState,
    CoreMode,
    CoreState,
    Engine,
    EventKind,
    SimulationError,
)
from .workload import DONE, MEM_ACCESS, Cursor, WorkloadProfile

TIMER = "timer"
PMU = "pmu"


@dataclass
class VcpuMetrics:
    vm: int
    vcpu: int
    workload: str
    workload_kind: str
    execution_time: int | None
    bus_accesses: int
    compute_ticks: int
    stall_ticks: int
    interrupt_ticks: int
    idle_ticks: int
    timer_interrupts: int = 0
    pmu_interrupts: int = 0
    periods_elapsed: int = 0
    budget_quota: int | None = None
    max_period_accesses: int | None = None


@dataclass
class RunMetrics:
    final_time: int
    vcpus: dict[int, VcpuMetrics]
    bus_completed: int = 0
    bus_busy_ticks: int = 0
    events: int = 0
    relative_execution_time: float | None = None
    nc_throughput: float | None = None
    overhead_ratio: float | None = None
    extra: dict = field(default_factory=dict)

    def vm_vcpus(self, vm: int):
        return [m for m in self.vcpus.values() if m.vm == vm]


class Machine:
    def __init__(self, vms: list[VmSpec], workloads: dict[int, WorkloadProfile], *,
                 num_cores: int = 4, service_time: int = DEFAULT_SERVICE_TIME,
                 costs: InterruptCosts = InterruptCosts(), pmu_enabled: bool = True,
                 max_events: int = DEFAULT_MAX_EVENTS, record_log: bool = False,
                 record_accesses: bool = False):
        self.engine = Engine(max_events=max_events, record_log=record_log)
        self.vms = list(vms)
        self.workloads = dict(workloads)
        self.vm_of: dict[int, int] = {}
        for spec in self.vms:
            for v in spec.vcpus:
                if v in self.vm_of:
                    raise SimulationError(f"vCPU {v} belongs to two VMs")
                if not 0 <= v < num_cores:
                    raise SimulationError(f"vCPU {v} has no core (num_cores={num_cores})")
                if v not in self.workloads:
                    raise SimulationError(f"vCPU {v} has no workload")
                self.vm_of[v] = spec.vm
        self.bus = Bus(self.engine, num_cores, service_time, record_accesses=record_accesses)
        self.regulator = Regulator(self.engine, self.vms, costs, pmu_enabled)
        self.reg = self.regulator.states
        self.d_timer = costs.d_timer
        self.d_pmu = costs.pmu
        self.cores: dict[int, CoreState] = {}
        for v in sorted(self.vm_of):
            prof = self.workloads[v]
            self.cores[v] = CoreState(v, Cursor(prof), prof.finite)
        self.cpi = {v: self.workloads[v].base_cpi for v in self.cores}
        self.unfinished = sum(1 for c in self.cores.values() if c.finite)
        h = self.engine.handlers
        h[EventKind.TIMER_TICK] = self._on_timer
        h[EventKind.PMU_OVERFLOW] = self._on_pmu
        h[EventKind.BUS_GRANT] = self._on_bus
        h[EventKind.WORKLOAD_DONE] = self._on_done
        self.engine.end_of_instant.append(self._arbitrate)
        self._ran = False

    # -- run ---------------------------------------------------------------

    def run(self, stop: int | None = None) -> RunMetrics:
        """Run to ``stop`` ticks, or until every finite workload is done."""
        if self._ran:
            raise SimulationError("a Machine runs once; build a new one")
        self._ran = True
        if not self.cores:
            return RunMetrics(0, {})
        if stop is None and self.unfinished == 0:
            raise SimulationError("only endless workloads and no stop time")
        self.regulator.start()
        for c in self.cores.values():
            self._advance(c, 0)
        self._arbitrate(0)
        final = self.engine.run(stop)
        if stop is None and self.unfinished:
            raise SimulationError("event queue drained before workloads finished")
        return self._metrics(final)

    @property
    def log(self):
        return self.engine.log

    # -- event handlers ----------------------------------------------------

    def _on_timer(self, ev):
        t = ev.time
        core = self.cores[ev.target]
        if core.mode is CoreMode.FINISHED:
            return
        resume = self.regulator.on_timer_tick(ev.target, t)
        d = self.d_timer
        if d == 0:
            if resume:
                self._wake(core, t)
            return
        core.handlers.append((TIMER, d))
        if core.active_handler is None:
            self._start_handler(core, t)

    def _on_pmu(self, ev):
        core = self.cores[ev.target]
        if ev.token == core.token:
            self._handler_done(core, ev.time)

    def _on_done(self, ev):
        core = self.cores[ev.target]
        if ev.token != core.token:
            return
        if core.mode is CoreMode.INTERRUPT:
            self._handler_done(core, ev.time)
        else:
            core.compute_end = -1
            self._advance(core, ev.time)

    def _on_bus(self, ev):
        t = ev.time
        c = ev.target
        self.bus.complete_access(c, t)
        core = self.cores[c]
        core.bus = BusState.NONE
        core.accesses += 1
        if self.regulator.on_access_retired(c, t):
            if self.d_pmu:
                core.handlers.append((PMU, self.d_pmu))
            else:
                self.regulator.on_pmu_delivered(c)
        if core.active_handler is not None:
            return
        if core.handlers:
            self._start_handler(core, t)
        elif c in self.reg and self.reg[c].idled:
            self._idle(core, t)
        else:
            self._advance(core, t)

    def _arbitrate(self, t):
        c = self.bus.arbitrate(t)
        if c is not None:
            self.cores[c].bus = BusState.SERVICE

    # -- core transitions --------------------------------------------------

    def _start_handler(self, core: CoreState, t: int) -> None:
        kind, d = core.handlers.pop(0)
        if core.compute_end >= t:
            core.compute_left = core.compute_end - t
            core.compute_end = -1
        if core.bus is BusState.PENDING:
            self.bus.mask(core.core, True)
        core.token += 1
        core.mode = CoreMode.INTERRUPT
        core.active_handler = kind
        core.enter(Activity.INTERRUPT, t)
        kind_ev = EventKind.PMU_OVERFLOW if kind == PMU else EventKind.WORKLOAD_DONE
        self.engine.push(t + d, kind_ev, core.core, core.token)

    def _handler_done(self, core: CoreState, t: int) -> None:
        kind = core.active_handler
        core.active_handler = None
        if kind == PMU:
            self.regulator.on_pmu_delivered(core.core)
        if core.handlers:
            self._start_handler(core, t)
            return
        st = self.reg.get(core.core)
        if st is not None and st.idled:
            self._idle(core, t)
            return
        core.mode = CoreMode.RUNNING
        if core.bus is BusState.NONE:
            self._resume(core, t)
        else:
            self.bus.mask(core.core, False)
            core.enter(Activity.STALL, t)

    def _idle(self, core: CoreState, t: int) -> None:
        # a queued request cannot exist here (cores block on their access),
        # but idling must never leak one onto the bus
        if self.bus.cancel(core.core):
            core.bus = BusState.NONE
        core.mode = CoreMode.IDLED
        core.enter(Activity.IDLE, t)

    def _wake(self, core: CoreState, t: int) -> None:
        if core.mode is CoreMode.IDLED:
            core.mode = CoreMode.RUNNING
            self._resume(core, t)

    def _resume(self, core: CoreState, t: int) -> None:
        left = core.compute_left
        if left > 0:
            core.compute_left = 0
            core.compute_end = t + left
            core.enter(Activity.COMPUTE, t)
            self.engine.push(t + left, EventKind.WORKLOAD_DONE, core.core, core.token)
        else:
            self._advance(core, t)

    def _advance(self, core: CoreState, t: int) -> None:
        cursor = core.cursor
        while True:
            act = cursor.next_action()
            if act is MEM_ACCESS:
                core.bus = BusState.PENDING
                self.bus.request_access(core.core, t)
                core.enter(Activity.STALL, t)
                return
            if act is DONE:
                core.mode = CoreMode.FINISHED
                core.finish_time = t
                core.enter(Activity.DONE, t)
                self.unfinished -= 1
                if self.unfinished == 0:
                    self.engine.request_stop(t)
                return
            n = act.instructions * self.cpi[core.core]
            if n:
                core.compute_end = t + n
                core.enter(Activity.COMPUTE, t)
                self.engine.push(t + n, EventKind.WORKLOAD_DONE, core.core, core.token)
                return

    # -- results -----------------------------------------------------------

    def _metrics(self, final: int) -> RunMetrics:
        out = {}
        for v, core in self.cores.items():
            if core.mode is not CoreMode.FINISHED:
                core.enter(core.activity, final)
            prof = self.workloads[v]
            st = self.reg.get(v)
            out[v] = VcpuMetrics(
                vm=self.vm_of[v], vcpu=v, workload=prof.name, workload_kind=prof.kind.value,
                execution_time=core.finish_time, bus_accesses=core.accesses,
                compute_ticks=core.compute_ticks, stall_ticks=core.stall_ticks,
                interrupt_ticks=core.interrupt_ticks, idle_ticks=core.idle_ticks,
                timer_interrupts=st.timer_interrupts if st else 0,
                pmu_interrupts=st.pmu_interrupts if st else 0,
                periods_elapsed=len(st.period_usage) if st else 0,
                budget_quota=st.budget_quota if st else None,
                max_period_accesses=self.regulator.max_period_usage(v) if st else None,
            )
        return RunMetrics(final, out, self.bus.completed, self.bus.busy_ticks,
                          self.engine.queue.dispatched)
