"""VM-centric memory bandwidth reservation.

Each VM declares a budget (bus accesses per period) and a period. The budget
is split across the VM's vCPUs once, at configuration time; enforcement is
per core: a PMU counts retired bus accesses and idles the core when its
quota runs out, and a per-core timer refills the quota every period and
wakes idled cores.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .simcore import EventKind, SimulationError, us_to_ticks


class ConfigError(ValueError):
    """Invalid configuration; message starts with the offending field path."""


DEFAULT_D_TIMER = 143


@dataclass(frozen=True)
class InterruptCosts:
    d_timer: int = DEFAULT_D_TIMER
    d_pmu: int | None = None  # None: same as d_timer

    def __post_init__(self):
        if self.d_timer < 0 or (self.d_pmu is not None and self.d_pmu < 0):
            raise ConfigError("interrupt costs must be non-negative")

    @property
    def pmu(self) -> int:
        return self.d_timer if self.d_pmu is None else self.d_pmu


@dataclass(frozen=True)
class VmSpec:
    """MBR parameters of one VM. vCPU ids double as the core they are pinned to."""

    vm: int
    vcpus: tuple[int, ...]
    budget_vm: int = 0
    period_vm: float = 10
    custom_dist: tuple[float, ...] | None = None
    regulated: bool = True
    name: str = ""

    def __post_init__(self):
        path = f"vm.{self.vm}"
        if not self.vcpus:
            raise ConfigError(f"{path}.vcpus: VM needs at least one vCPU")
        if len(set(self.vcpus)) != len(self.vcpus):
            raise ConfigError(f"{path}.vcpus: duplicate vCPU id")
        if self.budget_vm < 0 or int(self.budget_vm) != self.budget_vm:
            raise ConfigError(f"{path}.budget: must be a non-negative integer")
        if not self.period_vm > 0:
            raise ConfigError(f"{path}.period_us: must be positive")
        try:
            us_to_ticks(self.period_vm)
        except ValueError as e:
            raise ConfigError(f"{path}.period_us: {e}") from None
        if self.custom_dist is not None:
            d = self.custom_dist
            if len(d) != len(self.vcpus):
                raise ConfigError(
                    f"{path}.custom_dist: {len(d)} fractions for {len(self.vcpus)} vCPUs"
                )
            if any(not 0 <= f <= 1 for f in d):
                raise ConfigError(f"{path}.custom_dist: fractions must lie in [0, 1]")
            # flooring slack: one access per vCPU at most
            if abs(sum(Fraction(str(f)) for f in d) - 1) > Fraction(1, 10**6):
                raise ConfigError(f"{path}.custom_dist: fractions must sum to 1")

    @property
    def period_ticks(self) -> int:
        return us_to_ticks(self.period_vm)


def assign_budgets(spec: VmSpec) -> list[tuple[int, int]]:
    """Split the VM budget into per-vCPU quotas that sum exactly to it.

    Each vCPU gets ``floor(budget * fraction)`` (or ``floor(budget / n)``);
    accesses lost to flooring go one by one to vCPUs in ascending id order.
    """
    budget = int(spec.budget_vm)
    n = len(spec.vcpus)
    if spec.custom_dist is None:
        shares = [Fraction(budget, n)] * n
    else:
        shares = [budget * Fraction(str(f)) for f in spec.custom_dist]
    quotas = [math.floor(s) for s in shares]
    leftover = budget - sum(quotas)
    order = sorted(range(n), key=lambda i: spec.vcpus[i])
    i = 0
    while leftover > 0:
        quotas[order[i % n]] += 1
        leftover -= 1
        i += 1
    while leftover < 0:  # fractions summing slightly above 1
        k = order[-1 - (i % n)]
        if quotas[k] > 0:
            quotas[k] -= 1
            leftover += 1
        i += 1
    return list(zip(spec.vcpus, quotas))


def timer_overhead_model(d_timer: int, period: int) -> float:
    """Fraction of core time spent in the periodic timer interrupt."""
    if period <= 0:
        raise ValueError("period must be > 0")
    return d_timer / period


def effective_bandwidth(spec: VmSpec) -> float:
    """Reserved bandwidth in bus accesses per microsecond."""
    if not spec.period_vm > 0:
        raise ValueError("period must be > 0")
    return spec.budget_vm / spec.period_vm


@dataclass
class VcpuRegState:
    vcpu: int
    vm: int
    budget_quota: int
    period: int
    remaining: int = 0
    idled: bool = False
    period_start: int = 0
    used: int = 0
    timer_interrupts: int = 0
    pmu_interrupts: int = 0
    period_usage: list[int] = field(default_factory=list)
    period_idled: list[bool] = field(default_factory=list)
    _was_idled: bool = False

    def __post_init__(self):
        self.remaining = self.budget_quota


class Regulator:
    """Per-vCPU budget accounting, driven by machine callbacks."""

    def __init__(self, engine, specs, costs: InterruptCosts = InterruptCosts(),
                 pmu_enabled: bool = True):
        self.engine = engine
        self.costs = costs
        self.pmu_enabled = pmu_enabled
        self.states: dict[int, VcpuRegState] = {}
        for spec in specs:
            if not spec.regulated:
                continue
            for vcpu, quota in assign_budgets(spec):
                self.states[vcpu] = VcpuRegState(vcpu, spec.vm, quota, spec.period_ticks)

    def start(self) -> None:
        for v in sorted(self.states):
            st = self.states[v]
            self.engine.push(st.period, EventKind.TIMER_TICK, v)

    def on_timer_tick(self, vcpu: int, now: int) -> bool:
        """Refill the quota and arm the next tick. Returns True if the core resumes."""
        st = self.states[vcpu]
        if now != st.period_start + st.period:
            raise SimulationError(f"timer for vCPU {vcpu} fired off-period at t={now}")
        st.period_usage.append(st.used)
        st.period_idled.append(st._was_idled)
        st.used = 0
        st._was_idled = st.idled
        st.remaining = st.budget_quota
        st.period_start = now
        st.timer_interrupts += 1
        self.engine.push(now + st.period, EventKind.TIMER_TICK, vcpu)
        # a zero quota leaves the core idled: resuming would only overflow again
        if st.idled and st.budget_quota > 0:
            st.idled = False
            return True
        return False

    def on_access_retired(self, vcpu: int, now: int) -> bool:
        """Charge one access. Returns True if a PMU overflow interrupt is raised."""
        st = self.states.get(vcpu)
        if st is None:
            return False
        st.used += 1
        if st.remaining > 0:
            st.remaining -= 1
        return self.pmu_enabled and st.remaining == 0

    def on_pmu_delivered(self, vcpu: int) -> bool:
        """Overflow handler finished. Returns True if the core must idle."""
        st = self.states[vcpu]
        st.pmu_interrupts += 1
        if st.remaining == 0:
            st.idled = True
            st._was_idled = True
            return True
        return False

    def max_period_usage(self, vcpu: int) -> int:
        st = self.states[vcpu]
        return max(st.period_usage + [st.used])

    def dump_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["vcpu", "period_index", "accesses_used", "idled"])
            for v in sorted(self.states):
                st = self.states[v]
                for i, (u, idl) in enumerate(zip(st.period_usage, st.period_idled)):
                    w.writerow([v, i, u, int(idl)])

