"""Brute-force tick-by-tick reference simulator.

Shares no code with the package. Every tick it walks the same phase order
the event engine promises (timers, PMU handler ends, bus completion,
instruction fetch, arbitration), then charges the tick to exactly one
activity per core. Slow, but simple enough to check by reading.
"""

from dataclasses import dataclass, field
from fractions import Fraction


@dataclass
class OCore:
    kind: str  # "writer" | "intensity" | "trace"
    apki: int = 0
    total: int = 0
    cpi: int = 1
    ops: list = field(default_factory=list)  # trace: expanded "C"/"M" ops
    quota: int | None = None  # None: unregulated
    period: int = 0

    # dynamic state
    i: int = 0
    compute_left: int = 0
    bus: str = "none"  # none | pending | service
    active: tuple | None = None  # (kind, end_time)
    queue: list = field(default_factory=list)
    idled: bool = False
    remaining: int = 0
    used: int = 0
    finished: bool = False
    finish_time: int | None = None
    accesses: int = 0
    timers: int = 0
    pmus: int = 0
    usage: list = field(default_factory=list)
    ticks: dict = field(default_factory=lambda: {"compute": 0, "stall": 0, "interrupt": 0, "idle": 0})

    def next_op(self):
        if self.kind == "writer":
            return "M"
        if self.kind == "intensity":
            if self.i >= self.total:
                return "D"
            a = self.apki
            op = "M" if (self.i + 1) * a // 1000 > self.i * a // 1000 else "C"
            self.i += 1
            return op
        if self.i >= len(self.ops):
            return "D"
        op = self.ops[self.i]
        self.i += 1
        return op


def expand_trace(records):
    ops = []
    for gap, count in records:
        ops += ["C"] * gap + ["M"] * count
    return ops


def split_budget(budget, n, dist=None):
    """Quotas for vCPUs given in ascending id order."""
    if dist is None:
        base = budget // n
        q = [base] * n
    else:
        q = [int(Fraction(budget) * Fraction(str(f))) for f in dist]
    k = 0
    while sum(q) < budget:
        q[k % n] += 1
        k += 1
    return q


def simulate(cores, service, d_timer, d_pmu, pmu_enabled=True, stop=None):
    """Run the reference model. ``cores`` is a list of OCore indexed by core id."""
    n = len(cores)
    for c in cores:
        if c.quota is not None:
            c.remaining = c.quota
    in_service = None
    service_end = 0
    cursor = n - 1
    finite = [c for c in cores if c.kind != "writer"]
    if stop is None and not finite:
        raise ValueError("needs a stop time")
    log_grants = []

    def start_next(c, t):
        kind, d = c.queue.pop(0)
        c.active = (kind, t + d)

    t = 0
    while True:
        # A: timers
        for c in cores:
            if c.quota is None or c.finished or t == 0 or t % c.period:
                continue
            c.usage.append(c.used)
            c.used = 0
            c.remaining = c.quota
            c.timers += 1
            if c.idled and c.quota > 0:
                c.idled = False
            if d_timer > 0:
                c.queue.append(("timer", d_timer))
                if c.active is None:
                    start_next(c, t)
        # B: handler completions
        for c in cores:
            if c.active is not None and c.active[1] == t:
                kind = c.active[0]
                c.active = None
                if kind == "pmu":
                    c.pmus += 1
                    if c.remaining == 0:
                        c.idled = True
                if c.queue:
                    start_next(c, t)
        # C: bus completion
        if in_service is not None and service_end == t:
            c = cores[in_service]
            in_service = None
            c.bus = "none"
            c.accesses += 1
            if c.quota is not None:
                c.used += 1
                if c.remaining > 0:
                    c.remaining -= 1
                if pmu_enabled and c.remaining == 0:
                    if d_pmu > 0:
                        c.queue.append(("pmu", d_pmu))
                    else:
                        c.pmus += 1
                        c.idled = True
            if c.active is None and c.queue:
                start_next(c, t)
        # D: fetch
        for c in cores:
            if (c.finished or c.active is not None or c.idled or c.bus != "none"
                    or c.compute_left > 0):
                continue
            op = c.next_op()
            if op == "D":
                c.finished = True
                c.finish_time = t
            elif op == "M":
                c.bus = "pending"
            else:
                c.compute_left = c.cpi
        # E: arbitration
        if in_service is None:
            k = cursor
            for _ in range(n):
                k = (k + 1) % n
                c = cores[k]
                if c.bus == "pending" and c.active is None:
                    c.bus = "service"
                    in_service = k
                    service_end = t + service
                    cursor = k
                    log_grants.append((t, k))
                    break
        # stop?
        if stop is not None and t >= stop:
            break
        if finite and all(c.finished for c in finite):
            break
        # consume tick [t, t+1)
        for c in cores:
            if c.finished:
                continue
            if c.active is not None:
                c.ticks["interrupt"] += 1
            elif c.idled:
                c.ticks["idle"] += 1
            elif c.bus != "none":
                c.ticks["stall"] += 1
            else:
                assert c.compute_left > 0, f"core {cores.index(c)} has nothing to do at t={t}"
                c.ticks["compute"] += 1
                c.compute_left -= 1
        t += 1
    return t, log_grants
