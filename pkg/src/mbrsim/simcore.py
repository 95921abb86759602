"""Discrete-event engine: simulated time, event ordering and per-core state.

One tick is one nanosecond of simulated time. Events at the same tick are
dispatched in (kind priority, insertion sequence) order, which makes every
run a pure function of its configuration.
"""

from __future__ import annotations

import heapq
from enum import Enum, IntEnum
from typing import Callable, NamedTuple

TICKS_PER_US = 1000
DEFAULT_MAX_EVENTS = 10**9


class SimulationError(RuntimeError):
    """Fatal logic error or aborted run (past scheduling, livelock guard)."""


class EventKind(IntEnum):
    # value doubles as same-tick priority: lower dispatches first
    TIMER_TICK = 0
    PMU_OVERFLOW = 1
    BUS_GRANT = 2
    WORKLOAD_DONE = 3


class Event(NamedTuple):
    time: int
    kind: EventKind
    sequence: int
    target: int
    token: int = 0


def us_to_ticks(us) -> int:
    """Convert microseconds to ticks; rejects values that are not whole ticks."""
    ticks = us * TICKS_PER_US
    if ticks != int(ticks):
        raise ValueError(f"{us} us is not a whole number of ticks")
    return int(ticks)


class EventQueue:
    """Min-heap of events keyed by (time, kind, sequence)."""

    def __init__(self, max_events: int = DEFAULT_MAX_EVENTS, record_log: bool = False):
        self._heap: list[Event] = []
        self._seq = 0
        self.now = 0
        self.dispatched = 0
        self.max_events = max_events
        self.log: list[tuple[int, int, int]] | None = [] if record_log else None

    def __len__(self):
        return len(self._heap)

    def schedule(self, event: Event) -> None:
        if event.time < self.now:
            raise SimulationError(
                f"event {event.kind.name} for {event.target} scheduled at t={event.time} "
                f"but now is t={self.now}"
            )
        heapq.heappush(self._heap, event)

    def push(self, time: int, kind: EventKind, target: int, token: int = 0) -> None:
        """Create and schedule an event with the next insertion sequence number."""
        if time < self.now:
            raise SimulationError(
                f"event {kind.name} for {target} scheduled at t={time} but now is t={self.now}"
            )
        self._seq += 1
        heapq.heappush(self._heap, Event(time, kind, self._seq, target, token))

    def peek(self) -> Event | None:
        return self._heap[0] if self._heap else None

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        self.dispatched += 1
        if self.dispatched > self.max_events:
            raise SimulationError(
                f"event limit {self.max_events} exceeded at t={ev.time}; "
                "configuration probably livelocks"
            )
        return ev


class CoreMode(Enum):
    RUNNING = "running"
    IDLED = "idled_by_regulator"
    INTERRUPT = "handling_interrupt"
    FINISHED = "finished"


class Activity(IntEnum):
    """What a core does during a tick; exactly one per tick."""

    COMPUTE = 0
    STALL = 1
    INTERRUPT = 2
    IDLE = 3
    DONE = 4


class BusState(IntEnum):
    NONE = 0
    PENDING = 1
    SERVICE = 2


class CoreState:
    """Per-core execution state plus tick accounting by activity."""

    __slots__ = (
        "core", "mode", "bus", "compute_end", "compute_left", "handlers",
        "active_handler", "token", "activity", "since", "ticks",
        "accesses", "finish_time", "cursor", "finite",
    )

    def __init__(self, core: int, cursor, finite: bool):
        self.core = core
        self.mode = CoreMode.RUNNING
        self.bus = BusState.NONE
        self.compute_end = -1
        self.compute_left = 0
        self.handlers: list[tuple[str, int]] = []
        self.active_handler: str | None = None
        self.token = 0
        self.activity = Activity.COMPUTE
        self.since = 0
        self.ticks = [0, 0, 0, 0, 0]
        self.accesses = 0
        self.finish_time: int | None = None
        self.cursor = cursor
        self.finite = finite

    def enter(self, activity: Activity, now: int) -> None:
        self.ticks[self.activity] += now - self.since
        self.activity = activity
        self.since = now

    @property
    def compute_ticks(self):
        return self.ticks[Activity.COMPUTE]

    @property
    def stall_ticks(self):
        return self.ticks[Activity.STALL]

    @property
    def interrupt_ticks(self):
        return self.ticks[Activity.INTERRUPT]

    @property
    def idle_ticks(self):
        return self.ticks[Activity.IDLE]


Handler = Callable[[Event], None]


class Engine:
    """Dispatch loop. Modules register one handler per event kind.

    ``end_of_instant`` callbacks run once after every event of a tick has been
    dispatched; the bus uses it to arbitrate among all same-tick requests.
    """

    def __init__(self, max_events: int = DEFAULT_MAX_EVENTS, record_log: bool = False):
        self.queue = EventQueue(max_events=max_events, record_log=record_log)
        self.handlers: dict[EventKind, Handler] = {}
        self.end_of_instant: list[Callable[[int], None]] = []
        self.stop_at: int | None = None

    @property
    def now(self) -> int:
        return self.queue.now

    @property
    def log(self):
        return self.queue.log

    def schedule(self, event: Event) -> None:
        self.queue.schedule(event)

    def push(self, time: int, kind: EventKind, target: int, token: int = 0) -> None:
        self.queue.push(time, kind, target, token)

    def request_stop(self, time: int) -> None:
        """Stop after the instant ``time`` has been fully processed."""
        if self.stop_at is None or time < self.stop_at:
            self.stop_at = time

    def run(self, stop: int | None = None) -> int:
        """Dispatch events until ``stop`` (inclusive) or a requested stop.

        Returns the final simulation time.
        """
        if stop is not None:
            self.request_stop(stop)
        q = self.queue
        heap = q._heap
        handlers = self.handlers
        hooks = self.end_of_instant
        log = q.log
        while heap:
            t = heap[0].time
            if self.stop_at is not None and t > self.stop_at:
                break
            while heap and heap[0].time == t:
                ev = q.pop()
                if log is not None:
                    log.append((ev.time, int(ev.kind), ev.target))
                handlers[ev.kind](ev)
            for hook in hooks:
                hook(t)
        if self.stop_at is None:
            return q.now
        if self.stop_at < q.now:
            raise SimulationError(f"stop time {self.stop_at} precedes current time {q.now}")
        q.now = self.stop_at
        return self.stop_at
