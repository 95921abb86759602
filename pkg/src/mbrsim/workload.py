"""Core-level workloads: saturating writer, intensity profiles and traces.

A workload is consumed as a stream of actions: ``Compute(n)`` retires ``n``
non-memory instructions, ``MEM_ACCESS`` issues one blocking bus access and
``DONE`` ends the stream.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple


class WorkloadKind(Enum):
    SATURATING_WRITER = "saturating_writer"
    INTENSITY = "intensity"
    TRACE = "trace"


class Compute(NamedTuple):
    instructions: int


class _Marker:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


MEM_ACCESS = _Marker("MemAccess")
DONE = _Marker("Done")


class TraceFormatError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class WorkloadProfile:
    """Compute/memory behaviour of one core.

    ``accesses_per_kilo_instructions`` counts bus accesses per 1000 retired
    instructions; for intensity profiles each access is itself one of the
    retired instructions, so 1000 means a pure-memory stream.
    """

    name: str
    kind: WorkloadKind
    total_instructions: int | None = None
    accesses_per_kilo_instructions: int = 0
    base_cpi: int = 1
    trace: tuple[tuple[int, int], ...] = ()
    jitter: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.base_cpi < 1:
            raise ValueError(f"{self.name}: base_cpi must be >= 1")
        if self.kind is WorkloadKind.INTENSITY:
            if not 0 <= self.accesses_per_kilo_instructions <= 1000:
                raise ValueError(
                    f"{self.name}: accesses_per_kilo_instructions must be in [0, 1000]"
                )
            if self.total_instructions is None or self.total_instructions <= 0:
                raise ValueError(f"{self.name}: total_instructions must be > 0")
        if self.jitter < 0:
            raise ValueError(f"{self.name}: jitter must be >= 0")

    @property
    def finite(self) -> bool:
        return self.kind is not WorkloadKind.SATURATING_WRITER

    def with_instructions(self, total: int) -> "WorkloadProfile":
        return replace(self, total_instructions=total)


def saturating_writer(name="nc_writer") -> WorkloadProfile:
    """Back-to-back bus writes forever (LLC-sized buffer, every write misses)."""
    return WorkloadProfile(name, WorkloadKind.SATURATING_WRITER)


def intensity_profile(name, apki, total_instructions, base_cpi=1, jitter=0, seed=0):
    return WorkloadProfile(
        name, WorkloadKind.INTENSITY, total_instructions=total_instructions,
        accesses_per_kilo_instructions=apki, base_cpi=base_cpi, jitter=jitter, seed=seed,
    )


class Cursor:
    """Per-core position in a workload's action stream.

    Intensity profiles spread accesses evenly with an integer
    (Bresenham-style) rule: instruction ``i`` is a memory access iff
    ``floor((i+1)*a/1000) > floor(i*a/1000)``. Over ``N`` instructions this
    yields exactly ``floor(N*a/1000)`` accesses, and one access every
    ``1000/a`` instructions when ``a`` divides 1000.
    """

    __slots__ = ("profile", "pos", "done_accesses", "_pending_mem", "_trace_idx",
                 "_rng", "_finished")

    def __init__(self, profile: WorkloadProfile):
        self.profile = profile
        self.pos = 0
        self.done_accesses = 0
        self._pending_mem = 0
        self._trace_idx = 0
        self._finished = False
        self._rng = random.Random(profile.seed) if profile.jitter else None

    def next_action(self):
        p = self.profile
        kind = p.kind
        if kind is WorkloadKind.SATURATING_WRITER:
            return MEM_ACCESS
        if self._pending_mem:
            self._pending_mem -= 1
            return MEM_ACCESS
        if self._finished:
            return DONE
        if kind is WorkloadKind.INTENSITY:
            return self._next_intensity(p)
        return self._next_trace(p)

    def _next_intensity(self, p):
        total = p.total_instructions
        if self.pos >= total:
            self._finished = True
            return DONE
        a = p.accesses_per_kilo_instructions
        if a == 0:
            n = total - self.pos
            self.pos = total
            return Compute(n)
        j = self.done_accesses
        # index of the (j+1)-th memory instruction: ceil((j+1)*1000/a) - 1
        mem_at = -(-(j + 1) * 1000 // a) - 1
        if self._rng is not None:
            mem_at += self._rng.randint(-p.jitter, p.jitter)
        mem_at = max(mem_at, self.pos)
        if mem_at >= total:
            n = total - self.pos
            self.pos = total
            return Compute(n)
        gap = mem_at - self.pos
        self.pos = mem_at + 1
        self.done_accesses = j + 1
        if gap:
            self._pending_mem = 1
            return Compute(gap)
        return MEM_ACCESS

    def _next_trace(self, p):
        if self._trace_idx >= len(p.trace):
            self._finished = True
            return DONE
        gap, count = p.trace[self._trace_idx]
        self._trace_idx += 1
        if gap:
            self._pending_mem = count
            return Compute(gap)
        if count:
            self._pending_mem = count - 1
            return MEM_ACCESS
        return self.next_action()


def next_action(profile: WorkloadProfile, state: Cursor | None = None):
    """Return ``(action, state)``; pass the returned state back in."""
    if state is None:
        state = Cursor(profile)
    return state.next_action(), state


def actions(profile: WorkloadProfile, limit: int | None = None) -> Iterator:
    """Iterate the action stream, ending with ``DONE`` for finite workloads."""
    cur = Cursor(profile)
    n = 0
    while limit is None or n < limit:
        act = cur.next_action()
        yield act
        n += 1
        if act is DONE:
            return


def parse_trace(text: str, path="<trace>") -> tuple[tuple[int, int], ...]:
    if not text.strip():
        raise TraceFormatError(path, 1, "empty trace")
    lines = text.split("\n")
    if lines[-1] != "":
        raise TraceFormatError(path, len(lines), "missing trailing newline")
    records = []
    for lineno, raw in enumerate(lines[:-1], start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise TraceFormatError(path, lineno, f"expected '<gap> <count>', got {raw!r}")
        try:
            gap, count = int(fields[0]), int(fields[1])
        except ValueError:
            raise TraceFormatError(path, lineno, f"non-integer field in {raw!r}") from None
        if gap < 0 or count < 0:
            raise TraceFormatError(path, lineno, "fields must be non-negative")
        records.append((gap, count))
    if not records:
        raise TraceFormatError(path, 1, "trace has no records")
    return tuple(records)


def load_trace(path, name=None) -> WorkloadProfile:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    records = parse_trace(text, path)
    total = sum(g + c for g, c in records)
    return WorkloadProfile(
        name or path.stem, WorkloadKind.TRACE, total_instructions=total, trace=records,
    )


# Seeds for the MiBench stand-ins; only their ordering is meaningful, the
# harness rescales them against the calibrated memory-bound profile.
PROFILE_SEEDS = {
    "susanc_small": 120,
    "susane_small": 110,
    "susans_small": 80,
    "bitcount_small": 40,
    "qsort_small": 35,
    "basicmath_small": 5,
}

DEFAULT_INSTRUCTIONS = 50_000


class ProfileLibrary:
    """Named presets, intensities optionally rescaled to a calibrated anchor."""

    def __init__(self, seeds=None, anchor="susanc_small", anchor_apki=None,
                 total_instructions=DEFAULT_INSTRUCTIONS):
        self.seeds = dict(PROFILE_SEEDS if seeds is None else seeds)
        self.anchor = anchor
        self.anchor_apki = anchor_apki
        self.total_instructions = total_instructions

    def names(self):
        return list(self.seeds)

    def intensity(self, name: str) -> int:
        seed = self.seeds[name]
        if self.anchor_apki is None:
            return seed
        if name == self.anchor:
            return self.anchor_apki
        scaled = round(seed * self.anchor_apki / self.seeds[self.anchor])
        return max(scaled, 1) if seed > 0 else 0

    def get(self, name: str, total_instructions=None, jitter=0, seed=0) -> WorkloadProfile:
        if name not in self.seeds:
            raise KeyError(f"unknown profile {name!r}; known: {', '.join(self.seeds)}")
        return intensity_profile(
            name, self.intensity(name), total_instructions or self.total_instructions,
            jitter=jitter, seed=seed,
        )


def cacheline_write_throughput(metrics, window: int, vcpus=None) -> float:
    """Completed writer accesses per microsecond over ``window`` ticks.

    ``metrics`` is a RunMetrics; only cores running a saturating writer count
    unless ``vcpus`` names them explicitly.
    """
    if window <= 0:
        raise ValueError("window must be > 0")
    if vcpus is None:
        vcpus = [v for v, m in metrics.vcpus.items() if m.workload_kind == WorkloadKind.SATURATING_WRITER.value]
    total = sum(metrics.vcpus[v].bus_accesses for v in vcpus)
    return total * 1000 / window
