"""Discrete-event simulator of VM-centric memory bandwidth reservation."""

from .machine import Machine, RunMetrics, VcpuMetrics
from .memsys import Bus, BusModel, CalibrationError, calibrate
from .regulator import (
    ConfigError,
    InterruptCosts,
    Regulator,
    VmSpec,
    assign_budgets,
    effective_bandwidth,
    timer_overhead_model,
)
from .simcore import TICKS_PER_US, Engine, EventKind, SimulationError, us_to_ticks
from .workload import (
    ProfileLibrary,
    WorkloadKind,
    WorkloadProfile,
    cacheline_write_throughput,
    intensity_profile,
    load_trace,
    next_action,
    parse_trace,
    saturating_writer,
)

__version__ = "0.1.0"
