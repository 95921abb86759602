"""Experiment configuration and its line-oriented text format.

Grammar: one ``section.key = value`` entry per line; blank lines and lines
starting with ``#`` are ignored. Sections and keys::

    platform.num_cores      = 4
    bus.service_time        = 52            # ticks per access
    regulator.d_timer       = 143           # ticks
    regulator.d_pmu         = 143           # defaults to d_timer
    regulator.pmu_enabled   = true
    workload.instructions   = 1000000       # critical profile length
    workload.critical_apki  = 25            # calibrated susanc intensity
    workload.jitter         = 0
    workload.seed           = 0
    experiment.setup        = interf_mbr    # solo | interf | interf_mbr
    experiment.critical_vm  = 0
    experiment.repetitions  = 1
    experiment.output_dir   = results
    experiment.max_events   = 1000000000    # abort guard
    sweep.axis              = budget        # budget | period
    sweep.values            = 50, 100, 1000
    vm.<N>.vcpus            = 1, 2, 3       # vCPU id == core id
    vm.<N>.budget           = 100
    vm.<N>.period_us        = 10
    vm.<N>.custom_dist      = 0.5, 0.3, 0.2
    vm.<N>.regulated        = true
    vm.<N>.workload         = saturating_writer   # or a profile name, trace:<path>,
                                                  # or one entry per vCPU
    vm.<N>.name             = nc

A key given twice is an error. Unknown sections or keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from ..regulator import DEFAULT_D_TIMER, ConfigError, VmSpec
from ..simcore import DEFAULT_MAX_EVENTS, us_to_ticks
from ..workload import (
    PROFILE_SEEDS,
    ProfileLibrary,
    TraceFormatError,
    WorkloadProfile,
    load_trace,
    saturating_writer,
)

# Frozen output of ``memsys.calibrate(2.3, 3)`` on the default grid.
CALIBRATED_SERVICE_TIME = 52
CALIBRATED_CRITICAL_APKI = 25
DEFAULT_CRITICAL_INSTRUCTIONS = 1_000_000

WRITER = "saturating_writer"


class Setup(Enum):
    SOLO = "solo"
    INTERF = "interf"
    INTERF_MBR = "interf_mbr"


@dataclass(frozen=True)
class VmConfig:
    spec: VmSpec
    workloads: tuple[str, ...]  # one entry per vCPU


@dataclass(frozen=True)
class ExperimentConfig:
    vms: tuple[VmConfig, ...]
    num_cores: int = 4
    service_time: int = CALIBRATED_SERVICE_TIME
    d_timer: int = DEFAULT_D_TIMER
    d_pmu: int | None = None
    pmu_enabled: bool = True
    instructions: int = DEFAULT_CRITICAL_INSTRUCTIONS
    critical_apki: int | None = CALIBRATED_CRITICAL_APKI
    jitter: int = 0
    seed: int = 0
    setup: Setup = Setup.INTERF_MBR
    critical_vm: int = 0
    repetitions: int = 1
    output_dir: str = "results"
    max_events: int = DEFAULT_MAX_EVENTS
    sweep_axis: str | None = None
    sweep_values: tuple = ()

    def __post_init__(self):
        validate(self)

    # -- lookups -----------------------------------------------------------

    def vm(self, vm_id: int) -> VmConfig:
        for v in self.vms:
            if v.spec.vm == vm_id:
                return v
        raise ConfigError(f"vm.{vm_id}: no such VM")

    @property
    def critical(self) -> VmConfig:
        return self.vm(self.critical_vm)

    @property
    def critical_workload(self) -> str:
        return self.critical.workloads[0]

    def nc_vms(self) -> list[VmConfig]:
        return [v for v in self.vms if v.spec.vm != self.critical_vm]

    def library(self) -> ProfileLibrary:
        return ProfileLibrary(anchor_apki=self.critical_apki,
                              total_instructions=self.instructions)

    # -- variants ----------------------------------------------------------

    def with_setup(self, setup: Setup) -> "ExperimentConfig":
        return replace(self, setup=setup)

    def with_nc(self, budget=None, period_us=None) -> "ExperimentConfig":
        """Set budget and/or period of every non-critical VM."""
        vms = []
        for v in self.vms:
            if v.spec.vm != self.critical_vm:
                spec = v.spec
                if budget is not None:
                    spec = replace(spec, budget_vm=budget)
                if period_us is not None:
                    spec = replace(spec, period_vm=period_us)
                v = replace(v, spec=spec)
            vms.append(v)
        return replace(self, vms=tuple(vms))

    def nc_point(self) -> tuple[int | None, float | None]:
        """(budget, period_us) of the first regulated non-critical VM."""
        for v in self.nc_vms():
            if v.spec.regulated:
                return v.spec.budget_vm, v.spec.period_vm
        return None, None

    # -- serialisation -----------------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"platform.num_cores = {self.num_cores}",
            f"bus.service_time = {self.service_time}",
            f"regulator.d_timer = {self.d_timer}",
        ]
        if self.d_pmu is not None:
            lines.append(f"regulator.d_pmu = {self.d_pmu}")
        lines += [
            f"regulator.pmu_enabled = {str(self.pmu_enabled).lower()}",
            f"workload.instructions = {self.instructions}",
        ]
        if self.critical_apki is not None:
            lines.append(f"workload.critical_apki = {self.critical_apki}")
        lines += [
            f"workload.jitter = {self.jitter}",
            f"workload.seed = {self.seed}",
            f"experiment.setup = {self.setup.value}",
            f"experiment.critical_vm = {self.critical_vm}",
            f"experiment.repetitions = {self.repetitions}",
            f"experiment.output_dir = {self.output_dir}",
            f"experiment.max_events = {self.max_events}",
        ]
        if self.sweep_axis is not None:
            lines.append(f"sweep.axis = {self.sweep_axis}")
            lines.append(f"sweep.values = {_join(self.sweep_values)}")
        for v in self.vms:
            s = v.spec
            p = f"vm.{s.vm}"
            lines.append(f"{p}.vcpus = {_join(s.vcpus)}")
            lines.append(f"{p}.budget = {s.budget_vm}")
            lines.append(f"{p}.period_us = {_num(s.period_vm)}")
            if s.custom_dist is not None:
                lines.append(f"{p}.custom_dist = {_join(s.custom_dist)}")
            lines.append(f"{p}.regulated = {str(s.regulated).lower()}")
            lines.append(f"{p}.workload = {_join(v.workloads)}")
            if s.name:
                lines.append(f"{p}.name = {s.name}")
        return "\n".join(lines) + "\n"


def _num(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _join(xs):
    return ", ".join(_num(x) if isinstance(x, (int, float)) and not isinstance(x, bool)
                     else str(x) for x in xs)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.num_cores < 1:
        raise ConfigError("platform.num_cores: must be >= 1")
    if cfg.service_time < 1:
        raise ConfigError("bus.service_time: must be >= 1")
    if cfg.d_timer < 0:
        raise ConfigError("regulator.d_timer: must be >= 0")
    if cfg.d_pmu is not None and cfg.d_pmu < 0:
        raise ConfigError("regulator.d_pmu: must be >= 0")
    if cfg.instructions < 1:
        raise ConfigError("workload.instructions: must be >= 1")
    if cfg.critical_apki is not None and not 0 <= cfg.critical_apki <= 1000:
        raise ConfigError("workload.critical_apki: must lie in [0, 1000]")
    if cfg.jitter < 0:
        raise ConfigError("workload.jitter: must be >= 0")
    if cfg.repetitions < 1:
        raise ConfigError("experiment.repetitions: must be >= 1")
    if cfg.max_events < 1:
        raise ConfigError("experiment.max_events: must be >= 1")
    if not cfg.vms:
        raise ConfigError("vm: at least one VM is required")
    seen_vm = set()
    cores = {}
    for v in cfg.vms:
        s = v.spec
        if s.vm in seen_vm:
            raise ConfigError(f"vm.{s.vm}: defined twice")
        seen_vm.add(s.vm)
        if len(v.workloads) != len(s.vcpus):
            raise ConfigError(
                f"vm.{s.vm}.workload: {len(v.workloads)} entries for {len(s.vcpus)} vCPUs"
            )
        for w in v.workloads:
            _check_workload_name(w, f"vm.{s.vm}.workload")
        for c in s.vcpus:
            if c in cores:
                raise ConfigError(f"vm.{s.vm}.vcpus: vCPU {c} already belongs to vm.{cores[c]}")
            if not 0 <= c < cfg.num_cores:
                raise ConfigError(
                    f"vm.{s.vm}.vcpus: vCPU {c} needs a core but platform.num_cores = {cfg.num_cores}"
                )
            cores[c] = s.vm
    if cfg.critical_vm not in seen_vm:
        raise ConfigError(f"experiment.critical_vm: vm.{cfg.critical_vm} is not defined")
    crit = cfg.vm(cfg.critical_vm)
    if any(w == WRITER for w in crit.workloads):
        raise ConfigError(
            f"vm.{cfg.critical_vm}.workload: the critical VM needs a finite workload"
        )
    if cfg.sweep_axis is not None:
        if cfg.sweep_axis not in ("budget", "period"):
            raise ConfigError("sweep.axis: must be 'budget' or 'period'")
        if not cfg.sweep_values:
            raise ConfigError("sweep.values: empty sweep")
        for x in cfg.sweep_values:
            if cfg.sweep_axis == "budget" and (x < 0 or int(x) != x):
                raise ConfigError(f"sweep.values: budget {x} is not a non-negative integer")
            if cfg.sweep_axis == "period":
                try:
                    if us_to_ticks(x) <= 0:
                        raise ValueError(f"{x} us is not positive")
                except ValueError as e:
                    raise ConfigError(f"sweep.values: {e}") from None


def _check_workload_name(w: str, path: str) -> None:
    if w == WRITER or w in PROFILE_SEEDS:
        return
    if w.startswith("trace:") and len(w) > len("trace:"):
        return
    raise ConfigError(
        f"{path}: unknown workload {w!r}; use {WRITER}, trace:<path> or one of "
        f"{', '.join(PROFILE_SEEDS)}"
    )


def resolve_workload(cfg: ExperimentConfig, name: str, rep: int = 0) -> WorkloadProfile:
    if name == WRITER:
        return saturating_writer()
    if name.startswith("trace:"):
        p = Path(name[len("trace:"):])
        try:
            return load_trace(p)
        except OSError as e:
            raise ConfigError(f"workload {name}: {e}") from None
    return cfg.library().get(name, jitter=cfg.jitter, seed=cfg.seed + rep)


def default_config(**overrides) -> ExperimentConfig:
    """One critical core running susanc next to a 3-vCPU writer VM."""
    vms = (
        VmConfig(VmSpec(0, (0,), regulated=False, name="critical"), ("susanc_small",)),
        VmConfig(VmSpec(1, (1, 2, 3), budget_vm=100, period_vm=10, name="nc"), (WRITER,) * 3),
    )
    return ExperimentConfig(vms=vms, **overrides)


# -- parsing ---------------------------------------------------------------

_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _int(path, v):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{path}: expected an integer, got {v!r}") from None


def _float(path, v):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{path}: expected a number, got {v!r}") from None


def _bool(path, v):
    try:
        return _BOOL[v.lower()]
    except KeyError:
        raise ConfigError(f"{path}: expected true/false, got {v!r}") from None


def _list(v):
    return [x.strip() for x in v.split(",") if x.strip()]


def _period(path, v):
    x = _float(path, v)
    return int(x) if x.is_integer() else x


_SCALARS = {
    "platform.num_cores": ("num_cores", _int),
    "bus.service_time": ("service_time", _int),
    "regulator.d_timer": ("d_timer", _int),
    "regulator.d_pmu": ("d_pmu", _int),
    "regulator.pmu_enabled": ("pmu_enabled", _bool),
    "workload.instructions": ("instructions", _int),
    "workload.critical_apki": ("critical_apki", _int),
    "workload.jitter": ("jitter", _int),
    "workload.seed": ("seed", _int),
    "experiment.critical_vm": ("critical_vm", _int),
    "experiment.repetitions": ("repetitions", _int),
    "experiment.output_dir": ("output_dir", lambda p, v: v),
    "experiment.max_events": ("max_events", _int),
}

_VM_KEYS = ("vcpus", "budget", "period_us", "custom_dist", "regulated", "workload", "name")


def parse_config(text: str, path="<config>", base_dir=None) -> ExperimentConfig:
    """Parse the config grammar; defaults fill anything not given.

    With no ``vm.*`` entries the default two-VM topology is used. Relative
    ``trace:`` paths resolve against ``base_dir`` when given.
    """
    seen: dict[str, int] = {}
    kwargs: dict = {}
    vm_raw: dict[int, dict[str, tuple[int, str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if "#" in value:
            value = value.split("#", 1)[0].strip()
        if key in seen:
            raise ConfigError(f"{key}: given twice ({path}:{seen[key]} and {path}:{lineno})")
        seen[key] = lineno
        if key in _SCALARS:
            attr, conv = _SCALARS[key]
            kwargs[attr] = conv(key, value)
        elif key == "experiment.setup":
            try:
                kwargs["setup"] = Setup(value)
            except ValueError:
                raise ConfigError(
                    f"{key}: unknown setup {value!r}; use solo, interf or interf_mbr"
                ) from None
        elif key == "sweep.axis":
            kwargs["sweep_axis"] = value
        elif key == "sweep.values":
            kwargs["sweep_values"] = tuple(_period(key, x) for x in _list(value))
        elif key.startswith("vm."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _VM_KEYS:
                raise ConfigError(f"{key}: unknown key; vm keys are {', '.join(_VM_KEYS)}")
            vid = _int(key, parts[1])
            vm_raw.setdefault(vid, {})[parts[2]] = value
        else:
            raise ConfigError(f"{key}: unknown key ({path}:{lineno})")
    if vm_raw:
        kwargs["vms"] = tuple(_build_vm(vid, vm_raw[vid], base_dir) for vid in sorted(vm_raw))
        return ExperimentConfig(**kwargs)
    return default_config(**kwargs)


def _build_vm(vid: int, raw: dict, base_dir=None) -> VmConfig:
    p = f"vm.{vid}"
    if "vcpus" not in raw:
        raise ConfigError(f"{p}.vcpus: required")
    vcpus = tuple(_int(f"{p}.vcpus", x) for x in _list(raw["vcpus"]))
    budget = _int(f"{p}.budget", raw.get("budget", "0"))
    period = _period(f"{p}.period_us", raw.get("period_us", "10"))
    dist = None
    if "custom_dist" in raw:
        dist = tuple(_float(f"{p}.custom_dist", x) for x in _list(raw["custom_dist"]))
    regulated = _bool(f"{p}.regulated", raw.get("regulated", "true"))
    wl = _list(raw.get("workload", WRITER))
    if len(wl) == 1:
        wl = wl * len(vcpus)
    if base_dir is not None:
        wl = [_rebase(w, Path(base_dir)) for w in wl]
    spec = VmSpec(vid, vcpus, budget, period, dist, regulated, raw.get("name", ""))
    return VmConfig(spec, tuple(wl))


def _rebase(w: str, base: Path) -> str:
    if w.startswith("trace:"):
        p = Path(w[len("trace:"):])
        if not p.is_absolute():
            return f"trace:{base / p}"
    return w


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from None
    return parse_config(text, path, base_dir=path.parent)


__all__ = [
    "CALIBRATED_CRITICAL_APKI", "CALIBRATED_SERVICE_TIME", "ConfigError",
    "DEFAULT_CRITICAL_INSTRUCTIONS", "ExperimentConfig", "Setup", "TraceFormatError",
    "VmConfig", "WRITER", "default_config", "load_config", "parse_config",
    "resolve_workload", "validate",
]
