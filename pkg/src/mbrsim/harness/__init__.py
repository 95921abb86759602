"""Experiment configs, setups, sweeps, result files and the CLI."""

from .config import (
    CALIBRATED_CRITICAL_APKI,
    CALIBRATED_SERVICE_TIME,
    ExperimentConfig,
    Setup,
    VmConfig,
    default_config,
    load_config,
    parse_config,
)
from .experiments import (
    BaselineStore,
    MissingBaselineError,
    measure_overhead,
    run_experiment,
    run_setup,
    sweep_budget,
    sweep_period,
)
from .results import ResultTable, Sweep, emit_results, metrics_from_rows, read_csv
