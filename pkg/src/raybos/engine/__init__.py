"""Pipeline orchestration, configuration and validation suites."""

from .config import ConfigError, Experiment, build_experiment, config_hash, load_config
from .pipeline import RunReport, bos_run, calibrate_gain, render, trace_debug

__all__ = [
    "ConfigError",
    "Experiment",
    "RunReport",
    "bos_run",
    "build_experiment",
    "calibrate_gain",
    "config_hash",
    "load_config",
    "render",
    "trace_debug",
]
