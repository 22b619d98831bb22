"""Slot-level NR-V2X Mode-2 sidelink simulator with static and adaptive RRI selection."""
from .engine import (ConfigError, SchedulerSpec, SimConfig, TrialResult, run_experiment, run_trial,
                     write_experiment)

__all__ = ["ConfigError", "SchedulerSpec", "SimConfig", "TrialResult", "run_experiment",
           "run_trial", "write_experiment"]
__version__ = "0.1.0"
