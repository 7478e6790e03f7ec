"""Configuration, execution and reporting of scenario sweeps."""

from obslab.harness.config import ConfigError, load_config
from obslab.harness.report import write_report
from obslab.harness.runner import SpectralReport, run_scenario
from obslab.theory import fit_rate

__all__ = ["ConfigError", "SpectralReport", "fit_rate", "load_config", "run_scenario",
           "write_report"]
