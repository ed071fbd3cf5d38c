"""Power studies, data ingestion, analyses and the command-line interface."""

from .analysis import TestReport, analyze_spectrum, chandra_analysis, fit_model
from .config import ConfigError, RunConfig
from .power import EXAMPLES, PowerReport, example_config, power_study
from .report import format_table, write_csv
from .spectrum import IngestError, ingest_spectrum, write_spectrum

__all__ = [
    "EXAMPLES",
    "ConfigError",
    "IngestError",
    "PowerReport",
    "RunConfig",
    "TestReport",
    "analyze_spectrum",
    "chandra_analysis",
    "example_config",
    "fit_model",
    "format_table",
    "ingest_spectrum",
    "power_study",
    "write_csv",
    "write_spectrum",
]
