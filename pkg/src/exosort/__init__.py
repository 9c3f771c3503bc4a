"""Distributed external sort of 100-byte records over an object store."""
from .config import JobConfig, desk_config
from .partition import PartitionPlan
from .pipeline import Manifest, RunReport, generate_input, run_sort, validate_output

__version__ = "0.1.0"

__all__ = [
    "JobConfig", "Manifest", "PartitionPlan", "RunReport", "desk_config", "generate_input", "run_sort",
    "validate_output",
]
