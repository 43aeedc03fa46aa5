"""Configuration, orchestration and output for simulation runs and studies."""
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .output import FieldOutput, read_fields_csv, sample_line, write_fields
from .runner import (RunResult, build_case, delta_convergence_study, force_sweep_study,
                     jump_profile, probe_rows, run)

__all__ = [
    "ConfigError", "RunConfig", "config_from_dict", "load_config",
    "FieldOutput", "read_fields_csv", "sample_line", "write_fields",
    "RunResult", "build_case", "delta_convergence_study", "force_sweep_study",
    "jump_profile", "probe_rows", "run",
]
