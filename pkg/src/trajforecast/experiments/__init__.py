"""Configuration, checkpoints, reports and the three experiment protocols."""
from .checkpoint import load_checkpoint, read_meta, save_checkpoint
from .config import (DESK_PRESETS, EXPERIMENTS, DatasetManifest, ExperimentConfig, config_from_dict, load_config,
                     load_dataset_manifest, seconds_to_steps)
from .runner import (DESIGN_SWITCHES, ExperimentResult, ModelRun, WindowSplit, assert_no_leakage, build_windows,
                     check_writable, crop_history, delta_table, emit_reports, evaluate_checkpoint, fit_and_evaluate,
                     load_games, load_series, read_table, run_experiment, run_experiment1, run_experiment2, run_experiment3,
                     split_series, to_series, train_only)

__all__ = [
    "DESIGN_SWITCHES", "DESK_PRESETS", "EXPERIMENTS", "DatasetManifest", "ExperimentConfig", "ExperimentResult",
    "ModelRun", "WindowSplit", "assert_no_leakage", "build_windows", "check_writable", "config_from_dict",
    "crop_history", "delta_table", "emit_reports", "evaluate_checkpoint", "fit_and_evaluate", "load_checkpoint",
    "load_config", "load_dataset_manifest", "load_games", "load_series", "read_meta", "read_table", "run_experiment",
    "run_experiment1", "run_experiment2", "run_experiment3", "save_checkpoint", "seconds_to_steps",
    "split_series", "to_series", "train_only",
]
