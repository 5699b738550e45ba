"""Experiment configuration, runs, sweeps and the verification report."""
from pgop.experiments.baselines import class_optimum, vi_optimum
from pgop.experiments.config import PRESETS, ExperimentConfig, load_config, parse_config_text, preset
from pgop.experiments.runner import (
    RunResult,
    iterations_to_fraction,
    regret_profile,
    rerun_from_manifest,
    run_experiment,
    run_landscape,
)
from pgop.experiments.sweep import run_sweep
from pgop.experiments.verify import verify

__all__ = [
    "ExperimentConfig", "PRESETS", "RunResult", "class_optimum", "iterations_to_fraction", "load_config",
    "parse_config_text", "preset", "regret_profile", "rerun_from_manifest", "run_experiment",
    "run_landscape", "run_sweep", "verify", "vi_optimum",
]
