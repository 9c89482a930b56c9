"""Pessimistic model-based offline imitation learning on small environments."""

import json
import os

from ._milo import (
    ConfigError,
    DataError,
    FiniteMDP,
    NumericalError,
    TabularModel,
    TabularPolicy,
    concentrability,
    effective_dimension,
    known_methods,
    make_gridworld,
    make_random_mdp,
    make_trap_chain,
    normalized_score,
    occupancy,
    one_hot_covariance,
    optimal_policy,
    relative_condition_number,
    sigma_tabular,
    total_variation_table,
    value,
    value_with_cost,
)
from . import _milo

__all__ = [
    "ConfigError",
    "DataError",
    "FiniteMDP",
    "NumericalError",
    "TabularModel",
    "TabularPolicy",
    "concentrability",
    "diagnose",
    "effective_dimension",
    "generate",
    "known_methods",
    "load_config",
    "make_gridworld",
    "make_random_mdp",
    "make_trap_chain",
    "normalized_score",
    "occupancy",
    "one_hot_covariance",
    "optimal_policy",
    "relative_condition_number",
    "report",
    "run",
    "sigma_tabular",
    "total_variation_table",
    "value",
    "value_with_cost",
]


def _config_text(config):
    if isinstance(config, (str, os.PathLike)):
        with open(config, encoding="utf-8") as f:
            return f.read()
    return json.dumps(config)


def load_config(config):
    """Validated experiment config (path or dict) with defaults filled in."""
    return json.loads(_milo._validate_config(_config_text(config)))


def _out_dir(config, out_dir):
    if out_dir is not None:
        return str(out_dir)
    return load_config(config)["out"]


def generate(config, out_dir=None):
    """Writes the per-seed datasets and returns the manifest."""
    return json.loads(_milo._cmd_generate(_config_text(config), _out_dir(config, out_dir)))


def run(config, out_dir=None, method=None):
    """Runs the configured methods on every seed and returns the summary."""
    return json.loads(_milo._cmd_run(_config_text(config), _out_dir(config, out_dir), method))


def diagnose(config, out_dir=None):
    """Coverage diagnostics for the first seed's datasets."""
    return json.loads(_milo._cmd_diagnose(_config_text(config), _out_dir(config, out_dir)))


def report(directory):
    """Aggregates summaries below `directory`; returns (scores, tiers) markdown."""
    return _milo._cmd_report(str(directory))
