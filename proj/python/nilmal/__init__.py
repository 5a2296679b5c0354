"""Active-learning experiments for load disaggregation (C++ core)."""

import json

from . import _core
from ._core import (
    ConfigError,
    LeakageError,
    ShapeError,
    ValidationError,
    ensemble_moments,
    entropy_score,
    mutual_information,
    select,
    verify,
    window_weight,
)

__all__ = [
    "ConfigError",
    "LeakageError",
    "ShapeError",
    "ValidationError",
    "ensemble_moments",
    "entropy_score",
    "mutual_information",
    "resolve_config",
    "run_experiment",
    "run_total_baseline",
    "select",
    "synthesize",
    "verify",
    "window_weight",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def synthesize(config=None, seed=7):
    """Synthetic houses as {house_id: {"start", "mains", "appliances"}}; minute resolution."""
    return _core.synthesize(_dump(config or {}), seed)


def resolve_config(config):
    """Validated config with every default and data-dependent field filled in."""
    return json.loads(_core.resolve_config(_dump(config)))


def run_experiment(config, seed=None):
    """One iteration record per completed iteration, as dicts."""
    return [json.loads(r) for r in _core.run_experiment(_dump(config), seed)]


def run_total_baseline(config, seed=None):
    """Test RMSE per appliance of a model trained on every train and pool house."""
    return _core.run_total_baseline(_dump(config), seed)
