"""Incremental implicitly-refined classification engine."""

import json as _json

from ._core import (
    Hierarchy,
    IircError,
    agem_project,
    generate_synthetic,
    sample_scores,
    score,
    task_configuration,
    validate_task_configuration,
)
from . import _core

__all__ = [
    "Hierarchy",
    "IircError",
    "agem_project",
    "generate_synthetic",
    "run_experiment",
    "sample_scores",
    "score",
    "split_report",
    "task_configuration",
    "validate_task_configuration",
]


def _as_text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def split_report(config=None, data_seed=None):
    """Per-split list sizes with and without duplicates, plus the identity check."""
    return _core.split_report(_as_text(config or {}), data_seed)


def run_experiment(config=None, write_outputs=False):
    """Run a config given as a dict or JSON string."""
    return _core.run_experiment(_as_text(config or {}), write_outputs)
