"""Python bindings for the disco collaborative-learning core."""

import json
from pathlib import Path

from ._disco import (
    DiscoError,
    evaluate_checkpoint,
    fedavg,
    load_csv,
    load_idx,
    train_solo,
)
from . import _disco

__all__ = [
    "DiscoError",
    "evaluate_checkpoint",
    "fedavg",
    "load_csv",
    "load_idx",
    "normalize_task_spec",
    "run_scenario",
    "train_solo",
]


def run_scenario(scenario, base_dir="."):
    """Run a scenario given as a path or a dict.

    Returns (report, metrics_csv) where report is the parsed JSON report.
    """
    if isinstance(scenario, dict):
        text, csv = _disco.run_scenario_json(json.dumps(scenario), str(base_dir))
    else:
        text, csv = _disco.run_scenario_file(str(Path(scenario)))
    return json.loads(text), csv


def normalize_task_spec(spec):
    """Validate a task spec dict and return it with defaults filled in."""
    return json.loads(_disco.normalize_task_spec(json.dumps(spec)))
