"""Tire model learning and drift control."""

import json
import os

from ._tirelearn import (
    TireModel,
    TirelearnError,
    __version__,
    drift_equilibrium,
    exptanh_eval,
    exptanh_extrema,
    extrema_on_branch,
    fiala_force,
    load_model,
    magic_formula_force,
    plant_tires,
)
from . import _tirelearn

COMMANDS = ("gen-data", "fit", "eval", "distill", "sim", "report")


def default_config():
    return json.loads(_tirelearn.default_config())


def merge_config(user=None):
    """Defaults overlaid with `user`; unknown keys raise TirelearnError."""
    return json.loads(_tirelearn.merge_config(json.dumps(user or {})))


def run(command, config=None, out="out"):
    """Runs one pipeline command and returns its summary."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    return json.loads(_tirelearn.run_command(command, json.dumps(config or {}), os.fspath(out)))


def read_dataset(path):
    """dataset.csv as a dict of column name -> list of floats."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        cols = {h: [] for h in header}
        for line in f:
            if not line.strip():
                continue
            for h, v in zip(header, line.rstrip("\n").split(",")):
                cols[h].append(float(v))
    return cols


__all__ = [
    "COMMANDS",
    "TireModel",
    "TirelearnError",
    "default_config",
    "drift_equilibrium",
    "exptanh_eval",
    "exptanh_extrema",
    "extrema_on_branch",
    "fiala_force",
    "load_model",
    "magic_formula_force",
    "merge_config",
    "plant_tires",
    "read_dataset",
    "run",
]
