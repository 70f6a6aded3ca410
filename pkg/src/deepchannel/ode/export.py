"""Trajectory CSV and report JSON writers."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import InvariantReport
from .integrate import Trajectory
from .systems import OdeSystem


def write_trajectory_csv(traj: Trajectory, sys: OdeSystem, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + sys.labels())
        for t, row in zip(traj.t, traj.x):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    return rows[0][1:], data[:, 0], data[:, 1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_report_json(report: InvariantReport, path, extra: dict | None = None) -> None:
    payload = dict(extra or {})
    payload["report"] = report.to_dict()
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
