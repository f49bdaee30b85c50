"""
Writers for trajectories (CSV) and run summaries and diagnostic reports (JSON).

Floats go to CSV with 17 significant digits and to JSON as Python's shortest round-trip repr,
so every written number reads back to the same double. Non-finite values become strings in
JSON ("inf", "nan").
"""

import json
import logging
import math
from pathlib import Path

import numpy as np

from .schema import CSV_FLOAT_FORMAT, trajectory_header


def trajectory_table(traj, dim_y):
    n = len(traj)
    columns = [
        traj.times.reshape(n, 1),
        traj.positions.reshape(n, -1),
        traj.velocities.reshape(n, -1),
        traj.constraint_values.reshape(n, dim_y),
    ]
    columns += [traj.invariant(name).reshape(n, 1) for name in traj.observer_names]
    return np.hstack(columns)


def write_trajectory_csv(path, traj, dim_y):
    logger = logging.getLogger(__name__)
    path = Path(path)
    dim_x = traj.samples[0].point.dim
    header = ",".join(trajectory_header(dim_x, dim_y, traj.observer_names))
    np.savetxt(path, trajectory_table(traj, dim_y), fmt=CSV_FLOAT_FORMAT, delimiter=",", header=header, comments="")
    logger.debug_detailed("wrote %d rows to %s", len(traj), path)
    return path


def jsonable(value):
    """Plain JSON types for numpy scalars and arrays, tuples and non-finite floats."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, Path):
        return str(value)
    if value is None or isinstance(value, str):
        return value
    return str(value)


def write_json(path, data):
    path = Path(path)
    with open(path, "w") as stream:
        json.dump(jsonable(data), stream, indent=2, allow_nan=False)
        stream.write("\n")
    logging.getLogger(__name__).debug_detailed("wrote %s", path)
    return path
