"""
schema.py

Layout of the files written by the command-line front end.
"""

REQUIRED_SCHEMA_VERSION = 1

CSV_FLOAT_FORMAT = "%.17g"


def trajectory_header(dim_x, dim_y, observers=()):
    """t, then x components, v components, constraint components and observers in order."""
    columns = ["t"]
    columns += [f"x{i}" for i in range(1, dim_x + 1)]
    columns += [f"v{i}" for i in range(1, dim_x + 1)]
    columns += [f"phi_{i}" for i in range(1, dim_y + 1)]
    columns += list(observers)
    return columns


def summary_skeleton(command, scenario):
    """Keys every summary and report starts with, in the order they are written."""
    return {
        "schema_version": REQUIRED_SCHEMA_VERSION,
        "command": command,
        "scenario": scenario,
    }
