"""Runs one validated scenario: integrate, check, and write the output files."""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .diagnostics import DiagnosticReport, run_suite
from .integrator import Trajectory, integrate
from .output import write_json, write_trajectory_csv
from .schema import summary_skeleton

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3


@dataclass
class RunOutcome:
    exit_code: int
    trajectory: Optional[Trajectory] = None
    report: Optional[DiagnosticReport] = None
    files: Tuple = field(default_factory=tuple)


class ScenarioRunner:
    """Drives a Scenario through the integrator and the diagnostics."""

    def __init__(self, scenario):
        self.__logger = logging.getLogger(__name__)
        self.__scenario = scenario
        self.__timings = {}

    @property
    def scenario(self):
        return self.__scenario

    def integrate(self):
        s = self.__scenario
        started = time.perf_counter()
        traj = integrate(s.system, s.initial, s.t_end, s.integrator_config, observers=s.observers)
        self.__timings["integrate_seconds"] = time.perf_counter() - started
        status = "completed" if traj.completed else "stopped"
        self.__logger.debug_basic("%s: %d samples, t_final=%s, %s", s.name, len(traj), traj.final.t, status)
        for warning in traj.warnings:
            self.__logger.warning("%s: %s", s.name, warning)
        return traj

    def summary(self, command, traj):
        s = self.__scenario
        summary = summary_skeleton(command, s.name)
        phi = traj.constraint_values
        summary.update(
            {
                "system": s.system.name,
                "config": s.config,
                "samples": len(traj),
                "t_start": traj.samples[0].point.t,
                "t_final": traj.final.t,
                "status": "completed" if traj.completed else "error",
                "max_constraint_residual": float(np.max(np.linalg.norm(phi, axis=1))) if phi.size else 0.0,
                "warnings": list(traj.warnings),
                "error": None,
            }
        )
        if traj.error is not None:
            error = traj.error.to_dict()
            error.setdefault("time", traj.final.t)
            summary["error"] = error
        if s.record_timings:
            summary["timings"] = dict(self.__timings)
        return summary

    def __write_run(self, command, traj):
        s = self.__scenario
        s.output_dir.mkdir(parents=True, exist_ok=True)
        csv_path = write_trajectory_csv(s.output_dir / f"{s.name}.csv", traj, s.system.space.dim_y)
        summary_path = write_json(s.output_dir / f"{s.name}.summary.json", self.summary(command, traj))
        return csv_path, summary_path

    def simulate(self):
        traj = self.integrate()
        files = self.__write_run("simulate", traj)
        if not traj.completed:
            self.__logger.error("%s: integration stopped: %s", self.__scenario.name, traj.error)
            return RunOutcome(EXIT_INTEGRATION, traj, files=files)
        return RunOutcome(EXIT_OK, traj, files=files)

    def verify(self):
        s = self.__scenario
        traj = self.integrate()
        files = self.__write_run("verify", traj)
        if not traj.completed:
            self.__logger.error("%s: integration stopped, checks not run: %s", s.name, traj.error)
            return RunOutcome(EXIT_INTEGRATION, traj, files=files)

        started = time.perf_counter()
        report = run_suite(s.system, traj, s.checks, s.seed, metadata={"scenario": s.name, "config": s.config})
        self.__timings["checks_seconds"] = time.perf_counter() - started

        content = summary_skeleton("verify", s.name)
        content.update(report.to_dict())
        if s.record_timings:
            content["timings"] = dict(self.__timings)
        report_path = write_json(s.output_dir / f"{s.name}.report.json", content)
        for name in report.failed():
            self.__logger.error("%s: check %s failed", s.name, name)
        return RunOutcome(EXIT_OK if report.passed else EXIT_CHECK_FAILED, traj, report, files + (report_path,))
