"""
Time integration of x'' = P(f + N) as the first-order system (x, v)' = (v, a(z)).

Fixed-step classical RK4 or the Runge-Kutta-Fehlberg 4(5) pair with step-size control.
Samples are the accepted steps. Projection back onto phi = 0 is off unless asked for.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

from .config import MAX_PROJECTION_ITERS, PROJECTION_TOL
from .constraint_reaction import constrained_acceleration
from .errors import (
    DalembertError,
    DomainExitError,
    InvalidArgumentError,
    ProjectionFailureError,
    StepUnderflowError,
)
from .space_core import PhasePoint

logger = logging.getLogger(__name__)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
UNDERFLOW_FRACTION = 1e-14

# Fehlberg 4(5): nodes, stage coefficients, 4th order weights, error weights (5th minus 4th)
RKF45_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
RKF45_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
RKF45_B = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
RKF45_E = (1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55)


class Method(str, Enum):
    RK4 = "rk4"
    RK45 = "rk45"


class Projection(str, Enum):
    OFF = "off"
    POST_STEP = "post_step"


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.RK4
    step: float = 1e-3
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    projection: Projection = Projection.OFF
    projection_tol: float = PROJECTION_TOL
    max_projection_iters: int = MAX_PROJECTION_ITERS

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", Method(self.method))
            object.__setattr__(self, "projection", Projection(self.projection))
        except ValueError as e:
            raise InvalidArgumentError(str(e)) from e
        for name in ("step", "abs_tol", "rel_tol", "projection_tol"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be a positive real, got {value!r}")
            object.__setattr__(self, name, float(value))
        if int(self.max_projection_iters) != self.max_projection_iters or self.max_projection_iters < 1:
            raise InvalidArgumentError(
                f"max_projection_iters must be a positive integer, got {self.max_projection_iters!r}"
            )

    def to_dict(self):
        return {
            "method": self.method.value,
            "step": self.step,
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "projection": self.projection.value,
            "projection_tol": self.projection_tol,
            "max_projection_iters": int(self.max_projection_iters),
        }


@dataclass(frozen=True, eq=False)
class Sample:
    point: PhasePoint
    constraint_value: np.ndarray
    invariants: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Time-ordered samples of one run.

    Attributes:
        samples (Tuple[Sample, ...]): accepted states, strictly increasing in t.
        config (Optional[IntegratorConfig]): None for tabulated exact solutions.
        system_name (str): name of the integrated system.
        observer_names (Tuple[str, ...]): invariant names recorded in every sample, in order.
        warnings (Tuple[str, ...]): non-fatal conditions met while integrating.
        error (Optional[DalembertError]): cause of an early stop; None if t_end was reached.
    """

    samples: Tuple[Sample, ...]
    config: Optional[IntegratorConfig]
    system_name: str
    observer_names: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = ()
    error: Optional[DalembertError] = None

    def __len__(self):
        return len(self.samples)

    @property
    def completed(self):
        return self.error is None

    @property
    def final(self):
        return self.samples[-1].point

    @property
    def times(self):
        return np.array([s.point.t for s in self.samples])

    @property
    def positions(self):
        return np.array([s.point.x for s in self.samples])

    @property
    def velocities(self):
        return np.array([s.point.v for s in self.samples])

    @property
    def constraint_values(self):
        return np.array([s.constraint_value for s in self.samples])

    def invariant(self, name):
        return np.array([s.invariants[name] for s in self.samples])


def _derivative(system, t, y, stage, t_start):
    z = PhasePoint.from_state(t, y)
    if not system.contains(z):
        raise DomainExitError(
            f"{system.name}: stage {stage} at t={t:.17g} leaves the domain", t_start, stage=stage, point=z
        )
    return np.concatenate([z.v, constrained_acceleration(system, z)])


def _rk4(system, z, h):
    y = z.state()
    t = z.t
    k1 = _derivative(system, t, y, 1, t)
    k2 = _derivative(system, t + 0.5 * h, y + 0.5 * h * k1, 2, t)
    k3 = _derivative(system, t + 0.5 * h, y + 0.5 * h * k2, 3, t)
    k4 = _derivative(system, t + h, y + h * k3, 4, t)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rkf45(system, z, h):
    """One Fehlberg step: 4th order state and the 5th minus 4th order error vector."""
    y = z.state()
    ks = []
    for stage, (c, row) in enumerate(zip(RKF45_C, RKF45_A), start=1):
        y_stage = y + h * sum((a * k for a, k in zip(row, ks)), np.zeros_like(y))
        ks.append(_derivative(system, z.t + c * h, y_stage, stage, z.t))
    y_new = y + h * sum(b * k for b, k in zip(RKF45_B, ks))
    err = h * sum(e * k for e, k in zip(RKF45_E, ks))
    return y_new, err


def _error_norm(config, y, y_new, err):
    scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.max(np.abs(err) / scale))


def step(system, z, config, h=None):
    """One explicit Runge-Kutta step of size h (config.step by default), without step control."""
    h = config.step if h is None else h
    if config.method is Method.RK4:
        y_new = _rk4(system, z, h)
    else:
        y_new, _ = _rkf45(system, z, h)
    return PhasePoint.from_state(z.t + h, y_new)


def project_onto_constraint(system, z, config):
    """
    Gauss-Newton on the velocity towards phi = 0, each update in the range of phi_v':
    v <- v - phi_v' (phi_v phi_v')^-1 phi. A point already within projection_tol is returned
    as is; Newton keeps to the root nearest the start.
    """
    jet = system.jet(z)
    if jet.rows == 0 or np.linalg.norm(jet.value) <= config.projection_tol:
        return z
    candidate = z
    for iteration in range(int(config.max_projection_iters)):
        jet.check_rank(system.rank_tol)
        adjoint = system.space.adjoint(jet.d_v)
        gram = jet.d_v @ adjoint
        delta = adjoint @ scipy.linalg.solve(gram, jet.value, assume_a="pos", check_finite=False)
        candidate = candidate.with_velocity(candidate.v - delta)
        jet = system.jet(candidate)
        residual = np.linalg.norm(jet.value)
        logger.debug_verbose("projection iteration %d: |phi| = %.3e", iteration + 1, residual)
        if residual <= config.projection_tol:
            return candidate
    raise ProjectionFailureError(
        f"{system.name}: projection did not reach |phi| <= {config.projection_tol:.1e} "
        f"in {config.max_projection_iters} iterations (|phi| = {np.linalg.norm(jet.value):.3e})",
        candidate,
    )


def _record(system, z, observers):
    invariants = {name: float(fn(z)) for name, fn in observers.items()}
    return Sample(z, np.array(system.constraint_value(z)), invariants)


def _check_chord(system, z_prev, z_new):
    for guard in system.guards:
        low = guard.chord_minimum(system.space, z_prev, z_new)
        if low < guard.floor:
            raise DomainExitError(
                f"{system.name}: guard '{guard.name}' crosses its excluded set between "
                f"t={z_prev.t:.17g} and t={z_new.t:.17g} (min norm {low:.3e})",
                z_prev.t,
                stage="chord",
                point=z_prev,
            )
    if not system.contains(z_new):
        raise DomainExitError(
            f"{system.name}: step ending at t={z_new.t:.17g} leaves the domain", z_prev.t, stage="end", point=z_prev
        )


def _finish_step(system, z_prev, z_new, config):
    _check_chord(system, z_prev, z_new)
    if config.projection is Projection.POST_STEP:
        z_new = project_onto_constraint(system, z_new, config)
    return z_new


def integrate(system, z0, t_end, config, observers=None):
    """
    Integrate from z0 to t_end.

    Errors raised while stepping (domain exit, reaction failure, step underflow, projection
    failure) end the run early; the samples so far are returned with the cause in ``error``.
    """
    observers = dict(system.observers if observers is None else observers)
    system.require(z0)
    span = float(t_end) - z0.t
    if not span > 0.0:
        raise InvalidArgumentError(f"t_end={t_end} must exceed the start time {z0.t}")

    warnings = []
    phi0 = np.linalg.norm(system.constraint_value(z0))
    if phi0 > config.projection_tol and config.projection is Projection.OFF:
        message = f"initial point is off the constraint manifold (|phi| = {phi0:.3e}) and projection is off"
        logger.warning("%s: %s", system.name, message)
        warnings.append(message)

    logger.debug_detailed(
        "integrating %s over [%s, %s] with %s, step %s", system.name, z0.t, t_end, config.method.value, config.step
    )
    samples = [_record(system, z0, observers)]
    error = None
    try:
        if config.method is Method.RK4:
            _run_fixed(system, z0, float(t_end), config, observers, samples)
        else:
            _run_adaptive(system, z0, float(t_end), config, observers, samples)
    except DalembertError as e:
        logger.warning("%s stopped at t=%s: %s", system.name, samples[-1].point.t, e)
        error = e
    return Trajectory(tuple(samples), config, system.name, tuple(observers), tuple(warnings), error)


def _run_fixed(system, z0, t_end, config, observers, samples):
    span = t_end - z0.t
    n_steps = max(1, int(math.floor(span / config.step + 1e-9)))
    h = span / n_steps
    z = z0
    for i in range(1, n_steps + 1):
        t_next = t_end if i == n_steps else z0.t + i * h
        z_new = PhasePoint.from_state(t_next, _rk4(system, z, h))
        z = _finish_step(system, z, z_new, config)
        samples.append(_record(system, z, observers))
        logger.debug_verbose("t=%.6f accepted", z.t)


def _run_adaptive(system, z0, t_end, config, observers, samples):
    span = t_end - z0.t
    h = min(config.step, span)
    z = z0
    while t_end - z.t > 1e-15 * max(1.0, abs(t_end)):
        h = min(h, t_end - z.t)
        if h < UNDERFLOW_FRACTION * span:
            raise StepUnderflowError(f"{system.name}: step {h:.3e} underflowed at t={z.t:.17g}", z.t)
        y = z.state()
        y_new, err = _rkf45(system, z, h)
        err_norm = _error_norm(config, y, y_new, err)
        if err_norm <= 1.0:
            t_next = t_end if t_end - (z.t + h) <= 1e-15 * max(1.0, abs(t_end)) else z.t + h
            z = _finish_step(system, z, PhasePoint.from_state(t_next, y_new), config)
            samples.append(_record(system, z, observers))
            logger.debug_verbose("t=%.6f accepted, h=%.3e, err=%.3e", z.t, h, err_norm)
        else:
            logger.debug_verbose("t=%.6f rejected, h=%.3e, err=%.3e", z.t, h, err_norm)
        factor = MAX_FACTOR if err_norm == 0.0 else SAFETY * err_norm ** -0.2
        h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))


def tabulate(system, times, solution, observers=None):
    """Trajectory of an exact solution t -> (x, v) sampled at the given times."""
    observers = dict(system.observers if observers is None else observers)
    samples = []
    for t in times:
        x, v = solution(float(t))
        samples.append(_record(system, PhasePoint(float(t), x, v), observers))
    return Trajectory(tuple(samples), None, system.name, tuple(observers))
