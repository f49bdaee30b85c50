"""
Executable checks of the reaction theorem and its consequences, over sampled points and
over trajectories. Every check yields a CheckResult; run_suite gathers them into a report.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

from .config import COERCIVITY_FLOOR, DEFAULT_SEED
from .constraint_reaction import (
    assemble_b,
    constrained_acceleration,
    constraint_rate,
    dalembert_residual,
    kernel_basis,
    reaction_force,
)
from .errors import DalembertError, InvalidArgumentError, ProjectionFailureError
from .integrator import IntegratorConfig, integrate, project_onto_constraint
from .model_library import (
    OscillatorInit,
    QuadricSpec,
    Reparameterization,
    build_energy_oscillator,
    build_quadric_geodesic,
    reparameterize_constraint,
)
from .space_core import PhasePoint, SpaceSpec, norm

logger = logging.getLogger(__name__)

ON_S_TOL = 1e-10
UNIFORM_TOL = 1e-8
TINY = np.finfo(float).tiny
MAX_DRAWS_PER_POINT = 100
MIN_CONVERSE_SAMPLES = 5
WORST_LOCATIONS = 3
# relative slack of the lower bound on the eigenvalues of b
B_BOUND_SLACK = 1e-10
SWEEP_OSCILLATOR_X0 = 0.6
SWEEP_T_END = 1.0

CHECKS = {
    "virtual-work": "ker phi_v inside ker N at random points",
    "first-integral": "drift of phi (or a named observer) along the trajectory",
    "energy": "drift of 1/2 |v|^2 along a geodesic",
    "reparameterization": "N unchanged on S under sigma = pi phi and sigma = phi + phi^3",
    "converse-dalembert": "finite-difference accelerations against the equation of motion",
    "dimension-sweep": "final states of truncations of increasing dimension",
    "constraint-derivative": "phi_t + phi_x v + phi_v x'' = 0 at random points",
    "dalembert": "D'Alembert residual of the computed acceleration at random points",
    "b-structure": "symmetry and positivity of b",
    "holonomic-invariance": "|g(x(t))| along the trajectory",
}

DEFAULT_TOLERANCES = {
    "virtual-work": 1e-10,
    "first-integral": 1e-10,
    "energy": 1e-8,
    "reparameterization": 1e-12,
    "converse-dalembert": 1e-10,
    "dimension-sweep": 1e-12,
    "constraint-derivative": 1e-10,
    "dalembert": 1e-10,
    "b-structure": 1e-12,
    "holonomic-invariance": 1e-8,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_violation: float
    tolerance: float
    locations: Tuple[int, ...] = ()
    details: Mapping[str, Any] = field(default_factory=dict)
    note: Optional[str] = None

    @property
    def passed(self):
        return bool(self.max_violation <= self.tolerance)

    def to_dict(self):
        d = {
            "name": self.name,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "locations": list(self.locations),
        }
        if self.details:
            d["details"] = dict(self.details)
        if self.note:
            d["note"] = self.note
        return d


@dataclass(frozen=True)
class DiagnosticReport:
    checks: Tuple[CheckResult, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def failed(self):
        return [check.name for check in self.checks if not check.passed]

    def __getitem__(self, name):
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "metadata": dict(self.metadata), "checks": [c.to_dict() for c in self.checks]}


def _result(name, violations, tolerance, details=None, note=None):
    violations = np.asarray(violations, dtype=float)
    if violations.size == 0:
        return CheckResult(name, 0.0, tolerance, (), details or {}, note)
    # NaN counts as the worst violation
    ranked = np.where(np.isnan(violations), np.inf, violations)
    order = np.argsort(-ranked, kind="stable")[:WORST_LOCATIONS]
    return CheckResult(name, float(ranked[order[0]]), tolerance, tuple(int(i) for i in order), details or {}, note)


# region point checks


def _project_state(system, z, config):
    """Gauss-Newton on (x, v) together: y <- y - D' (D D')^-1 phi with D = [phi_x, phi_v]."""
    space = system.space
    dim = space.dim_x
    jet = system.jet(z)
    for _ in range(int(config.max_projection_iters)):
        if np.linalg.norm(jet.value) <= config.projection_tol:
            return z
        d_state = np.hstack([jet.d_x, jet.d_v])
        adjoint = np.vstack([space.adjoint(jet.d_x), space.adjoint(jet.d_v)])
        try:
            lam = scipy.linalg.solve(d_state @ adjoint, jet.value, assume_a="pos", check_finite=False)
        except np.linalg.LinAlgError as e:
            raise ProjectionFailureError(f"{system.name}: state projection is singular: {e}", z) from e
        delta = adjoint @ lam
        z = PhasePoint(z.t, z.x - delta[:dim], z.v - delta[dim:])
        jet = system.jet(z)
    if np.linalg.norm(jet.value) <= config.projection_tol:
        return z
    raise ProjectionFailureError(f"{system.name}: state projection did not converge", z)


def _project_draw(system, z, config):
    """Velocity projection first; a draw whose velocity alone cannot reach S moves x as well."""
    try:
        return project_onto_constraint(system, z, config)
    except (ProjectionFailureError, np.linalg.LinAlgError):
        return _project_state(system, z, config)


def sample_points(system, count, seed=DEFAULT_SEED, on_constraint=False, scale=1.0):
    """
    Seeded componentwise-uniform points in [-scale, scale] inside the domain, projected onto
    S when on_constraint is set. The projection moves v only unless no velocity puts the draw
    on S (the energy oscillator with |x|^2 > 2), then x and v together. Draws that leave the
    domain or fail to project are redrawn.
    """
    rng = np.random.default_rng(seed)
    config = IntegratorConfig()
    dim = system.space.dim_x
    points = []
    draws = 0
    while len(points) < count:
        draws += 1
        if draws > MAX_DRAWS_PER_POINT * max(count, 1):
            raise InvalidArgumentError(f"{system.name}: could not draw {count} admissible points")
        z = PhasePoint(0.0, rng.uniform(-scale, scale, dim), rng.uniform(-scale, scale, dim))
        if not system.contains(z):
            continue
        if on_constraint:
            try:
                z = _project_draw(system, z, config)
            except (DalembertError, np.linalg.LinAlgError):
                continue
            if not system.contains(z):
                continue
        points.append(z)
    logger.debug_detailed("%s: %d points from %d draws", system.name, count, draws)
    return points


def check_virtual_work(system, points, tolerance=DEFAULT_TOLERANCES["virtual-work"]):
    """max |<N, xi>| / (1 + |N|) over unit virtual displacements xi."""
    violations = []
    for z in points:
        n = reaction_force(system, z).reaction
        basis = kernel_basis(system.space, system.jet(z).d_v, system.rank_tol)
        if basis.shape[1] == 0:
            violations.append(0.0)
            continue
        pairing = system.space.lower(n) @ basis
        violations.append(float(np.max(np.abs(pairing))) / (1.0 + norm(system.space, n)))
    return _result("virtual-work", violations, tolerance)


def check_constraint_derivative(system, points, tolerance=DEFAULT_TOLERANCES["constraint-derivative"]):
    violations = []
    for z in points:
        a = constrained_acceleration(system, z)
        jet = system.jet(z)
        scale = np.linalg.norm(jet.d_t) + np.linalg.norm(jet.d_x @ z.v) + np.linalg.norm(jet.d_v @ a)
        violations.append(float(np.linalg.norm(constraint_rate(system, z, a))) / max(1.0, scale))
    return _result("constraint-derivative", violations, tolerance)


def check_dalembert(system, points, tolerance=DEFAULT_TOLERANCES["dalembert"]):
    violations = [dalembert_residual(system, z, constrained_acceleration(system, z)) for z in points]
    return _result("dalembert", violations, tolerance)


def check_b_structure(system, points, tolerance=DEFAULT_TOLERANCES["b-structure"], floor=COERCIVITY_FLOOR):
    """
    Relative asymmetry of b. The smallest eigenvalue of its symmetric part must be positive
    and at least floor * sigma^2, sigma the smallest singular value of phi_v M^-1/2; a point
    breaking either bound counts as an infinite violation. ``min_coercivity_ratio`` reports
    the smallest eigenvalue over K(z) sigma^2, at least 1 up to round-off when K(z) is exact.
    """
    violations = []
    smallest = sigma_min = ratio = math.inf
    bound_min = math.inf
    inv_sqrt_weights = 1.0 / np.sqrt(system.space.weights)
    for z in points:
        b = assemble_b(system, z)
        if b.size == 0:
            violations.append(0.0)
            continue
        asym = float(np.linalg.norm(b - b.T)) / max(float(np.linalg.norm(b)), TINY)
        low = float(np.linalg.eigvalsh(0.5 * (b + b.T))[0])
        sigma = float(np.linalg.svd(system.jet(z).d_v * inv_sqrt_weights[None, :], compute_uv=False)[-1])
        bound = floor * sigma**2
        coercivity = system.inertia(z).coercivity
        smallest = min(smallest, low)
        sigma_min = min(sigma_min, sigma)
        bound_min = min(bound_min, bound)
        ratio = min(ratio, low / max(coercivity * sigma**2, TINY))
        below = low < bound - B_BOUND_SLACK * float(np.linalg.norm(b))
        violations.append(math.inf if low <= 0.0 or below else asym)
    details = {}
    if math.isfinite(smallest):
        details = {
            "min_eigenvalue": smallest,
            "min_singular_value": sigma_min,
            "eigenvalue_bound": bound_min,
            "min_coercivity_ratio": ratio,
        }
    return _result("b-structure", violations, tolerance, details)


def _relative_change(n_a, n_b, space):
    diff = norm(space, n_a - n_b)
    if diff == 0.0:
        return 0.0
    return diff / max(norm(space, n_a), norm(space, n_b), TINY)


def check_reparameterization(
    system, points_on_s, families=None, tolerance=DEFAULT_TOLERANCES["reparameterization"], constraint_tol=ON_S_TOL
):
    """Largest relative change of N on S when phi is replaced by sigma = U(phi)."""
    families = families or (Reparameterization.scale(math.pi), Reparameterization.cubic())
    for i, z in enumerate(points_on_s):
        residual = float(np.linalg.norm(system.constraint_value(z)))
        if residual > constraint_tol:
            raise InvalidArgumentError(f"point {i} is off the constraint manifold (|phi| = {residual:.3e})")
    violations = np.zeros(len(points_on_s))
    details = {}
    for family in families:
        variant = reparameterize_constraint(system, family)
        worst = 0.0
        for i, z in enumerate(points_on_s):
            original_n = reaction_force(system, z).reaction
            change = _relative_change(original_n, reaction_force(variant, z).reaction, system.space)
            violations[i] = max(violations[i], change)
            worst = max(worst, change)
        details[family.label] = worst
    return _result("reparameterization", violations, tolerance, details)


# endregion point checks


# region trajectory checks


def check_first_integral(traj, name, evaluator, tolerance=DEFAULT_TOLERANCES["first-integral"]):
    """max |F(z(t)) - F(z(0))|; F may be vector valued (then the difference is a 2-norm)."""
    if not traj.samples:
        raise InvalidArgumentError("empty trajectory")
    values = [np.atleast_1d(np.asarray(evaluator(s.point), dtype=float)) for s in traj.samples]
    drift = [float(np.linalg.norm(value - values[0])) for value in values]
    return _result(f"first-integral({name})", drift, tolerance, {"initial": values[0].tolist()})


def check_energy(traj, tolerance=DEFAULT_TOLERANCES["energy"], space=None):
    """Drift of the kinetic energy 1/2 |v|^2."""

    def kinetic(z):
        return 0.5 * (float(z.v @ z.v) if space is None else norm(space, z.v) ** 2)

    result = check_first_integral(traj, "kinetic_energy", kinetic, tolerance)
    return CheckResult("energy", result.max_violation, tolerance, result.locations, result.details)


def check_holonomic_invariance(traj, level, tolerance=DEFAULT_TOLERANCES["holonomic-invariance"]):
    """max |g(x(t))| for a trajectory started on {g = 0, g_x v = 0}."""
    return _result("holonomic-invariance", [abs(float(level(s.point))) for s in traj.samples], tolerance)


def _uniform_step(times):
    if times.shape[0] < MIN_CONVERSE_SAMPLES:
        raise InvalidArgumentError(f"need at least {MIN_CONVERSE_SAMPLES} samples, got {times.shape[0]}")
    steps = np.diff(times)
    h = float(np.mean(steps))
    if np.max(np.abs(steps - h)) > UNIFORM_TOL * h:
        raise InvalidArgumentError("trajectory is not uniformly sampled")
    return h


def check_converse_dalembert(
    system, traj, tolerance=DEFAULT_TOLERANCES["converse-dalembert"], constraint_tol=ON_S_TOL
):
    """
    A motion on S whose acceleration satisfies D'Alembert solves the equation of motion.

    Accelerations are second differences of the sampled positions. The agreement bound is
    C h^2 + 10 tolerance, with C the larger of the third and fourth difference magnitudes
    of the positions.
    """
    h = _uniform_step(traj.times)
    x = traj.positions
    phi = np.array([np.linalg.norm(s.constraint_value) for s in traj.samples])
    if np.max(phi) > constraint_tol:
        return _result(
            "converse-dalembert",
            phi,
            constraint_tol,
            {"step": h},
            note="trajectory leaves the constraint manifold; the converse does not apply",
        )
    third = np.max(np.abs(np.diff(x, n=3, axis=0))) / h**3
    fourth = np.max(np.abs(np.diff(x, n=4, axis=0))) / h**4
    bound = max(third, fourth) * h**2 + 10.0 * tolerance
    accel = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / h**2
    mismatch = np.zeros(len(traj) - 2)
    residual = np.zeros(len(traj) - 2)
    for i, a in enumerate(accel):
        z = traj.samples[i + 1].point
        mismatch[i] = float(np.linalg.norm(a - constrained_acceleration(system, z)))
        residual[i] = dalembert_residual(system, z, a)
    details = {"step": h, "max_dalembert_residual": float(np.max(residual)), "max_phi": float(np.max(phi))}
    if np.max(residual) > bound:
        return CheckResult(
            "converse-dalembert",
            float(np.max(residual)),
            bound,
            (int(np.argmax(residual)) + 1,),
            details,
            note="finite-difference accelerations violate D'Alembert",
        )
    result = _result("converse-dalembert", mismatch, bound, details)
    return CheckResult(result.name, result.max_violation, bound, tuple(i + 1 for i in result.locations), details)


# endregion trajectory checks


# region dimension sweep


def _sphere_template(dim):
    x0 = np.zeros(dim)
    v0 = np.zeros(dim)
    x0[0] = 1.0
    v0[1] = 1.0
    return build_quadric_geodesic(QuadricSpec(np.eye(dim))), PhasePoint(0.0, x0, v0)


def _oscillator_template(dim):
    # c = 0.6 / |C2| keeps u' != 0 until t = atan(1 / c) ~ 1.13, past the default span
    space = SpaceSpec.euclidean(dim)
    c1 = np.zeros(dim)
    c2 = np.zeros(dim)
    c1[0] = SWEEP_OSCILLATOR_X0
    c2[0] = math.sqrt(2.0 - SWEEP_OSCILLATOR_X0**2)
    init = OscillatorInit(c1, c2, space)
    return build_energy_oscillator(space), PhasePoint(0.0, init.c1, init.c2)


SWEEP_TEMPLATES = {
    "quadric-geodesic": (_sphere_template, 3),
    "energy-oscillator": (_oscillator_template, 1),
}


@dataclass(frozen=True)
class SweepTable:
    dims: Tuple[int, ...]
    values: Tuple[np.ndarray, ...]
    differences: Tuple[float, ...]

    def to_dict(self):
        return {
            "dims": list(self.dims),
            "values": [v.tolist() for v in self.values],
            "differences": list(self.differences),
        }


def dimension_sweep(template, dims, config, t_end, readout=None):
    """
    Integrate one template in each dimension of ``dims`` and compare ``readout`` of the final
    state. The initial data are padded with zeros, so the exact solution is the same in every
    dimension. The default readout is the leading dims[0] positions plus the norm of the rest.
    """
    if template not in SWEEP_TEMPLATES:
        raise InvalidArgumentError(f"no sweep template for {template!r}; known: {sorted(SWEEP_TEMPLATES)}")
    dims = [int(d) for d in dims]
    builder, min_dim = SWEEP_TEMPLATES[template]
    if not dims or dims != sorted(dims) or dims[0] < min_dim:
        raise InvalidArgumentError(f"dims must be ascending and at least {min_dim}, got {dims}")
    lead = dims[0]

    def default_readout(z):
        return np.concatenate([z.x[:lead], [np.linalg.norm(z.x[lead:])]])

    readout = readout or default_readout
    values = []
    for dim in dims:
        system, z0 = builder(dim)
        traj = integrate(system, z0, t_end, config, observers={})
        if traj.error is not None:
            raise traj.error
        values.append(np.asarray(readout(traj.final), dtype=float))
        logger.debug_detailed("sweep %s dim %d done, %d samples", template, dim, len(traj))
    differences = [float(np.max(np.abs(b - a))) for a, b in zip(values, values[1:])]
    return SweepTable(tuple(dims), tuple(values), tuple(differences))


# endregion dimension sweep


def _normalize(request):
    if isinstance(request, str):
        request = {"name": request}
    request = dict(request)
    if request.get("name") not in CHECKS:
        raise InvalidArgumentError(f"unknown check {request.get('name')!r}; known: {sorted(CHECKS)}")
    request.setdefault("tolerance", DEFAULT_TOLERANCES[request["name"]])
    return request


def _run_one(system, traj, request, seed, point_cache):
    name = request["name"]
    tolerance = float(request["tolerance"])

    def points(on_constraint):
        count = int(request.get("points", 50 if on_constraint else 100))
        key = (count, on_constraint)
        if key not in point_cache:
            point_cache[key] = sample_points(system, count, seed, on_constraint)
        return point_cache[key]

    if name == "virtual-work":
        return check_virtual_work(system, points(False), tolerance)
    if name == "constraint-derivative":
        return check_constraint_derivative(system, points(False), tolerance)
    if name == "dalembert":
        return check_dalembert(system, points(False), tolerance)
    if name == "b-structure":
        return check_b_structure(system, points(False), tolerance)
    if name == "reparameterization":
        return check_reparameterization(system, points(True), tolerance=tolerance)
    if name == "first-integral":
        integral = request.get("integral", "phi")
        if integral == "phi":
            evaluator = system.constraint_value
        elif integral in system.observers:
            evaluator = system.observers[integral]
        else:
            raise InvalidArgumentError(f"{system.name} has no observer {integral!r}")
        return check_first_integral(traj, integral, evaluator, tolerance)
    if name == "energy":
        return check_energy(traj, tolerance, None if system.space.unit_weights else system.space)
    if name == "holonomic-invariance":
        observer = request.get("observer", "quadric_level" if "quadric_level" in system.observers else "level")
        if observer not in system.observers:
            raise InvalidArgumentError(f"{system.name} has no level observer {observer!r}")
        return check_holonomic_invariance(traj, system.observers[observer], tolerance)
    if name == "converse-dalembert":
        return check_converse_dalembert(system, traj, tolerance)
    # dimension-sweep
    template = request.get("template", system.name)
    default_dims = [3, 10, 100] if template == "quadric-geodesic" else [1, 8]
    config = traj.config if traj is not None and traj.config is not None else IntegratorConfig()
    t_end = float(request.get("t_end", SWEEP_T_END))
    table = dimension_sweep(template, request.get("dims", default_dims), config, t_end)
    violations = table.differences or [0.0]
    return _result("dimension-sweep", violations, tolerance, table.to_dict())


def run_suite(system, traj, requests, seed=DEFAULT_SEED, metadata=None):
    """
    Run the requested checks, each given by name or as a mapping with ``name`` and optional
    ``tolerance`` and check parameters. A check that raises is reported as failed with the
    error as its note.
    """
    requests = [_normalize(request) for request in requests]
    point_cache = {}
    results: List[CheckResult] = []
    for request in requests:
        try:
            result = _run_one(system, traj, request, seed, point_cache)
        except DalembertError as e:
            logger.warning("%s: check %s could not run: %s", system.name, request["name"], e)
            result = CheckResult(request["name"], math.inf, float(request["tolerance"]), note=f"{e.kind}: {e}")
        verdict = "passed" if result.passed else "FAILED"
        logger.info(
            "%s: %s %s (%.3e vs %.3e)", system.name, result.name, verdict, result.max_violation, result.tolerance
        )
        results.append(result)
    meta: Dict[str, Any] = {"system": system.name, "seed": seed, "requests": requests}
    meta.update(metadata or {})
    return DiagnosticReport(tuple(results), meta)
