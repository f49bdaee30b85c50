"""
Concrete constrained systems and their closed-form oracles.

 - geodesics of a holonomic surface {g = 0} with constant inertia, quadrics (x, Wx) = 1 in particular
 - the oscillator whose full energy 1/2 (|v|^2 + |x|^2) is held at 1
 - Lagrange systems of the second kind, P = G^-1
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .config import COERCIVITY_FLOOR, DOMAIN_FLOOR
from .constraint_reaction import (
    ConstraintJet,
    IdentityInertia,
    InverseInertia,
    MatrixInertia,
    SystemModel,
)
from .errors import InvalidArgumentError, InvalidSpecError
from .space_core import DomainGuard, SpaceSpec, as_linear_map, as_vector, inner

logger = logging.getLogger(__name__)

STRUCTURE_TOL = 1e-12
ON_CONSTRAINT_TOL = 1e-12
FD_EPS = np.finfo(float).eps ** (1.0 / 3.0)


def _relative(defect, reference):
    return np.linalg.norm(defect) <= STRUCTURE_TOL * max(np.linalg.norm(reference), 1.0)


def _scalar_or_norm(values):
    values = np.asarray(values, dtype=float)
    return float(values[0]) if values.shape == (1,) else float(np.linalg.norm(values))


# region holonomic geodesics


@dataclass(frozen=True)
class HolonomicSpec:
    """
    A position-level constraint g(x) = 0 with values in Y.

    Attributes:
        name (str): system name.
        level (Callable): x -> g(x), a vector of length dim_y.
        jacobian (Callable): x -> g_x(x), dim_y x dim_x.
        hessian_along (Callable): (x, v) -> d/dx (g_x(x) v), dim_y x dim_x.
    """

    name: str
    level: Callable
    jacobian: Callable
    hessian_along: Callable


def _constant_inertia(inertia, space):
    if inertia is None:
        return IdentityInertia(space)
    if isinstance(inertia, (IdentityInertia, MatrixInertia, InverseInertia)):
        return inertia
    return MatrixInertia(as_linear_map(inertia, space.dim_x, space.dim_x, "P"), space)


def build_holonomic_geodesic(spec, space, inertia=None, guards=(), observers=None, metadata=None, level_name="level"):
    """Geodesics of {g = 0}: phi = g_x(x) v with constant P and f = 0."""
    operator = _constant_inertia(inertia, space)
    zero_force = np.zeros(space.dim_x)
    zero_t = np.zeros(space.dim_y)

    def constraint(z):
        jac = as_linear_map(spec.jacobian(z.x), space.dim_y, space.dim_x, "g_x")
        return ConstraintJet(jac @ z.v, zero_t, spec.hessian_along(z.x, z.v), jac)

    all_observers = {level_name: lambda z: _scalar_or_norm(spec.level(z.x))}
    all_observers.update(observers or {})
    return SystemModel(
        name=spec.name,
        space=space,
        inertia=lambda z: operator,
        force=lambda z: zero_force,
        constraint=constraint,
        guards=tuple(guards),
        observers=all_observers,
        metadata=dict(metadata or {}),
    )


def geodesic_acceleration(spec, x, v, inertia=None, space=None):
    """Closed form x'' = -P g_x' (g_x P g_x')^-1 g_xx[v, v]."""
    x = as_vector(x, name="x")
    v = as_vector(v, x.shape[0], "v")
    jac = np.atleast_2d(np.asarray(spec.jacobian(x), dtype=float))
    space = space or SpaceSpec(x.shape[0], jac.shape[0])
    operator = _constant_inertia(inertia, space)
    curvature = np.asarray(spec.hessian_along(x, v), dtype=float) @ v
    pushed = operator.apply(space.adjoint(jac))
    return -pushed @ np.linalg.solve(jac @ pushed, curvature)


# endregion holonomic geodesics


# region quadric


@dataclass(frozen=True, eq=False)
class QuadricSpec:
    """
    The quadric (x, Wx) = 1 and an optional symmetry generator.

    Attributes:
        w (np.ndarray): symmetric nonzero W.
        omega (Optional[np.ndarray]): antisymmetric generator commuting with W.
    """

    w: np.ndarray
    omega: Optional[np.ndarray] = None

    def __post_init__(self):
        w = as_linear_map(self.w, name="W")
        if w.shape[0] != w.shape[1]:
            raise InvalidSpecError(f"W must be square, got shape {w.shape}")
        if not np.any(w):
            raise InvalidSpecError("W must be nonzero")
        if not _relative(w - w.T, w):
            raise InvalidSpecError("W must be symmetric")
        object.__setattr__(self, "w", w)
        if self.omega is not None:
            omega = as_linear_map(self.omega, w.shape[0], w.shape[0], "omega")
            if not _relative(omega + omega.T, omega):
                raise InvalidSpecError("omega must be antisymmetric")
            if not _relative(w @ omega - omega @ w, w @ omega):
                raise InvalidSpecError("omega must commute with W")
            object.__setattr__(self, "omega", omega)

    @property
    def dim(self):
        return self.w.shape[0]

    def holonomic(self, name="quadric-geodesic"):
        w = self.w
        return HolonomicSpec(
            name=name,
            level=lambda x: np.array([x @ w @ x - 1.0]),
            jacobian=lambda x: 2.0 * (w @ x)[None, :],
            hessian_along=lambda x, v: 2.0 * (w @ v)[None, :],
        )


def build_quadric_geodesic(spec, space=None, domain_floor=DOMAIN_FLOOR):
    """
    Geodesics of the quadric in truncated l2: phi = 2 (Wx, v), P = id, f = 0, on the domain
    |Wx| >= domain_floor.
    """
    space = space or SpaceSpec.euclidean(spec.dim)
    if space.dim_x != spec.dim or space.dim_y != 1:
        raise InvalidArgumentError(f"quadric of size {spec.dim} needs dim_x = {spec.dim}, dim_y = 1")
    if not space.unit_weights:
        raise InvalidArgumentError("quadric geodesics live in l2: weights must all be 1")
    w = spec.w
    observers = {"kinetic_energy": lambda z: 0.5 * float(z.v @ z.v)}
    if spec.omega is not None:
        omega = spec.omega
        observers["symmetry"] = lambda z: float(z.x @ omega @ z.v)
    return build_holonomic_geodesic(
        spec.holonomic(),
        space,
        guards=(DomainGuard("Wx", "x", domain_floor, w),),
        observers=observers,
        metadata={"w": w.tolist(), "omega": None if spec.omega is None else spec.omega.tolist()},
        level_name="quadric_level",
    )


def quadric_acceleration(w, x, v):
    """-((v, Wv) / |Wx|^2) Wx."""
    wx = w @ x
    return -(float(v @ w @ v) / float(wx @ wx)) * wx


def quadric_closed_form_sphere(x0, v0, t):
    """Great circle through x0 with velocity v0 on the unit sphere."""
    x0 = as_vector(x0, name="x0")
    v0 = as_vector(v0, x0.shape[0], "v0")
    speed = float(np.linalg.norm(v0))
    if abs(float(x0 @ x0) - 1.0) > ON_CONSTRAINT_TOL:
        raise InvalidArgumentError("x0 must lie on the unit sphere")
    if abs(float(x0 @ v0)) > ON_CONSTRAINT_TOL:
        raise InvalidArgumentError("v0 must be tangent to the sphere at x0")
    if speed <= ON_CONSTRAINT_TOL:
        raise InvalidArgumentError("v0 must be nonzero")
    c, s = math.cos(speed * t), math.sin(speed * t)
    return c * x0 + (s / speed) * v0, -speed * s * x0 + c * v0


def rotation_generator(dim, i, j):
    """Antisymmetric generator of rotations in the (i, j) coordinate plane (0-based)."""
    if not (0 <= i < dim and 0 <= j < dim) or i == j:
        raise InvalidArgumentError(f"plane ({i}, {j}) is not a coordinate plane of dimension {dim}")
    omega = np.zeros((dim, dim))
    omega[i, j] = -1.0
    omega[j, i] = 1.0
    return omega


# endregion quadric


# region energy oscillator


@dataclass(frozen=True, eq=False)
class OscillatorInit:
    """Distributed initial data C1 = x(0), C2 = v(0) over the nodes of ``space``."""

    c1: np.ndarray
    c2: np.ndarray
    space: SpaceSpec

    def __post_init__(self):
        object.__setattr__(self, "c1", as_vector(self.c1, self.space.dim_x, "c1"))
        object.__setattr__(self, "c2", as_vector(self.c2, self.space.dim_x, "c2"))
        if inner(self.space, self.c2, self.c2) <= 0.0:
            raise InvalidArgumentError("c2 must be nonzero")

    @property
    def energy(self):
        return 0.5 * (inner(self.space, self.c1, self.c1) + inner(self.space, self.c2, self.c2))

    @property
    def coupling(self):
        """c = <C1, C2> / |C2|^2."""
        return inner(self.space, self.c1, self.c2) / inner(self.space, self.c2, self.c2)

    def require_on_constraint(self):
        if abs(self.energy - 1.0) > ON_CONSTRAINT_TOL:
            raise InvalidArgumentError(f"1/2 (|c1|^2 + |c2|^2) = {self.energy!r}, expected 1")


def build_energy_oscillator(space, domain_floor=DOMAIN_FLOOR):
    """phi = 1/2 (|v|^2 + |x|^2) - 1 with P = id, f = 0 on X minus {x = 0} and {v = 0}."""
    if space.dim_y != 1:
        raise InvalidArgumentError(f"the energy constraint is scalar, got dim_y = {space.dim_y}")
    zero_force = np.zeros(space.dim_x)
    identity = IdentityInertia(space)
    zero_t = np.zeros(1)

    def energy(z):
        return 0.5 * (inner(space, z.v, z.v) + inner(space, z.x, z.x))

    def constraint(z):
        return ConstraintJet(
            np.array([energy(z) - 1.0]),
            zero_t,
            space.lower(z.x)[None, :],
            space.lower(z.v)[None, :],
        )

    return SystemModel(
        name="energy-oscillator",
        space=space,
        inertia=lambda z: identity,
        force=lambda z: zero_force,
        constraint=constraint,
        guards=(DomainGuard("x", "x", domain_floor), DomainGuard("v", "v", domain_floor)),
        observers={"energy": energy},
        metadata={"weights": space.weights.tolist()},
    )


def oscillator_acceleration(space, x, v):
    """-(<x, v> / |v|^2) v."""
    return -(inner(space, x, v) / inner(space, v, v)) * np.asarray(v, dtype=float)


def oscillator_closed_form(init, t):
    """
    x(t) = C1 + u(t) C2 with u'' + u + c = 0, u(0) = 0, u'(0) = 1.

    Defined for every t; it is a classical solution of the constrained motion only while u' != 0.
    """
    c = init.coupling
    u = math.sin(t) + c * (math.cos(t) - 1.0)
    du = math.cos(t) - c * math.sin(t)
    return init.c1 + u * init.c2, du * init.c2


def gaussian_l2_space(points, dim_y=1):
    """Gauss-Hermite discretization of L2(R, mu), mu the standard normal law."""
    if int(points) != points or points < 1:
        raise InvalidArgumentError(f"points must be a positive integer, got {points!r}")
    nodes, weights = np.polynomial.hermite.hermgauss(int(points))
    nodes = nodes * np.sqrt(2.0)
    weights = weights / np.sqrt(np.pi)
    weights = weights / weights.sum()
    return SpaceSpec(int(points), dim_y, weights, nodes)


# endregion energy oscillator


# region Lagrange systems


@dataclass(frozen=True)
class MassPartials:
    """
    Analytic mass-matrix terms of the kinetic energy T = 1/2 <v, G v>, each z -> Riesz vector.

    Attributes:
        d_vt (Callable): T_vt = (dG/dt) v.
        d_vx_v (Callable): T_vx v = (dG/dx [v]) v.
        d_x (Callable): T_x, the i-th entry 1/2 <v, dG/dx_i v> / w_i.
    """

    d_vt: Callable
    d_vx_v: Callable
    d_x: Callable

    @classmethod
    def zero(cls, dim):
        zeros = np.zeros(dim)
        return cls(lambda z: zeros, lambda z: zeros, lambda z: zeros)


@dataclass(frozen=True)
class LagrangeData:
    """
    Attributes:
        mass (Callable): (t, x) -> G, self-adjoint in the weighted inner product.
        potential_grad (Callable): (t, x) -> V_x.
        applied_force (Optional[Callable]): z -> Q; zero if None.
        mass_partials (Optional[MassPartials]): analytic partials; central differences if None.
        potential (Optional[Callable]): (t, x) -> V, only used by the energy observer.
        constant_mass (bool): G does not depend on (t, x); factored once.
    """

    mass: Callable
    potential_grad: Callable
    applied_force: Optional[Callable] = None
    mass_partials: Optional[MassPartials] = None
    potential: Optional[Callable] = None
    constant_mass: bool = False


def _fd_partials(data, z, space):
    g = data.mass
    v = z.v
    h_t = FD_EPS * max(1.0, abs(z.t))
    d_vt = (g(z.t + h_t, z.x) - g(z.t - h_t, z.x)) @ v / (2.0 * h_t)
    speed = float(np.linalg.norm(v))
    if speed == 0.0:
        d_vx_v = np.zeros(space.dim_x)
    else:
        h_v = FD_EPS * max(1.0, float(np.max(np.abs(z.x)))) / max(1.0, speed)
        d_vx_v = (g(z.t, z.x + h_v * v) - g(z.t, z.x - h_v * v)) @ v / (2.0 * h_v)
    d_x = np.empty(space.dim_x)
    for i in range(space.dim_x):
        h_i = FD_EPS * max(1.0, abs(z.x[i]))
        step = np.zeros(space.dim_x)
        step[i] = h_i
        d_g = (g(z.t, z.x + step) - g(z.t, z.x - step)) / (2.0 * h_i)
        d_x[i] = 0.5 * inner(space, v, d_g @ v) / space.weights[i]
    return d_vt, d_vx_v, d_x


def lagrange_force(data, z, space):
    """f = Q - T_vt - T_vx v - V_x + T_x."""
    if data.mass_partials is None:
        d_vt, d_vx_v, d_x = _fd_partials(data, z, space)
    else:
        partials = data.mass_partials
        d_vt, d_vx_v, d_x = partials.d_vt(z), partials.d_vx_v(z), partials.d_x(z)
    q = np.zeros(space.dim_x) if data.applied_force is None else data.applied_force(z)
    return as_vector(q - d_vt - d_vx_v - data.potential_grad(z.t, z.x) + d_x, space.dim_x, "f")


def affine_constraint(a, b=None, c=None, d_t=None):
    """phi = A v + B x + d_t t - c, with A onto; B, c and d_t default to zero."""
    a = as_linear_map(a, rows=1 if np.ndim(a) == 1 else None, name="constraint.a")
    rows, dim = a.shape
    b = np.zeros((rows, dim)) if b is None else as_linear_map(b, rows, dim, "constraint.b")
    c = np.zeros(rows) if c is None else as_vector(c, rows, "constraint.c")
    d_t = np.zeros(rows) if d_t is None else as_vector(d_t, rows, "constraint.d_t")

    def constraint(z):
        return ConstraintJet(a @ z.v + b @ z.x + d_t * z.t - c, d_t, b, a)

    return constraint


def build_lagrange_system(data, constraint, space, name="lagrange", floor=COERCIVITY_FLOOR, observers=None):
    """
    The Lagrange equations of the second kind as x'' = G^-1 (f + N); G is applied through
    a factorization, never inverted. ``constraint`` None gives an unconstrained system.
    """
    if data.constant_mass:
        operator = InverseInertia(data.mass(0.0, np.zeros(space.dim_x)), space, floor)

        def inertia(z):
            return operator

    else:

        def inertia(z):
            return InverseInertia(data.mass(z.t, z.x), space, floor)

    def energy(z):
        kinetic = 0.5 * inner(space, z.v, np.asarray(data.mass(z.t, z.x)) @ z.v)
        return kinetic + (0.0 if data.potential is None else float(data.potential(z.t, z.x)))

    all_observers = {"energy": energy}
    all_observers.update(observers or {})
    return SystemModel(
        name=name,
        space=space,
        inertia=inertia,
        force=lambda z: lagrange_force(data, z, space),
        constraint=constraint,
        observers=all_observers,
    )


# endregion Lagrange systems


# region reparameterization


@dataclass(frozen=True)
class Reparameterization:
    """A defining function sigma = U(z, phi) with U(z, y) = 0 iff y = 0 and U_y(z, 0) invertible."""

    label: str
    factor: float = 1.0
    cubic_term: bool = False

    @classmethod
    def scale(cls, k):
        if not (isinstance(k, (int, float)) and math.isfinite(k)) or k == 0:
            raise InvalidArgumentError(f"scale factor must be a nonzero real, got {k!r}")
        return cls(f"scale({k:g})", float(k))

    @classmethod
    def cubic(cls):
        return cls("cubic", cubic_term=True)

    def apply(self, jet):
        if self.cubic_term:
            value = jet.value + jet.value**3
            slope = 1.0 + 3.0 * jet.value**2
        else:
            value = self.factor * jet.value
            slope = np.full(jet.rows, self.factor)
        return ConstraintJet(value, slope * jet.d_t, slope[:, None] * jet.d_x, slope[:, None] * jet.d_v)


def reparameterize_constraint(system, family):
    """The same system with phi replaced componentwise by sigma = U(phi)."""
    if system.constraint is None:
        raise InvalidArgumentError(f"{system.name} has no constraint to reparameterize")
    original = system.constraint
    return replace(
        system,
        name=f"{system.name}[{family.label}]",
        constraint=lambda z: family.apply(original(z)),
        metadata={**system.metadata, "reparameterization": family.label},
    )


# endregion reparameterization


def random_spd(dim, seed, spread=10.0):
    """A seeded symmetric positive definite matrix with eigenvalues in [1, spread]."""
    rng = np.random.default_rng(seed)
    q, _ = scipy.linalg.qr(rng.standard_normal((dim, dim)))
    spd = (q * rng.uniform(1.0, spread, dim)) @ q.T
    return 0.5 * (spd + spd.T)
