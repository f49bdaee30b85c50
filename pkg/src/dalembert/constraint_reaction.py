"""
Reaction of ideal constraints.

For a system x'' = P(z)(f(z) + N(z)) with constraint phi(z) = 0 the reaction is

    b(z) = phi_v P phi_v'
    Lambda(z) = -b^-1 (phi_t + phi_x v + phi_v P f)
    N(z) = phi_v' Lambda

where phi_v' is the adjoint in the weighted inner product of X. b is never inverted; the
multipliers come from a pivoted LU solve.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

from .config import (
    B_CONDITION_LIMIT,
    COERCIVITY_FLOOR,
    RANK_TOL,
    SOLVE_RESIDUAL_TOL,
)
from .errors import (
    DomainError,
    HypothesisViolationError,
    InvalidArgumentError,
    InvalidSpecError,
    SingularBError,
)
from .space_core import (
    DomainGuard,
    PhasePoint,
    SpaceSpec,
    as_linear_map,
    as_vector,
    coercivity_estimate,
    is_symmetric,
    norm,
)

logger = logging.getLogger(__name__)

HYPOTHESIS_COERCIVE = "Hypothesis 1 (coercive inertia)"
HYPOTHESIS_ONTO = "Hypothesis 2 (phi_v onto)"


# region Inertia operators


class IdentityInertia:
    """P = id, the inertia of both geodesic and oscillator systems."""

    coercivity = 1.0

    def __init__(self, space):
        self.__dim = space.dim_x

    def apply(self, u):
        return np.array(u, dtype=float)

    def solve(self, a):
        return np.array(a, dtype=float)

    def matrix(self):
        return np.eye(self.__dim)


class MatrixInertia:
    """A concrete P, checked against the coercivity floor and LU-factored once."""

    def __init__(self, p_matrix, space, floor=COERCIVITY_FLOOR):
        self.__p = as_linear_map(p_matrix, space.dim_x, space.dim_x, "P")
        self.coercivity = coercivity_estimate(self.__p, space)
        if self.coercivity < floor:
            raise HypothesisViolationError(
                f"coercivity estimate {self.coercivity:.3e} of P is below the floor {floor:.1e}",
                HYPOTHESIS_COERCIVE,
            )
        self.__lu = scipy.linalg.lu_factor(self.__p, check_finite=False)

    def apply(self, u):
        return self.__p @ u

    def solve(self, a):
        return scipy.linalg.lu_solve(self.__lu, a, check_finite=False)

    def matrix(self):
        return np.array(self.__p)


class InverseInertia:
    """
    P = G^-1 for a mass operator G self-adjoint in the weighted inner product, so that M G is
    symmetric. P u solves (M G) p = M u by Cholesky (LU when G is negative definite); G is
    never inverted explicitly.
    """

    def __init__(self, g_matrix, space, floor=COERCIVITY_FLOOR):
        self.__g = as_linear_map(g_matrix, space.dim_x, space.dim_x, "G")
        self.__weights = space.weights
        lowered = space.weights[:, None] * self.__g
        if not is_symmetric(lowered):
            raise InvalidSpecError("mass operator G is not self-adjoint")
        self.coercivity = coercivity_estimate(self.__g, space)
        if self.coercivity < floor:
            raise HypothesisViolationError(
                f"coercivity estimate {self.coercivity:.3e} of G is below the floor {floor:.1e}",
                HYPOTHESIS_COERCIVE,
            )
        try:
            self.__factor = scipy.linalg.cho_factor(lowered, check_finite=False)
            self.__solver = scipy.linalg.cho_solve
        except np.linalg.LinAlgError:
            self.__factor = scipy.linalg.lu_factor(lowered, check_finite=False)
            self.__solver = scipy.linalg.lu_solve

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        weights = self.__weights if u.ndim == 1 else self.__weights[:, None]
        return self.__solver(self.__factor, weights * u, check_finite=False)

    def solve(self, a):
        return self.__g @ a

    def matrix(self):
        return self.apply(np.eye(self.__g.shape[0]))


# endregion Inertia operators


@dataclass(frozen=True, eq=False)
class ConstraintJet:
    """phi and its partial derivatives at one phase point."""

    value: np.ndarray
    d_t: np.ndarray
    d_x: np.ndarray
    d_v: np.ndarray

    def __post_init__(self):
        value = as_vector(self.value, name="phi")
        rows = value.shape[0]
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "d_t", as_vector(self.d_t, rows, "phi_t"))
        d_v = as_linear_map(self.d_v, rows=rows, name="phi_v")
        object.__setattr__(self, "d_v", d_v)
        object.__setattr__(self, "d_x", as_linear_map(self.d_x, rows, d_v.shape[1], "phi_x"))

    @property
    def rows(self):
        return self.value.shape[0]

    def check_rank(self, rank_tol=RANK_TOL):
        """Numerical surrogate of phi_v being onto: sigma_min > rank_tol * sigma_max."""
        if self.rows == 0:
            return
        sigma = np.linalg.svd(self.d_v, compute_uv=False)
        if sigma[0] == 0.0 or sigma[-1] <= rank_tol * sigma[0]:
            raise HypothesisViolationError(
                f"phi_v is rank deficient (singular values {sigma[-1]:.3e} / {sigma[0]:.3e})",
                HYPOTHESIS_ONTO,
            )


def unconstrained_jet(space):
    return ConstraintJet(np.zeros(0), np.zeros(0), np.zeros((0, space.dim_x)), np.zeros((0, space.dim_x)))


@dataclass(frozen=True, eq=False)
class SystemModel:
    """
    One constrained system: inertia P, force f, constraint phi and the open domain.

    Attributes:
        name (str): label used in trajectories and reports.
        space (SpaceSpec): the truncated X and Y.
        inertia (Callable): z -> inertia operator (IdentityInertia, MatrixInertia, InverseInertia).
        force (Callable): z -> Riesz representative of f(z).
        constraint (Optional[Callable]): z -> ConstraintJet; None for an unconstrained system.
        guards (Tuple[DomainGuard, ...]): excluded sets of the domain.
        domain (Optional[Callable]): extra membership predicate.
        observers (Mapping): named invariants z -> float recorded along trajectories.
        rank_tol (float): relative singular-value cutoff for phi_v.
        metadata (Mapping): builder parameters, echoed in reports.
    """

    name: str
    space: SpaceSpec
    inertia: Callable
    force: Callable
    constraint: Optional[Callable] = None
    guards: Tuple[DomainGuard, ...] = ()
    domain: Optional[Callable] = None
    observers: Mapping[str, Callable] = field(default_factory=dict)
    rank_tol: float = RANK_TOL
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.constraint is None and self.space.dim_y != 0:
            raise InvalidArgumentError("an unconstrained system needs dim_y = 0")
        if self.constraint is not None and self.space.dim_y == 0:
            raise InvalidArgumentError("a constrained system needs dim_y >= 1")
        object.__setattr__(self, "guards", tuple(self.guards))
        object.__setattr__(self, "observers", dict(self.observers))

    def contains(self, z):
        if z.dim != self.space.dim_x:
            return False
        if not all(guard.holds(self.space, z) for guard in self.guards):
            return False
        return self.domain is None or bool(self.domain(z))

    def require(self, z):
        if z.dim != self.space.dim_x:
            raise InvalidArgumentError(f"phase point has dimension {z.dim}, expected {self.space.dim_x}")
        for guard in self.guards:
            if not guard.holds(self.space, z):
                raise DomainError(
                    f"{self.name}: guard '{guard.name}' fails at t={z.t:.17g} "
                    f"(norm {guard.measure(self.space, z):.3e} < {guard.floor:.1e})",
                    z,
                )
        if self.domain is not None and not self.domain(z):
            raise DomainError(f"{self.name}: point outside the declared domain at t={z.t:.17g}", z)

    def jet(self, z):
        if self.constraint is None:
            return unconstrained_jet(self.space)
        jet = self.constraint(z)
        if jet.rows != self.space.dim_y or jet.d_v.shape[1] != self.space.dim_x:
            raise InvalidArgumentError(
                f"constraint jet has shape {jet.d_v.shape}, expected ({self.space.dim_y}, {self.space.dim_x})"
            )
        return jet

    def constraint_value(self, z):
        return self.jet(z).value

    def force_at(self, z):
        return as_vector(self.force(z), self.space.dim_x, "f")


@dataclass(frozen=True, eq=False)
class ReactionOutput:
    """
    Attributes:
        multipliers (np.ndarray): Lambda(z) in Y'.
        reaction (np.ndarray): N(z) = phi_v' Lambda, Riesz representative in X.
        b_matrix (np.ndarray): the assembled b(z).
        condition (float): 2-norm condition estimate of b(z).
    """

    multipliers: np.ndarray
    reaction: np.ndarray
    b_matrix: np.ndarray
    condition: float


def _b_from(system, z, jet, inertia):
    jet.check_rank(system.rank_tol)
    if jet.rows == 0:
        return np.zeros((0, 0)), 1.0
    b = jet.d_v @ inertia.apply(system.space.adjoint(jet.d_v))
    condition = float(np.linalg.cond(b))
    if not np.isfinite(condition) or condition > B_CONDITION_LIMIT:
        suspect = HYPOTHESIS_COERCIVE if inertia.coercivity < COERCIVITY_FLOOR else None
        logger.debug_detailed("singular b at t=%s, condition %s, suspect %s", z.t, condition, suspect)
        raise SingularBError(
            f"{system.name}: b is numerically singular at t={z.t:.17g} (condition {condition:.3e})",
            condition,
            suspect,
        )
    return b, condition


def assemble_b(system, z):
    """b(z) = phi_v P phi_v' with the adjoint taken in the weighted inner product."""
    system.require(z)
    return _b_from(system, z, system.jet(z), system.inertia(z))[0]


def _solve(system, z):
    system.require(z)
    jet = system.jet(z)
    inertia = system.inertia(z)
    f = system.force_at(z)
    b, condition = _b_from(system, z, jet, inertia)
    if jet.rows == 0:
        return jet, inertia, f, ReactionOutput(np.zeros(0), np.zeros(system.space.dim_x), b, condition)
    rhs = -(jet.d_t + jet.d_x @ z.v + jet.d_v @ inertia.apply(f))
    try:
        lam = scipy.linalg.lu_solve(scipy.linalg.lu_factor(b, check_finite=False), rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularBError(f"{system.name}: multiplier solve failed: {e}", condition) from e
    residual = np.linalg.norm(b @ lam - rhs)
    bound = SOLVE_RESIDUAL_TOL * (np.linalg.norm(b) * np.linalg.norm(lam) + np.linalg.norm(rhs))
    if not np.all(np.isfinite(lam)) or residual > bound:
        raise SingularBError(
            f"{system.name}: multiplier solve residual {residual:.3e} exceeds {bound:.3e}", condition
        )
    reaction = system.space.adjoint(jet.d_v) @ lam
    return jet, inertia, f, ReactionOutput(lam, reaction, b, condition)


def solve_multipliers(system, z):
    """Lambda solving b Lambda = -(phi_t + phi_x v + phi_v P f)."""
    return _solve(system, z)[3].multipliers


def reaction_force(system, z):
    return _solve(system, z)[3]


def constrained_acceleration(system, z):
    """x'' = P (f + N)."""
    _, inertia, f, out = _solve(system, z)
    return inertia.apply(f + out.reaction)


def constraint_rate(system, z, accel):
    """d/dt phi along a motion through z with acceleration accel: phi_t + phi_x v + phi_v a."""
    jet = system.jet(z)
    return jet.d_t + jet.d_x @ z.v + jet.d_v @ accel


def kernel_basis(space, d_v, rank_tol=RANK_TOL):
    """
    Columns span ker phi_v and are orthonormal in the weighted inner product.

    The null space is computed by SVD of phi_v M^-1/2, so rank decisions order singular
    values largest first.
    """
    scale = 1.0 / np.sqrt(space.weights)
    if d_v.shape[0] == 0:
        return np.diag(scale)
    basis = scipy.linalg.null_space(d_v * scale[None, :], rcond=rank_tol)
    return basis * scale[:, None]


def dalembert_residual(system, z, accel):
    """
    How far accel is from satisfying ker phi_v in ker(P^-1 accel - f): the largest pairing of
    r = P^-1 accel - f with a unit virtual displacement, over max(1, ||r||).
    """
    system.require(z)
    accel = as_vector(accel, system.space.dim_x, "accel")
    inertia = system.inertia(z)
    r = inertia.solve(accel) - system.force_at(z)
    basis = kernel_basis(system.space, system.jet(z).d_v, system.rank_tol)
    if basis.shape[1] == 0:
        return 0.0
    pairings = system.space.lower(r) @ basis
    return float(np.max(np.abs(pairings)) / max(1.0, norm(system.space, r)))
