"""
Finite truncations of the state spaces X and Y.

X carries the weighted inner product <u, v> = sum(w_i u_i v_i); with all-ones weights this
is plain l2, with probability weights it is a quadrature rendition of L2(R, mu). Covectors
are stored as their Riesz representatives in this inner product, so vectors and covectors
share one array representation.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .config import COERCIVITY_SAMPLES
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


def _frozen(array):
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


def as_vector(values, length=None, name="vector"):
    """Validate a 1-D finite float vector, returned as a read-only copy."""
    try:
        vec = np.asarray(values, dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"{name} is not numeric: {e}") from e
    if vec.ndim == 0:
        vec = vec.reshape(1)
    if vec.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {vec.shape}")
    if length is not None and vec.shape[0] != length:
        raise InvalidArgumentError(f"{name} has length {vec.shape[0]}, expected {length}")
    if not np.all(np.isfinite(vec)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return _frozen(vec)


def as_linear_map(entries, rows=None, cols=None, name="linear map"):
    """Validate a dense finite matrix (rows x cols), returned as a read-only copy."""
    try:
        mat = np.asarray(entries, dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"{name} is not numeric: {e}") from e
    if mat.ndim == 1 and rows == 1:
        mat = mat.reshape(1, -1)
    if mat.ndim != 2:
        raise InvalidArgumentError(f"{name} must be two-dimensional, got shape {mat.shape}")
    if rows is not None and mat.shape[0] != rows:
        raise InvalidArgumentError(f"{name} has {mat.shape[0]} rows, expected {rows}")
    if cols is not None and mat.shape[1] != cols:
        raise InvalidArgumentError(f"{name} has {mat.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(mat)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return _frozen(mat)


@dataclass(frozen=True, eq=False)
class SpaceSpec:
    """
    Truncated X (dim_x, weighted) and constraint codomain Y (dim_y, Euclidean).

    Attributes:
        dim_x (int): truncation dimension of X.
        dim_y (int): dimension of Y. Zero is reserved for unconstrained systems.
        weights (np.ndarray): positive quadrature weights of the inner product on X.
        nodes (Optional[np.ndarray]): quadrature nodes, kept for output labelling only.
    """

    dim_x: int
    dim_y: int = 1
    weights: Optional[np.ndarray] = None
    nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.dim_x) != self.dim_x or self.dim_x < 1:
            raise InvalidArgumentError(f"dim_x must be a positive integer, got {self.dim_x}")
        if int(self.dim_y) != self.dim_y or self.dim_y < 0:
            raise InvalidArgumentError(f"dim_y must be a non-negative integer, got {self.dim_y}")
        if self.dim_y > self.dim_x:
            raise InvalidArgumentError(
                f"dim_y={self.dim_y} exceeds dim_x={self.dim_x}; phi_v could not be onto"
            )
        weights = np.ones(self.dim_x) if self.weights is None else self.weights
        weights = as_vector(weights, self.dim_x, "weights")
        if np.any(weights <= 0.0):
            raise InvalidArgumentError("weights must be strictly positive")
        object.__setattr__(self, "dim_x", int(self.dim_x))
        object.__setattr__(self, "dim_y", int(self.dim_y))
        object.__setattr__(self, "weights", weights)
        if self.nodes is not None:
            object.__setattr__(self, "nodes", as_vector(self.nodes, self.dim_x, "nodes"))

    @classmethod
    def euclidean(cls, dim_x, dim_y=1):
        return cls(dim_x, dim_y)

    @property
    def unit_weights(self):
        return bool(np.all(self.weights == 1.0))

    def lower(self, u):
        """Coefficients of the covector <u, .> acting on coordinate vectors (M u)."""
        return self.weights * u

    def adjoint(self, jac):
        """Adjoint J' = M^-1 J^T of a map J: X -> Y with Y Euclidean."""
        return jac.T / self.weights[:, None]

    def to_dict(self):
        d = {"dim_x": self.dim_x, "dim_y": self.dim_y, "weights": self.weights.tolist()}
        if self.nodes is not None:
            d["nodes"] = self.nodes.tolist()
        return d


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """A phase point z = (t, x, v) with v the velocity."""

    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = float(self.t)
        if not np.isfinite(t):
            raise InvalidArgumentError(f"time must be finite, got {self.t}")
        x = as_vector(self.x, name="x")
        v = as_vector(self.v, x.shape[0], "v")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def dim(self):
        return self.x.shape[0]

    def state(self):
        return np.concatenate([self.x, self.v])

    @classmethod
    def from_state(cls, t, y):
        n = y.shape[0] // 2
        return cls(t, y[:n], y[n:])

    def with_velocity(self, v):
        return PhasePoint(self.t, self.x, v)

    def to_dict(self):
        return {"t": self.t, "x": self.x.tolist(), "v": self.v.tolist()}


def _check_dim(space, vec, name):
    if np.shape(vec) != (space.dim_x,):
        raise InvalidArgumentError(f"{name} has shape {np.shape(vec)}, expected ({space.dim_x},)")


def inner(space, u, v):
    """Weighted inner product sum(w_i u_i v_i)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dim(space, u, "u")
    _check_dim(space, v, "v")
    return float(np.dot(space.weights * u, v))


def norm(space, u):
    return float(np.sqrt(max(inner(space, u, u), 0.0)))


def is_symmetric(mat, tol=SYMMETRY_TOL):
    scale = max(np.linalg.norm(mat), 1.0)
    return bool(np.linalg.norm(mat - mat.T) <= tol * scale)


def coercivity_estimate(p_matrix, space, samples=COERCIVITY_SAMPLES, rng_seed=0):
    """
    Estimate K in |<v, P v>| >= K ||v||^2.

    A symmetric P (to 1e-12 relative) takes the exact path: the generalized eigenvalues of the
    symmetrized form against the weight matrix. K is their smallest magnitude when they share
    a sign and 0 for an indefinite form. Otherwise the minimum of the Rayleigh quotient over
    ``samples`` random directions is returned, which can only overestimate K.
    """
    p_matrix = np.asarray(p_matrix, dtype=float)
    if p_matrix.ndim != 2 or p_matrix.shape[0] != p_matrix.shape[1]:
        raise InvalidArgumentError(f"P must be square, got shape {p_matrix.shape}")
    if p_matrix.shape[0] != space.dim_x:
        raise InvalidArgumentError(f"P has size {p_matrix.shape[0]}, expected {space.dim_x}")
    if is_symmetric(p_matrix):
        form = space.weights[:, None] * p_matrix
        form = 0.5 * (form + form.T)
        eigs = scipy.linalg.eigh(form, np.diag(space.weights), eigvals_only=True)
        logger.debug_verbose("coercivity eigenvalue path, spectrum [%g, %g]", eigs[0], eigs[-1])
        if eigs[0] > 0.0 or eigs[-1] < 0.0:
            return float(np.min(np.abs(eigs)))
        return 0.0
    rng = np.random.default_rng(rng_seed)
    directions = rng.standard_normal((samples, space.dim_x))
    lowered = directions * space.weights
    quad = np.einsum("ij,ij->i", lowered, directions @ p_matrix.T)
    norms = np.einsum("ij,ij->i", lowered, directions)
    return float(np.min(np.abs(quad) / norms))


@dataclass(frozen=True, eq=False)
class DomainGuard:
    """
    One excluded set of the open domain: z is admissible iff ||A part(z)|| >= floor,
    with part the position or the velocity and A an optional linear map (identity if None).
    """

    name: str
    part: str
    floor: float
    operator: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.part not in ("x", "v"):
            raise InvalidArgumentError(f"guard part must be 'x' or 'v', got {self.part!r}")

    def _image(self, vec):
        return vec if self.operator is None else self.operator @ vec

    def measure(self, space, z):
        vec = z.x if self.part == "x" else z.v
        return norm(space, self._image(vec))

    def holds(self, space, z):
        return self.measure(space, z) >= self.floor

    def chord_minimum(self, space, za, zb):
        """Smallest guarded norm along the straight chord between two phase points."""
        a = self._image(za.x if self.part == "x" else za.v)
        b = self._image(zb.x if self.part == "x" else zb.v)
        d = b - a
        dd = inner(space, d, d)
        s = 0.0 if dd == 0.0 else min(max(-inner(space, a, d) / dd, 0.0), 1.0)
        return norm(space, a + s * d)
