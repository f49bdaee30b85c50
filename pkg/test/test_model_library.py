import math

import numpy as np
import pytest

# ensure that dalembert is in the path
# pip install -e .
from dalembert.constraint_reaction import constrained_acceleration, reaction_force
from dalembert.errors import HypothesisViolationError, InvalidArgumentError, InvalidSpecError
from dalembert.model_library import (
    LagrangeData,
    MassPartials,
    OscillatorInit,
    QuadricSpec,
    Reparameterization,
    affine_constraint,
    build_energy_oscillator,
    build_lagrange_system,
    build_quadric_geodesic,
    gaussian_l2_space,
    geodesic_acceleration,
    lagrange_force,
    oscillator_acceleration,
    oscillator_closed_form,
    quadric_acceleration,
    quadric_closed_form_sphere,
    random_spd,
    reparameterize_constraint,
    rotation_generator,
)
from dalembert.space_core import PhasePoint, SpaceSpec, inner


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def w_family(kind, dim):
    if kind == "identity":
        return np.eye(dim)
    if kind == "diagonal":
        return np.diag(np.arange(1.0, dim + 1.0))
    return random_spd(dim, seed=dim)


@pytest.mark.parametrize(
    "x, v, expected",
    [
        ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]),
        ([0.3, -0.2, 0.9], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    ],
)
def test_sphere_acceleration(x, v, expected):
    sphere = build_quadric_geodesic(QuadricSpec(np.eye(3)))
    np.testing.assert_allclose(constrained_acceleration(sphere, PhasePoint(0.0, x, v)), expected, atol=1e-15)


def test_ellipse_acceleration():
    ellipse = build_quadric_geodesic(QuadricSpec(np.diag([1.0, 4.0])))
    accel = constrained_acceleration(ellipse, PhasePoint(0.0, [1.0, 0.0], [0.0, 1.0]))
    np.testing.assert_allclose(accel, [-4.0, 0.0], atol=1e-14)


@pytest.mark.parametrize("kind", ["identity", "diagonal", "spd"])
@pytest.mark.parametrize("dim", [2, 3, 10, 50])
def test_quadric_pipeline_matches_closed_form(kind, dim):
    w = w_family(kind, dim)
    system = build_quadric_geodesic(QuadricSpec(w))
    rng = np.random.default_rng(42)
    for _ in range(100):
        x = rng.uniform(-1.0, 1.0, dim)
        v = rng.uniform(-1.0, 1.0, dim)
        accel = constrained_acceleration(system, PhasePoint(0.0, x, v))
        assert relative_error(accel, quadric_acceleration(w, x, v)) <= 1e-12


def test_general_geodesic_formula_matches_quadric():
    spec = QuadricSpec(np.diag([1.0, 2.0, 3.0]))
    x = np.array([0.5, 0.1, -0.4])
    v = np.array([0.2, -1.0, 0.3])
    np.testing.assert_allclose(
        geodesic_acceleration(spec.holonomic(), x, v), quadric_acceleration(spec.w, x, v), rtol=1e-12
    )


@pytest.mark.parametrize("weighted", [False, True])
@pytest.mark.parametrize("dim", [1, 4, 32])
def test_oscillator_pipeline_matches_closed_form(dim, weighted):
    space = gaussian_l2_space(dim) if weighted else SpaceSpec.euclidean(dim)
    system = build_energy_oscillator(space)
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-1.0, 1.0, dim)
        v = rng.uniform(-1.0, 1.0, dim)
        accel = constrained_acceleration(system, PhasePoint(0.0, x, v))
        assert relative_error(accel, oscillator_acceleration(space, x, v)) <= 1e-12


def test_oscillator_scalar_acceleration():
    system = build_energy_oscillator(SpaceSpec.euclidean(1))
    assert constrained_acceleration(system, PhasePoint(0.0, [1.0], [1.0]))[0] == pytest.approx(-1.0)


def test_oscillator_orthogonal_phase_has_no_acceleration():
    system = build_energy_oscillator(SpaceSpec.euclidean(2))
    accel = constrained_acceleration(system, PhasePoint(0.0, [1.0, 0.0], [0.0, 1.0]))
    np.testing.assert_allclose(accel, [0.0, 0.0], atol=1e-15)


def test_oscillator_needs_scalar_constraint():
    with pytest.raises(InvalidArgumentError):
        build_energy_oscillator(SpaceSpec.euclidean(2, 2))


def test_quadric_spec_validation():
    with pytest.raises(InvalidSpecError):
        QuadricSpec(np.zeros((2, 2)))
    with pytest.raises(InvalidSpecError):
        QuadricSpec(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(InvalidSpecError):
        QuadricSpec(np.eye(2), np.eye(2))
    with pytest.raises(InvalidSpecError):
        # antisymmetric, but does not commute with W
        QuadricSpec(np.diag([1.0, 2.0]), rotation_generator(2, 0, 1))
    assert QuadricSpec(np.eye(3), rotation_generator(3, 0, 1)).dim == 3


def test_quadric_needs_unit_weights():
    with pytest.raises(InvalidArgumentError):
        build_quadric_geodesic(QuadricSpec(np.eye(2)), SpaceSpec(2, 1, weights=[1.0, 2.0]))


def test_rotation_generator():
    omega = rotation_generator(3, 0, 1)
    assert omega[0, 1] == -1.0 and omega[1, 0] == 1.0
    np.testing.assert_array_equal(omega, -omega.T)
    with pytest.raises(InvalidArgumentError):
        rotation_generator(3, 1, 1)
    with pytest.raises(InvalidArgumentError):
        rotation_generator(3, 0, 3)


def test_sphere_closed_form():
    x, v = quadric_closed_form_sphere([1.0, 0.0, 0.0], [0.0, 2.0, 0.0], 0.25)
    np.testing.assert_allclose(x, [math.cos(0.5), math.sin(0.5), 0.0])
    np.testing.assert_allclose(v, [-2.0 * math.sin(0.5), 2.0 * math.cos(0.5), 0.0])
    with pytest.raises(InvalidArgumentError):
        quadric_closed_form_sphere([2.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.0)
    with pytest.raises(InvalidArgumentError):
        quadric_closed_form_sphere([1.0, 0.0, 0.0], [1.0, 1.0, 0.0], 0.0)


def test_oscillator_closed_form_scalar():
    init = OscillatorInit([1.0], [1.0], SpaceSpec.euclidean(1))
    assert init.coupling == pytest.approx(1.0)
    for t in (0.0, 0.3, 2.0):
        x, v = oscillator_closed_form(init, t)
        assert x[0] == pytest.approx(math.sin(t) + math.cos(t), abs=1e-15)
        assert v[0] == pytest.approx(math.cos(t) - math.sin(t), abs=1e-15)


def test_oscillator_closed_form_uncoupled():
    space = SpaceSpec.euclidean(2)
    init = OscillatorInit([1.0, 0.0], [0.0, 1.0], space)
    assert init.coupling == 0.0
    x, _ = oscillator_closed_form(init, 0.7)
    np.testing.assert_allclose(x, [1.0, math.sin(0.7)])
    init.require_on_constraint()


def test_oscillator_init_validation():
    space = SpaceSpec.euclidean(1)
    with pytest.raises(InvalidArgumentError):
        OscillatorInit([1.0], [0.0], space)
    with pytest.raises(InvalidArgumentError):
        OscillatorInit([2.0], [1.0], space).require_on_constraint()


def test_oscillator_closed_form_solves_the_equation_of_motion():
    space = gaussian_l2_space(4)
    rng = np.random.default_rng(3)
    c1 = rng.uniform(-1.0, 1.0, 4)
    c2 = rng.uniform(-1.0, 1.0, 4)
    init = OscillatorInit(c1, c2, space)
    system = build_energy_oscillator(space)
    h = 1e-3
    for t in np.linspace(0.1, 3.0, 15):
        _, v = oscillator_closed_form(init, t)
        du = math.cos(t) - init.coupling * math.sin(t)
        if abs(du) <= 0.1:
            continue
        xs = [oscillator_closed_form(init, t + k * h)[0] for k in (-1, 0, 1)]
        fd = (xs[0] - 2.0 * xs[1] + xs[2]) / h**2
        accel = constrained_acceleration(system, PhasePoint(t, xs[1], v))
        np.testing.assert_allclose(fd, accel, rtol=0, atol=1e-5)


def test_gaussian_space():
    single = gaussian_l2_space(1)
    np.testing.assert_array_equal(single.weights, [1.0])
    for points in (2, 5, 16):
        space = gaussian_l2_space(points)
        assert space.weights.sum() == pytest.approx(1.0, abs=1e-15)
        ones = np.ones(points)
        assert inner(space, ones, ones) == pytest.approx(1.0, abs=1e-15)
        # second moment of the standard normal law
        assert inner(space, space.nodes, space.nodes) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        gaussian_l2_space(0)


def harmonic_data(mass=None, partials=None):
    return LagrangeData(
        mass=mass or (lambda t, x: np.eye(2)),
        potential_grad=lambda t, x: np.array([x[0], 0.0]),
        mass_partials=partials,
        potential=lambda t, x: 0.5 * x[0] ** 2,
    )


def test_lagrange_tied_velocities():
    space = SpaceSpec.euclidean(2)
    system = build_lagrange_system(harmonic_data(), affine_constraint([[1.0, -1.0]]), space)
    z = PhasePoint(0.0, [1.0, 0.0], [1.0, 1.0])
    np.testing.assert_allclose(system.force_at(z), [-1.0, 0.0], atol=1e-9)
    out = reaction_force(system, z)
    np.testing.assert_allclose(out.multipliers, [0.5], atol=1e-9)
    np.testing.assert_allclose(out.reaction, [0.5, -0.5], atol=1e-9)
    np.testing.assert_allclose(constrained_acceleration(system, z), [-0.5, -0.5], atol=1e-9)
    assert system.observers["energy"](z) == pytest.approx(1.5)


def test_lagrange_unconstrained_harmonic():
    data = LagrangeData(mass=lambda t, x: np.eye(2), potential_grad=lambda t, x: x, constant_mass=True)
    system = build_lagrange_system(data, None, SpaceSpec.euclidean(2, 0))
    z = PhasePoint(0.0, [0.3, -0.7], [1.0, 2.0])
    np.testing.assert_allclose(constrained_acceleration(system, z), [-0.3, 0.7], atol=1e-9)


def test_lagrange_constant_mass_solves_against_g():
    data = harmonic_data(mass=lambda t, x: np.diag([2.0, 2.0]), partials=MassPartials.zero(2))
    system = build_lagrange_system(data, None, SpaceSpec.euclidean(2, 0))
    z = PhasePoint(0.0, [0.8, 0.5], [0.0, 0.0])
    np.testing.assert_allclose(constrained_acceleration(system, z), [-0.4, 0.0], atol=1e-15)


def test_lagrange_rejects_indefinite_mass():
    data = harmonic_data(mass=lambda t, x: np.diag([1.0, -1.0]))
    system = build_lagrange_system(data, affine_constraint([[1.0, -1.0]]), SpaceSpec.euclidean(2))
    with pytest.raises(HypothesisViolationError):
        constrained_acceleration(system, PhasePoint(0.0, [1.0, 0.0], [1.0, 1.0]))


def varying_mass(t, x):
    return np.array([[2.0 + x[0] ** 2 + t, x[1]], [x[1], 1.0 + x[0] * x[1] + 0.1]])


def varying_mass_partials():
    def d_vt(z):
        return np.array([z.v[0], 0.0])

    def d_vx_v(z):
        x, v = z.x, z.v
        d_g = np.array([[2.0 * x[0] * v[0], v[1]], [v[1], v[0] * x[1] + x[0] * v[1]]])
        return d_g @ v

    def d_x(z):
        x, v = z.x, z.v
        g_x0 = np.array([[2.0 * x[0], 0.0], [0.0, x[1]]])
        g_x1 = np.array([[0.0, 1.0], [1.0, x[0]]])
        return 0.5 * np.array([v @ g_x0 @ v, v @ g_x1 @ v])

    return MassPartials(d_vt, d_vx_v, d_x)


def test_lagrange_force_finite_differences_match_analytic_partials():
    space = SpaceSpec.euclidean(2)
    z = PhasePoint(0.3, [0.4, 0.2], [0.7, -0.5])
    numeric = lagrange_force(harmonic_data(mass=varying_mass), z, space)
    analytic = lagrange_force(harmonic_data(mass=varying_mass, partials=varying_mass_partials()), z, space)
    np.testing.assert_allclose(numeric, analytic, rtol=1e-7, atol=1e-8)


def test_affine_constraint_jet():
    constraint = affine_constraint([1.0, 2.0], b=[[0.5, 0.0]], c=[1.0], d_t=[3.0])
    jet = constraint(PhasePoint(2.0, [2.0, 0.0], [1.0, 1.0]))
    np.testing.assert_allclose(jet.value, [1.0 + 2.0 + 1.0 + 6.0 - 1.0])
    np.testing.assert_array_equal(jet.d_t, [3.0])
    np.testing.assert_array_equal(jet.d_v, [[1.0, 2.0]])


@pytest.fixture
def sphere():
    return build_quadric_geodesic(QuadricSpec(np.eye(3)))


def test_scale_reparameterization_agrees_everywhere(sphere):
    scaled = reparameterize_constraint(sphere, Reparameterization.scale(3.0))
    assert scaled.name == "quadric-geodesic[scale(3)]"
    z = PhasePoint(0.0, [0.3, 0.5, -0.2], [0.4, 0.1, 0.9])
    np.testing.assert_allclose(reaction_force(scaled, z).reaction, reaction_force(sphere, z).reaction, rtol=1e-12)
    np.testing.assert_allclose(
        reaction_force(scaled, z).multipliers, reaction_force(sphere, z).multipliers / 3.0, rtol=1e-12
    )


def test_cubic_reparameterization_agrees_on_the_manifold(sphere):
    cubic = reparameterize_constraint(sphere, Reparameterization.cubic())
    on = PhasePoint(0.0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    np.testing.assert_allclose(reaction_force(cubic, on).reaction, reaction_force(sphere, on).reaction, atol=1e-12)
    off = PhasePoint(0.0, [1.0, 0.0, 0.0], [0.5, 1.0, 0.0])
    assert np.linalg.norm(cubic.constraint_value(off) - sphere.constraint_value(off)) > 0.1


def test_reparameterization_validation(sphere):
    with pytest.raises(InvalidArgumentError):
        Reparameterization.scale(0.0)
    free = build_lagrange_system(
        LagrangeData(mass=lambda t, x: np.eye(2), potential_grad=lambda t, x: x), None, SpaceSpec.euclidean(2, 0)
    )
    with pytest.raises(InvalidArgumentError):
        reparameterize_constraint(free, Reparameterization.cubic())


def test_random_spd_is_seeded_and_bounded():
    a = random_spd(5, seed=1)
    np.testing.assert_array_equal(a, random_spd(5, seed=1))
    np.testing.assert_array_equal(a, a.T)
    eig = np.linalg.eigvalsh(a)
    assert eig.min() >= 1.0 - 1e-12
    assert eig.max() <= 10.0 + 1e-12
