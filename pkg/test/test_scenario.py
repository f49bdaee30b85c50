import logging
import math

import numpy as np
import pytest
import yaml

# ensure that dalembert is in the path
# pip install -e .
from dalembert.errors import ConfigError
from dalembert.integrator import Method, Projection
from dalembert.scenario import DEFAULT_CHECKS, Scenario, bundled_scenarios, resolve_config_path

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

SPHERE = {
    "system": {"name": "quadric-geodesic", "dim": 3},
    "initial": {"x0": [1.0, 0.0, 0.0], "v0": [0.0, 1.0, 0.0]},
    "time": {"t_end": 1.0},
    "integrator": {"step": 1e-2},
    "output": {},
    "logging": {"log_level": "WARNING"},
}


@pytest.fixture
def write_config(tmp_path):
    def write(data, name="scenario"):
        path = tmp_path / f"{name}.yaml"
        with open(path, "w") as stream:
            yaml.safe_dump(data, stream)
        return path

    return write


def with_changes(section, **values):
    data = {k: dict(v) for k, v in SPHERE.items()}
    data[section].update(values)
    return data


def config_error_key(path):
    with pytest.raises(ConfigError) as info:
        Scenario(path)
    return info.value.key


def test_bundled_scenarios_are_listed():
    names = bundled_scenarios()
    for name in ("sphere", "sphere_symmetry", "ellipse", "oscillator", "oscillator_breakdown", "lagrange"):
        assert name in names
    assert resolve_config_path("sphere").name == "sphere.yaml"


@pytest.mark.parametrize("name", bundled_scenarios())
def test_every_bundled_scenario_validates(name):
    scenario = Scenario(name)
    assert scenario.name == name
    assert scenario.system.contains(scenario.initial)


def test_bundled_sphere():
    scenario = Scenario("sphere")
    assert scenario.system.name == "quadric-geodesic"
    assert scenario.system.space.dim_x == 3
    assert scenario.t_end == pytest.approx(2.0 * math.pi)
    assert scenario.integrator_config.method is Method.RK4
    assert scenario.integrator_config.projection is Projection.OFF
    np.testing.assert_array_equal(scenario.initial.v, [0.0, 1.0, 0.0])
    assert [c["name"] for c in scenario.checks] == [
        c if isinstance(c, str) else c["name"] for c in DEFAULT_CHECKS["quadric-geodesic"]
    ]
    assert scenario.seed == 42
    assert scenario.observers == {}


def test_symmetry_scenario_adds_the_symmetry_check():
    scenario = Scenario("sphere_symmetry")
    assert list(scenario.observers) == ["kinetic_energy", "symmetry"]
    symmetry = [c for c in scenario.checks if c.get("integral") == "symmetry"]
    assert symmetry == [{"name": "first-integral", "integral": "symmetry", "tolerance": 1e-8}]


def test_oscillator_starts_from_c1_c2():
    scenario = Scenario("oscillator")
    np.testing.assert_array_equal(scenario.initial.x, [1.0])
    np.testing.assert_array_equal(scenario.initial.v, [1.0])
    assert scenario.system.name == "energy-oscillator"


def test_gaussian_oscillator():
    scenario = Scenario("oscillator_gaussian")
    assert scenario.system.space.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert scenario.integrator_config.method is Method.RK45
    assert scenario.integrator_config.projection is Projection.POST_STEP
    assert scenario.checks[1]["tolerance"] == 2e-12


def test_overrides(write_config, tmp_path):
    scenario = Scenario(write_config(SPHERE), seed=7, output_dir=tmp_path / "out")
    assert scenario.seed == 7
    assert scenario.output_dir == tmp_path / "out"
    assert scenario.config["seed"] == 7
    assert scenario.name == "scenario"


def test_output_name(write_config):
    assert Scenario(write_config(with_changes("output", name="renamed"))).name == "renamed"


def test_missing_section_warns(write_config, caplog):
    data = dict(SPHERE)
    del data["output"]
    with caplog.at_level(logging.WARNING):
        scenario = Scenario(write_config(data))
    assert "does not contain section 'output'" in caplog.text
    assert scenario.observers == {}


def test_missing_system_is_an_error(write_config):
    data = dict(SPHERE)
    del data["system"]
    assert config_error_key(write_config(data)) == "system"


@pytest.mark.parametrize(
    "section, values, key",
    [
        ("system", {"colour": "red"}, "system.colour"),
        ("system", {"name": "pendulum"}, "system.name"),
        ("system", {"dim": 0}, "system.dim"),
        ("system", {"w": [[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]}, "system.w"),
        ("system", {"omega": {"plane": [1, 1]}}, "system.omega.plane"),
        ("system", {"domain_floor": -1.0}, "system.domain_floor"),
        ("time", {"t_end": -1.0}, "time.t_end"),
        ("time", {"t_end": "soon"}, "time.t_end"),
        ("integrator", {"method": "euler"}, "integrator.method"),
        ("integrator", {"step": 0.0}, "integrator.step"),
        ("integrator", {"max_projection_iters": 0}, "integrator.max_projection_iters"),
        ("initial", {"x0": [0.0, 0.0, 0.0]}, "initial.x0"),
        ("initial", {"x0": [1.0, 0.0]}, "initial.x0"),
        ("initial", {"v0": None}, "initial.v0"),
        ("initial", {"project": "yes"}, "initial.project"),
        ("output", {"observers": ["momentum"]}, "output.observers"),
    ],
)
def test_invalid_values_name_their_key(write_config, section, values, key):
    assert config_error_key(write_config(with_changes(section, **values))) == key


def test_unknown_section(write_config):
    data = dict(SPHERE)
    data["plots"] = {}
    assert config_error_key(write_config(data)) == "plots"


@pytest.mark.parametrize(
    "checks, key",
    [
        (["no-such-check"], "checks.0"),
        ([{"name": "energy", "tolerance": "x"}], "checks.0.tolerance"),
        ("energy", "checks"),
    ],
)
def test_invalid_checks(write_config, checks, key):
    data = dict(SPHERE)
    data["checks"] = checks
    assert config_error_key(write_config(data)) == key


def test_invalid_seed(write_config):
    data = dict(SPHERE)
    data["seed"] = -3
    assert config_error_key(write_config(data)) == "seed"


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        Scenario(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("system: [unclosed\n")
    with pytest.raises(ConfigError):
        Scenario(broken)


def test_yaml_booleans_for_projection(write_config):
    scenario = Scenario(write_config(with_changes("integrator", projection=True)))
    assert scenario.integrator_config.projection is Projection.POST_STEP
    scenario = Scenario(write_config(with_changes("integrator", projection=False)))
    assert scenario.integrator_config.projection is Projection.OFF


def test_initial_projection(write_config):
    data = with_changes("initial", v0=[0.1, 1.0, 0.0], project=True)
    scenario = Scenario(write_config(data))
    np.testing.assert_allclose(scenario.initial.v, [0.0, 1.0, 0.0], atol=1e-15)


def test_oscillator_needs_nonzero_c2(write_config):
    data = {"system": {"name": "oscillator", "dim": 1, "c1": [1.0], "c2": [0.0]}}
    assert config_error_key(write_config(data)) == "initial.v0"


def test_lagrange_single_row_constraint(write_config):
    data = {
        "system": {
            "name": "lagrange",
            "dim": 2,
            "stiffness": [[1.0, 0.0], [0.0, 0.0]],
            "constraint": {"a": [1.0, -1.0]},
        },
        "initial": {"x0": [1.0, 0.0], "v0": [1.0, 1.0]},
    }
    scenario = Scenario(write_config(data))
    assert scenario.system.space.dim_y == 1
    assert [c["name"] for c in scenario.checks] == DEFAULT_CHECKS["lagrange"]


def test_lagrange_rejects_indefinite_mass(write_config):
    data = {
        "system": {"name": "lagrange", "dim": 2, "mass": [[1.0, 0.0], [0.0, -1.0]]},
        "initial": {"x0": [1.0, 0.0], "v0": [1.0, 1.0]},
    }
    assert config_error_key(write_config(data)) == "system.mass"


def test_log_file(write_config, tmp_path):
    log_path = tmp_path / "dalembert.log"
    root_logger = logging.getLogger()
    Scenario(write_config(with_changes("logging", log_file=str(log_path))))
    handlers = [h for h in root_logger.handlers if isinstance(h, logging.FileHandler)]
    try:
        assert [h.baseFilename for h in handlers] == [str(log_path)]
    finally:
        for handler in handlers:
            root_logger.removeHandler(handler)
            handler.close()
