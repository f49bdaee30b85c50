import copy
import logging
import math
import os
from pathlib import Path

import numpy as np
import yaml

from . import model_library
from .config import DEFAULT_SEED, DOMAIN_FLOOR, level_from_name
from .diagnostics import CHECKS, DEFAULT_TOLERANCES
from .errors import ConfigError, DalembertError
from .integrator import IntegratorConfig, project_onto_constraint
from .space_core import PhasePoint, SpaceSpec, as_linear_map, as_vector

SECTIONS = ["system", "initial", "time", "integrator", "output", "logging"]

DEFAULT_CONFIG = {
    "system": {
        "name": "quadric-geodesic",
        "dim": 3,
        "domain_floor": DOMAIN_FLOOR,
        # quadric-geodesic
        "w": "identity",  # identity | diag | {diag: [...]} | row-major matrix
        "omega": None,  # None | {plane: [i, j]} (1-based) | row-major matrix
        # energy-oscillator
        "weights": "unit",  # unit | gaussian
        "c1": None,
        "c2": None,
        # lagrange
        "mass": None,
        "stiffness": None,
        "damping": None,
        "load": None,
        "constraint": None,  # {a: ..., b: ..., c: ...}
    },
    "initial": {
        "x0": None,
        "v0": None,
        "project": False,
    },
    "time": {
        "t0": 0.0,
        "t_end": 1.0,
    },
    "integrator": {
        "method": "rk4",
        "step": 1e-3,
        "abs_tol": 1e-10,
        "rel_tol": 1e-10,
        "projection": "off",
        "projection_tol": 1e-12,
        "max_projection_iters": 20,
    },
    "output": {
        "name": None,
        "dir": ".",
        "observers": [],
        "record_timings": False,
    },
    "logging": {
        "log_level": "WARNING",
        "root_log_level": None,
        "log_file": "",
    },
    "checks": None,
    "seed": DEFAULT_SEED,
}

SYSTEMS = {
    "quadric-geodesic": {
        "description": "geodesics of (x, Wx) = 1 in truncated l2, P = id, f = 0",
        "parameters": ["dim", "w", "omega", "domain_floor"],
        "observers": ["quadric_level", "kinetic_energy", "symmetry (with omega)"],
    },
    "energy-oscillator": {
        "description": "oscillator with 1/2 (|v|^2 + |x|^2) = 1 in discretized L2(R, mu), P = id, f = 0",
        "parameters": ["dim", "weights", "c1", "c2", "domain_floor"],
        "observers": ["energy"],
    },
    "lagrange": {
        "description": "Lagrange system with constant mass G, V = 1/2 <x, Kx>, Q = -C v + q, phi = A v + B x - c",
        "parameters": ["dim", "mass", "stiffness", "damping", "load", "constraint"],
        "observers": ["energy"],
    },
}

SYSTEM_ALIASES = {"quadric": "quadric-geodesic", "sphere": "quadric-geodesic", "oscillator": "energy-oscillator"}

DEFAULT_CHECKS = {
    "quadric-geodesic": [
        "virtual-work",
        {"name": "first-integral", "integral": "phi"},
        "energy",
        "reparameterization",
        "converse-dalembert",
    ],
    "energy-oscillator": [
        "virtual-work",
        {"name": "first-integral", "integral": "phi"},
        "reparameterization",
        "converse-dalembert",
    ],
    "lagrange": [
        "virtual-work",
        "constraint-derivative",
        "dalembert",
        "b-structure",
    ],
}

SYMMETRY_CHECK = {"name": "first-integral", "integral": "symmetry", "tolerance": 1e-8}

BUNDLED_DIR = Path(__file__).parent / "config"


def bundled_scenarios():
    return sorted(path.stem for path in BUNDLED_DIR.glob("*.yaml"))


def resolve_config_path(name):
    """A path, or the stem of a bundled scenario."""
    path = Path(os.path.expanduser(name))
    if path.exists() or path.suffix:
        return path
    return BUNDLED_DIR / f"{name}.yaml"


# region builders


def _int(conf, key, minimum=1):
    value = conf[key.split(".")[-1]]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(key, f"expected an integer >= {minimum}, got {value!r}")
    return value


def _real(conf, key, positive=False):
    value = conf[key.split(".")[-1]]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(key, f"expected a finite real, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(key, f"expected a positive real, got {value!r}")
    return float(value)


def _vector(value, dim, key):
    try:
        return as_vector(value, dim, key.split(".")[-1])
    except DalembertError as e:
        raise ConfigError(key, str(e)) from e


def _matrix(value, rows, cols, key):
    try:
        return as_linear_map(value, rows, cols, key.split(".")[-1])
    except DalembertError as e:
        raise ConfigError(key, str(e)) from e


def _square(conf, key, dim, default):
    return default if conf[key] is None else _matrix(conf[key], dim, dim, f"system.{key}")


def _quadric_w(value, dim):
    if value == "identity":
        return np.eye(dim)
    if value == "diag":
        return np.diag(np.arange(1.0, dim + 1.0))
    if isinstance(value, dict):
        if set(value) != {"diag"}:
            raise ConfigError("system.w", f"expected {{diag: [...]}}, got keys {sorted(value)}")
        return np.diag(_vector(value["diag"], dim, "system.w.diag"))
    return _matrix(value, dim, dim, "system.w")


def _quadric_omega(value, dim):
    if value is None:
        return None
    if isinstance(value, dict):
        plane = value.get("plane")
        if set(value) != {"plane"} or not isinstance(plane, list) or len(plane) != 2:
            raise ConfigError("system.omega", "expected {plane: [i, j]}")
        try:
            return model_library.rotation_generator(dim, int(plane[0]) - 1, int(plane[1]) - 1)
        except (DalembertError, TypeError, ValueError) as e:
            raise ConfigError("system.omega.plane", str(e)) from e
    return _matrix(value, dim, dim, "system.omega")


def build_quadric(conf):
    dim = _int(conf, "system.dim")
    w = _quadric_w(conf["w"], dim)
    try:
        model_library.QuadricSpec(w)
    except DalembertError as e:
        raise ConfigError("system.w", str(e)) from e
    omega = _quadric_omega(conf["omega"], dim)
    try:
        spec = model_library.QuadricSpec(w, omega)
    except DalembertError as e:
        raise ConfigError("system.omega", str(e)) from e
    return model_library.build_quadric_geodesic(spec, domain_floor=_real(conf, "system.domain_floor", True))


def oscillator_space(conf):
    dim = _int(conf, "system.dim")
    if conf["weights"] == "unit":
        return SpaceSpec.euclidean(dim)
    if conf["weights"] == "gaussian":
        return model_library.gaussian_l2_space(dim)
    raise ConfigError("system.weights", f"expected 'unit' or 'gaussian', got {conf['weights']!r}")


def build_oscillator(conf):
    return model_library.build_energy_oscillator(oscillator_space(conf), _real(conf, "system.domain_floor", True))


def build_lagrange(conf):
    dim = _int(conf, "system.dim")
    mass = _square(conf, "mass", dim, np.eye(dim))
    stiffness = _square(conf, "stiffness", dim, np.zeros((dim, dim)))
    if not np.allclose(stiffness, stiffness.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(stiffness).max())):
        raise ConfigError("system.stiffness", "must be symmetric")
    damping = _square(conf, "damping", dim, np.zeros((dim, dim)))
    load = np.zeros(dim) if conf["load"] is None else _vector(conf["load"], dim, "system.load")

    constraint = None
    dim_y = 0
    if conf["constraint"] is not None:
        spec = conf["constraint"]
        if not isinstance(spec, dict) or "a" not in spec or not set(spec) <= {"a", "b", "c"}:
            raise ConfigError("system.constraint", "expected a mapping with keys a and optionally b, c")
        raw_a = spec["a"]
        if isinstance(raw_a, list) and raw_a and not isinstance(raw_a[0], list):
            raw_a = [raw_a]
        a = _matrix(raw_a, None, dim, "system.constraint.a")
        dim_y = a.shape[0]
        b = None if spec.get("b") is None else _matrix(spec["b"], dim_y, dim, "system.constraint.b")
        c = None if spec.get("c") is None else _vector(spec["c"], dim_y, "system.constraint.c")
        constraint = model_library.affine_constraint(a, b, c)

    data = model_library.LagrangeData(
        mass=lambda t, x: mass,
        potential_grad=lambda t, x: stiffness @ x,
        applied_force=lambda z: load - damping @ z.v,
        mass_partials=model_library.MassPartials.zero(dim),
        potential=lambda t, x: 0.5 * float(x @ stiffness @ x),
        constant_mass=True,
    )
    try:
        space = SpaceSpec.euclidean(dim, dim_y)
        return model_library.build_lagrange_system(data, constraint, space)
    except DalembertError as e:
        key = "system.constraint" if "dim_y" in str(e) else "system.mass"
        raise ConfigError(key, str(e)) from e


BUILDERS = {
    "quadric-geodesic": build_quadric,
    "energy-oscillator": build_oscillator,
    "lagrange": build_lagrange,
}


# endregion builders


class Scenario:
    """
    One validated scenario file: the system, its start point, time span, integrator settings,
    checks and output settings. Every validation failure raises ConfigError naming the key.
    """

    def __init__(self, configfile, seed=None, output_dir=None, configure_logging=True):
        self.__logger = logging.getLogger(__name__)
        self.__path = resolve_config_path(str(configfile))
        self.__config = copy.deepcopy(DEFAULT_CONFIG)
        conf = self.__load()
        for section in SECTIONS:
            if section not in conf:
                if section == "system":
                    raise ConfigError("system", "section is required")
                self.__logger.warning(
                    "Config file %s does not contain section '%s'. Using defaults.", self.__path, section
                )
                continue
            if not isinstance(conf[section], dict):
                raise ConfigError(section, f"expected a mapping, got {type(conf[section]).__name__}")
            unknown = set(conf[section]) - set(DEFAULT_CONFIG[section])
            if unknown:
                raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
            self.__config[section] = {**DEFAULT_CONFIG[section], **conf[section]}
        for key in ("checks", "seed"):
            if key in conf:
                self.__config[key] = conf[key]
        unknown = set(conf) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        if seed is not None:
            self.__config["seed"] = seed
        if output_dir is not None:
            self.__config["output"]["dir"] = str(output_dir)
        self.__logger.debug_detailed("config data = %s", self.__config)

        if configure_logging:
            self.setup_logging()
        self.__validate()

    def __load(self):
        try:
            with open(self.__path, "r") as stream:
                conf = yaml.safe_load(stream)
        except OSError as e:
            raise ConfigError(str(self.__path), f"can't read config file: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(str(self.__path), f"can't parse yaml config file: {e}") from e
        if conf is None:
            conf = {}
        if not isinstance(conf, dict):
            raise ConfigError(str(self.__path), "top level must be a mapping")
        return conf

    def setup_logging(self):
        """Apply the logging section to the package logger and the root file handler."""
        log_conf = self.__config["logging"]
        package_logger = logging.getLogger("dalembert")
        package_logger.setLevel(level_from_name(str(log_conf["log_level"])))
        if log_conf["root_log_level"] is not None:
            logging.getLogger().setLevel(level_from_name(str(log_conf["root_log_level"])))
        log_file = log_conf["log_file"]
        if log_file:
            root_logger = logging.getLogger()
            filehandler = logging.FileHandler(os.path.expanduser(log_file))  # appends
            filehandler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
            for hdlr in root_logger.handlers[:]:  # remove the existing file handlers
                if isinstance(hdlr, logging.FileHandler):
                    root_logger.removeHandler(hdlr)
            root_logger.addHandler(filehandler)

    def __validate(self):
        conf = self.__config
        system_conf = conf["system"]
        name = SYSTEM_ALIASES.get(system_conf["name"], system_conf["name"])
        if name not in BUILDERS:
            raise ConfigError("system.name", f"unknown system {system_conf['name']!r}; known: {sorted(BUILDERS)}")
        self.__system = BUILDERS[name](system_conf)
        dim = self.__system.space.dim_x

        self.__t0 = _real(conf["time"], "time.t0")
        self.__t_end = _real(conf["time"], "time.t_end")
        if self.__t_end <= self.__t0:
            raise ConfigError("time.t_end", f"t_end={self.__t_end} must exceed t0={self.__t0}")

        self.__integrator_config = self.__build_integrator_config(conf["integrator"])
        self.__initial = self.__build_initial(conf["initial"], name, dim)

        observers = conf["output"]["observers"] or []
        if not isinstance(observers, list):
            raise ConfigError("output.observers", "expected a list of observer names")
        for observer in observers:
            if observer not in self.__system.observers:
                raise ConfigError("output.observers", f"{name} has no observer {observer!r}")
        self.__observers = {o: self.__system.observers[o] for o in observers}

        self.__checks = self.__build_checks(conf["checks"], name)
        seed = conf["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed", f"expected a non-negative integer, got {seed!r}")
        self.__seed = seed
        self.__logger.info("scenario %s: %s, dim %d, t in [%s, %s]", self.name, name, dim, self.__t0, self.__t_end)

    def __build_integrator_config(self, integrator_conf):
        values = dict(integrator_conf)
        projection = values["projection"]
        if projection is False or projection is None:
            values["projection"] = "off"
        elif projection is True:
            values["projection"] = "post_step"
        for key in ("step", "abs_tol", "rel_tol", "projection_tol"):
            _real(values, f"integrator.{key}", positive=True)
        _int(values, "integrator.max_projection_iters")
        try:
            return IntegratorConfig(**values)
        except DalembertError as e:
            key = "integrator.method" if "Method" in str(e) else "integrator.projection"
            raise ConfigError(key, str(e)) from e

    def __build_initial(self, initial_conf, name, dim):
        system_conf = self.__config["system"]
        x0, v0 = initial_conf["x0"], initial_conf["v0"]
        if name == "energy-oscillator":
            x0 = system_conf["c1"] if x0 is None else x0
            v0 = system_conf["c2"] if v0 is None else v0
        if x0 is None:
            raise ConfigError("initial.x0", "required")
        if v0 is None:
            raise ConfigError("initial.v0", "required")
        z0 = PhasePoint(self.__t0, _vector(x0, dim, "initial.x0"), _vector(v0, dim, "initial.v0"))
        if name == "energy-oscillator":
            try:
                model_library.OscillatorInit(z0.x, z0.v, self.__system.space)
            except DalembertError as e:
                raise ConfigError("initial.v0", str(e)) from e
        if not isinstance(initial_conf["project"], bool):
            raise ConfigError("initial.project", f"expected true or false, got {initial_conf['project']!r}")
        try:
            self.__system.require(z0)
            if initial_conf["project"]:
                z0 = project_onto_constraint(self.__system, z0, self.__integrator_config)
                self.__system.require(z0)
        except DalembertError as e:
            raise ConfigError("initial.project" if initial_conf["project"] else "initial.x0", str(e)) from e
        return z0

    def __build_checks(self, checks, name):
        if checks is None:
            checks = copy.deepcopy(DEFAULT_CHECKS[name])
            if self.__system.metadata.get("omega") is not None:
                checks.append(dict(SYMMETRY_CHECK))
        if not isinstance(checks, list):
            raise ConfigError("checks", "expected a list")
        normalized = []
        for i, check in enumerate(checks):
            request = {"name": check} if isinstance(check, str) else check
            if not isinstance(request, dict) or request.get("name") not in CHECKS:
                raise ConfigError(f"checks.{i}", f"unknown check {check!r}; known: {sorted(CHECKS)}")
            request = dict(request)
            request.setdefault("tolerance", DEFAULT_TOLERANCES[request["name"]])
            if isinstance(request["tolerance"], bool) or not isinstance(request["tolerance"], (int, float)):
                raise ConfigError(f"checks.{i}.tolerance", f"expected a real, got {request['tolerance']!r}")
            normalized.append(request)
        return normalized

    @property
    def path(self):
        return self.__path

    @property
    def name(self):
        return self.__config["output"]["name"] or self.__path.stem

    @property
    def config(self):
        """The merged configuration, as echoed in summaries."""
        return copy.deepcopy(self.__config)

    @property
    def system(self):
        return self.__system

    @property
    def initial(self):
        return self.__initial

    @property
    def t_end(self):
        return self.__t_end

    @property
    def integrator_config(self):
        return self.__integrator_config

    @property
    def observers(self):
        return dict(self.__observers)

    @property
    def checks(self):
        return copy.deepcopy(self.__checks)

    @property
    def seed(self):
        return self.__seed

    @property
    def output_dir(self):
        return Path(os.path.expanduser(str(self.__config["output"]["dir"])))

    @property
    def record_timings(self):
        return bool(self.__config["output"]["record_timings"])
