"""Scenario configuration: a YAML tree with one section per subsystem.

Unknown keys are rejected, missing keys take defaults, and ``dump_config``
produces a canonical form whose SHA-256 is the run's config hash.
"""

from __future__ import annotations

import copy
import hashlib
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .constraints import CaseThresholds, RiskParams, RoadBounds
from .gp import INPUT_DIM, OUTPUT_DIM, KernelParams
from .qp import QpTolerances
from .smpc import InputBounds, MpcWeights, SmpcConfig
from .vehicle import VehicleGeometry


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "name": "unnamed",
    "sim": {
        "T": 0.2,
        "max_steps": 150,
        "settle_steps": 10,
        "n_warmup": 5,
        "warmup_variance": [0.05, 0.01, 0.05, 0.01],
    },
    "mpc": {
        "N": 10,
        "Q": [0.0, 0.25, 0.2, 10.0],
        "R": [0.33, 5.0],
        "S": [0.33, 15.0],
        "u_min": [-15.0, -0.2],
        "u_max": [10.0, 0.2],
        "du_min": [-5.0, -0.1],
        "du_max": [5.0, 0.1],
        "regularization": 1e-8,
        "tol_kkt": 1e-6,
        "tol_feas": 1e-6,
        "max_iter": 4000,
        "discretization": "euler",
    },
    "road": {"w_lane": 12.0},
    "vehicle": {"l_f": 2.0, "l_r": 2.0, "l_veh": 5.0, "w_veh": 2.0},
    "constraints": {
        "eps_safe": 0.5,
        "t_headway": 1.0,
        "beta": 0.8,
        "d_far_factor": 3.0,
        "margin_switch": None,      # None: w_veh / 2 + eps_safe
        "eps_anchor": 0.01,
        "literal_pairing": False,
        "max_slope": None,          # None: unlimited incline
        "predictive_switch": False,
    },
    "gp": {
        "M": 30,
        "capacity": 300,
        "sigma2": [1.0, 1.0, 1.0, 1.0],
        "lengthscales": [10.0] * INPUT_DIM,
        "lengthscale_scale": 1.0,
        "noise2": 1e-6,
        "initial_dataset": None,
        "grid_search": False,
    },
    "tv": {
        "initial": [80.0, 50.0, -2.5, 0.0],
        "K": [[0.0, -0.55, 0.0, 0.0], [0.0, 0.0, -0.63, -1.15]],
        "u_min": [-15.0, -0.4],
        "u_max": [10.0, 0.4],
        "commit_threshold": 0.5,
    },
    "ev": {
        "initial": [0.0, 0.0, 0.0, 60.0],
        "v_ref": 60.0,
        "d_ref": 0.0,
        "phi_ref": 0.0,
    },
    "seeds": [0],
}

SWEEPABLE = {
    "beta": ("constraints", "beta"),
    "M": ("gp", "M"),
    "t_headway": ("constraints", "t_headway"),
    "commit_threshold": ("tv", "commit_threshold"),
    "lengthscale_scale": ("gp", "lengthscale_scale"),
}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"section '{path or '<root>'}' must be a mapping")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _vec(cfg, section, key, n):
    try:
        arr = np.asarray(cfg[section][key], float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    if arr.shape != (n,):
        raise ConfigError(f"{section}.{key} must have {n} entries")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{section}.{key} must be finite")
    return arr


def _normalize(cfg: dict) -> dict:
    """Coerce types and check invariants; returns the canonical tree."""
    def num(section, key, kind=float):
        try:
            return kind(cfg[section][key])
        except (TypeError, ValueError):
            raise ConfigError(f"{section}.{key} must be a number") from None

    s = cfg["sim"]
    s["T"] = num("sim", "T")
    if not s["T"] > 0:
        raise ConfigError("sim.T must be positive")
    for key in ("max_steps", "settle_steps", "n_warmup"):
        s[key] = num("sim", key, int)
        if s[key] < 1:
            raise ConfigError(f"sim.{key} must be at least 1")
    s["warmup_variance"] = _vec(cfg, "sim", "warmup_variance", 4).tolist()

    m = cfg["mpc"]
    m["N"] = num("mpc", "N", int)
    if m["N"] < 1:
        raise ConfigError("mpc.N must be at least 1")
    for key, n in (("Q", 4), ("R", 2), ("S", 2), ("u_min", 2), ("u_max", 2), ("du_min", 2), ("du_max", 2)):
        m[key] = _vec(cfg, "mpc", key, n).tolist()
    for key in ("Q", "R", "S"):
        if min(m[key]) < 0:
            raise ConfigError(f"mpc.{key} must be positive semidefinite")
    for lo, hi in (("u_min", "u_max"), ("du_min", "du_max")):
        if np.any(np.array(m[lo]) > np.array(m[hi])):
            raise ConfigError(f"bounds out of order: mpc.{lo} > mpc.{hi}")
    for key in ("regularization", "tol_kkt", "tol_feas"):
        m[key] = num("mpc", key)
    m["max_iter"] = num("mpc", "max_iter", int)
    if m["discretization"] not in ("euler", "zoh"):
        raise ConfigError("mpc.discretization must be 'euler' or 'zoh'")

    cfg["road"]["w_lane"] = num("road", "w_lane")
    if cfg["road"]["w_lane"] <= 0:
        raise ConfigError("road.w_lane must be positive")
    for key in ("l_f", "l_r", "l_veh", "w_veh"):
        cfg["vehicle"][key] = num("vehicle", key)

    c = cfg["constraints"]
    for key in ("eps_safe", "t_headway", "beta", "d_far_factor", "eps_anchor"):
        c[key] = num("constraints", key)
    if not 0.0 < c["beta"] < 1.0:
        raise ConfigError("beta out of (0,1)")
    if c["eps_safe"] < 0 or c["t_headway"] < 0:
        raise ConfigError("constraints.eps_safe and t_headway must be non-negative")
    if c["margin_switch"] is not None:
        c["margin_switch"] = num("constraints", "margin_switch")
    c["literal_pairing"] = bool(c["literal_pairing"])
    c["predictive_switch"] = bool(c["predictive_switch"])
    if c["max_slope"] is not None:
        c["max_slope"] = num("constraints", "max_slope")
        if c["max_slope"] <= 0:
            raise ConfigError("constraints.max_slope must be positive")

    g = cfg["gp"]
    g["M"] = num("gp", "M", int)
    if g["M"] < 2:
        raise ConfigError("gp.M must be at least 2")
    g["capacity"] = num("gp", "capacity", int)
    if g["capacity"] < 1:
        raise ConfigError("gp.capacity must be at least 1")
    g["sigma2"] = _vec(cfg, "gp", "sigma2", OUTPUT_DIM).tolist()
    ls = np.asarray(g["lengthscales"], float)
    if ls.shape == (INPUT_DIM,):
        ls = np.tile(ls, (OUTPUT_DIM, 1))
    if ls.shape != (OUTPUT_DIM, INPUT_DIM):
        raise ConfigError(f"gp.lengthscales must have {INPUT_DIM} entries or {OUTPUT_DIM} rows of them")
    if ls.min() <= 0 or min(g["sigma2"]) <= 0:
        raise ConfigError("gp.lengthscales and gp.sigma2 must be positive")
    g["lengthscales"] = ls.tolist()
    g["lengthscale_scale"] = num("gp", "lengthscale_scale")
    g["noise2"] = num("gp", "noise2")
    if g["noise2"] < 0 or g["lengthscale_scale"] <= 0:
        raise ConfigError("gp.noise2 must be >= 0 and gp.lengthscale_scale > 0")
    g["grid_search"] = bool(g["grid_search"])
    if g["initial_dataset"] is not None:
        g["initial_dataset"] = str(g["initial_dataset"])

    t = cfg["tv"]
    t["initial"] = _vec(cfg, "tv", "initial", 4).tolist()
    K = np.asarray(t["K"], float)
    if K.shape != (2, 4):
        raise ConfigError("tv.K must be a 2x4 matrix")
    t["K"] = K.tolist()
    t["u_min"] = _vec(cfg, "tv", "u_min", 2).tolist()
    t["u_max"] = _vec(cfg, "tv", "u_max", 2).tolist()
    if np.any(np.array(t["u_min"]) > np.array(t["u_max"])):
        raise ConfigError("bounds out of order: tv.u_min > tv.u_max")
    t["commit_threshold"] = num("tv", "commit_threshold")

    e = cfg["ev"]
    e["initial"] = _vec(cfg, "ev", "initial", 4).tolist()
    if e["initial"][3] < 0:
        raise ConfigError("ev.initial speed must be non-negative")
    for key in ("v_ref", "d_ref", "phi_ref"):
        e[key] = num("ev", key)

    seeds = cfg["seeds"]
    if isinstance(seeds, int):
        seeds = [seeds]
    try:
        cfg["seeds"] = [int(v) for v in seeds]
    except (TypeError, ValueError):
        raise ConfigError("seeds must be a list of integers") from None
    if any(v < 0 for v in cfg["seeds"]):
        raise ConfigError("seeds must be non-negative")
    cfg["name"] = str(cfg["name"])
    # construct the typed views once so geometry/road invariants surface here
    try:
        ScenarioConfig(cfg).smpc_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


class ScenarioConfig:
    """Validated configuration tree plus typed accessors for each subsystem."""

    def __init__(self, tree: dict):
        self.tree = tree

    def __getitem__(self, key):
        return self.tree[key]

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and dump_config(self) == dump_config(other)

    @property
    def T(self) -> float:
        return self.tree["sim"]["T"]

    @property
    def N(self) -> int:
        return self.tree["mpc"]["N"]

    def geometry(self) -> VehicleGeometry:
        return VehicleGeometry(**self.tree["vehicle"])

    def road(self) -> RoadBounds:
        half = self.tree["road"]["w_lane"] / 2.0
        return RoadBounds(-half, half)

    def kernel_params(self) -> tuple:
        g = self.tree["gp"]
        scale = g["lengthscale_scale"]
        return tuple(KernelParams(g["sigma2"][d], tuple(np.asarray(g["lengthscales"][d]) * scale), g["noise2"])
                     for d in range(OUTPUT_DIM))

    def smpc_config(self) -> SmpcConfig:
        m, c, e = self.tree["mpc"], self.tree["constraints"], self.tree["ev"]
        geom = self.geometry()
        margin = c["margin_switch"]
        if margin is None:
            margin = geom.w_veh / 2.0 + c["eps_safe"]
        return SmpcConfig(
            N=m["N"],
            T=self.T,
            weights=MpcWeights(np.diag(m["Q"]), np.diag(m["R"]), np.diag(m["S"])),
            bounds=InputBounds(np.array(m["u_min"]), np.array(m["u_max"]),
                               np.array(m["du_min"]), np.array(m["du_max"])),
            road=self.road(),
            geom=geom,
            eps_safe=c["eps_safe"],
            t_headway=c["t_headway"],
            risk=RiskParams(c["beta"]),
            thresholds=CaseThresholds(c["d_far_factor"], margin),
            eps_anchor=c["eps_anchor"],
            literal_pairing=c["literal_pairing"],
            reg=m["regularization"],
            tolerances=QpTolerances(m["tol_kkt"], m["tol_feas"], m["max_iter"]),
            ref_state=np.array([0.0, e["d_ref"], e["phi_ref"], e["v_ref"]]),
            discretization=m["discretization"],
            max_slope=np.inf if c["max_slope"] is None else c["max_slope"],
            predictive_switch=c["predictive_switch"],
        )

    def with_value(self, dotted: str, value) -> "ScenarioConfig":
        tree = copy.deepcopy(self.tree)
        section, key = dotted.split(".") if "." in dotted else SWEEPABLE[dotted]
        tree[section][key] = value
        return config_from_dict(tree)


def config_from_dict(tree: dict) -> ScenarioConfig:
    return ScenarioConfig(_normalize(_merge(DEFAULTS, tree)))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from None
    cfg = config_from_dict(tree or {})
    init = cfg.tree["gp"]["initial_dataset"]
    if init is not None and not Path(init).is_absolute():
        cfg.tree["gp"]["initial_dataset"] = str((path.parent / init).resolve())
    return cfg


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.tree, sort_keys=True, default_flow_style=None)


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def shipped_scenario(name: str = "paper_scenario") -> Path:
    return Path(str(resources.files("gpsmpc") / "scenarios" / f"{name}.yaml"))
