"""Experiment configuration: JSON loading, defaults, validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigurationError
from .fokker_planck import make_initial_density
from .grid import SpatialGrid, TimeGrid
from .hamiltonian import MODELS, make_model

DEFAULTS = {
    "domain": {"kind": "truncated", "x_min": -5.0, "x_max": 5.0, "n": 400},
    "time": {"T": 1.0, "nt": 800},
    "model": {"name": "quadratic_mean_field", "params": {}},
    "g": {"name": "zero", "params": {}},
    "m0": {"kind": "gaussian", "mean": 0.0, "variance": 0.04},
    "betas": [0.3],
    "mode": "grid",
    "solver": {
        "coupler": "fictitious_play",
        "tol": 1e-6,
        "max_iter": 200,
        "damping": "harmonic",
        "R": 5.0,
        "scheme": "local",
    },
    "restriction": None,
    "refinement": False,
    "particles": {"N_list": [100], "seeds": [0], "dt": None, "betas": None, "record_every": 1},
    "fbsde": {"paths": 1000, "x0": 0.0},
    "policy": {"window": [3, 10], "compare_fictitious_play": False},
    "check": {},
    "reference_slopes": {},
    "output": {"dir": "out", "emit_svg": False},
    "workers": 1,
}

# Keys that never change results; left out of the hash so output bytes do not depend on them.
_UNHASHED = ("output", "workers")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    """Fill defaults and validate; returns a new dict."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if cfg["model"]["name"] not in MODELS:
        raise ConfigurationError(f"unknown model {cfg['model']['name']!r}")
    if cfg["mode"] not in ("grid", "exact"):
        raise ConfigurationError(f"mode must be 'grid' or 'exact', got {cfg['mode']!r}")
    if cfg["mode"] == "exact" and cfg["model"]["name"] != "quadratic_mean_field":
        raise ConfigurationError("exact-oracle mode needs the quadratic_mean_field model")
    betas = cfg["betas"]
    if not isinstance(betas, list) or not betas or any(not isinstance(b, (int, float)) or b < 0 for b in betas):
        raise ConfigurationError("betas must be a non-empty list of nonnegative numbers")
    if cfg["solver"]["coupler"] not in ("fictitious_play", "policy_iteration"):
        raise ConfigurationError(f"unknown coupler {cfg['solver']['coupler']!r}")
    if cfg["solver"]["scheme"] not in ("local", "classic"):
        raise ConfigurationError(f"unknown scheme {cfg['solver']['scheme']!r}")
    if cfg["g"]["name"] not in G_BUILDERS:
        raise ConfigurationError(f"unknown terminal cost {cfg['g']['name']!r}")
    r = cfg["restriction"]
    if r is not None and not (isinstance(r, dict) and r.get("x_lo", 0) < r.get("x_hi", 0)):
        raise ConfigurationError("restriction needs x_lo < x_hi")
    if int(cfg["workers"]) < 1:
        raise ConfigurationError("workers must be at least 1")
    # build once so that grid/model errors surface at load time
    build_grids(cfg)
    build_model(cfg)
    make_initial_density(cfg["m0"], build_grids(cfg)[0])
    return cfg


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_grids(cfg: dict, refine: int = 1) -> tuple[SpatialGrid, TimeGrid]:
    d, t = cfg["domain"], cfg["time"]
    try:
        grid = SpatialGrid(d["kind"], float(d["x_min"]), float(d["x_max"]), int(d["n"]) * refine)
        tgrid = TimeGrid(float(t["T"]), int(t["nt"]) * refine)
    except KeyError as exc:
        raise ConfigurationError(f"missing grid field {exc}") from None
    return grid, tgrid


def build_model(cfg: dict):
    try:
        return make_model(cfg["model"]["name"], **cfg["model"].get("params", {}))
    except TypeError as exc:
        raise ConfigurationError(f"bad model parameters: {exc}") from None


def _g_zero(_params):
    return None


def _g_quadratic(params):
    c = float(params.get("coef", 0.5))
    m = float(params.get("center", 0.0))
    return lambda x, rho_T: c * (x - m) ** 2


G_BUILDERS = {"zero": _g_zero, "quadratic": _g_quadratic}


def build_terminal(cfg: dict):
    return G_BUILDERS[cfg["g"]["name"]](cfg["g"].get("params", {}))
