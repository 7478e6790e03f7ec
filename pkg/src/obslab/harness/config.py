"""Scenario configuration: JSON loading, schema validation, defaults."""

import copy
from importlib import resources
import json
import math
import os

import jsonschema

from obslab import theory

DEFAULTS = {
    "name": "scenario",
    "L": 1.0,
    "gamma": 0.5,
    "centers": {"kind": "lattice", "policy": "nearest", "spacing_factor": 2.0},
    "grid": {"n": "per_eps", "resolution_guard": 8.0},
    "measure": {"delta": True, "defect": True, "spectra": True, "transfer": True,
                "extension_norm": False},
    "spectra": {"count": 30, "window_fraction": 0.9, "cluster_gap": 1e-6},
    "heat_times": [],
    "tolerances": {"cg": 1e-9, "norm": 1e-6, "eig": 1e-10, "certify_slack": 0.05,
                   "monotone_slack": 1e-8, "baseline": 1e-7},
    "power_iteration": {"restarts": 3, "max_iter": 500},
    "checks": {},
    "solver": "auto",
    "seed": 0,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def config_schema():
    text = resources.files("obslab").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(raw):
    """Check against the published schema and the cross-field rules."""
    try:
        jsonschema.validate(raw, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    n_eps = len(cfg["eps"])
    for key in ("eps_plus", "eps_tilde"):
        if key in cfg and len(cfg[key]) != n_eps:
            raise ConfigError(f"{key}: expected {n_eps} entries, one per eps")
    if "values" in cfg["eta"] and len(cfg["eta"]["values"]) != n_eps:
        raise ConfigError(f"eta/values: expected {n_eps} entries, one per eps")
    if cfg["scenario"] == "dir_solid" and "solid" not in cfg:
        raise ConfigError("solid: required for the dir_solid scenario")
    if "solid" in cfg:
        s = cfg["solid"]
        for key in ("lo", "hi", "center"):
            if key in s and len(s[key]) != cfg["m"]:
                raise ConfigError(f"solid/{key}: expected {cfg['m']} coordinates")
    centers = cfg["centers"]
    if centers.get("kind") == "points":
        if "points" not in centers or "sep" not in centers:
            raise ConfigError("centers: 'points' kind needs 'points' and 'sep'")
        if any(len(p) != cfg["m"] for p in centers["points"]):
            raise ConfigError(f"centers/points: expected {cfg['m']} coordinates per point")
    for i, e in enumerate(cfg["eps"]):
        if not e < cfg["L"] / 2:
            raise ConfigError(f"eps/{i}: {e} is not below L/2")
        if i and not e < cfg["eps"][i - 1]:
            raise ConfigError(f"eps/{i}: the eps list must be strictly decreasing")
    if cfg["scenario"] == "dir_solid":
        alpha = eta_exponent(cfg)
        lowest = theory.solid_gamma_window(cfg["m"], alpha)
        if lowest is None or cfg["gamma"] < lowest * (1 - 1e-12):
            window = "empty" if lowest is None else f"[{lowest:.6g}, 1)"
            raise ConfigError(f"gamma: {cfg['gamma']} outside the admissible window {window} "
                              f"for alpha={alpha:.6g}")
    if cfg["spectra"].get("window_gap_after", 0) > cfg["spectra"]["count"]:
        raise ConfigError("spectra/window_gap_after: exceeds spectra/count")
    return cfg


def load_config(source):
    """Load from a path, a JSON string or a dict and return the merged config."""
    if isinstance(source, dict):
        raw = source
    else:
        text = source
        if os.path.exists(str(source)):
            with open(source) as fh:
                text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a JSON object")
    return validate_config(raw)


def eta_values(cfg):
    if "values" in cfg["eta"]:
        return [float(v) for v in cfg["eta"]["values"]]
    alpha = cfg["eta"]["alpha"]
    scale = cfg["eta"].get("scale", 1.0)
    return [scale * e ** alpha for e in cfg["eps"]]


def eta_exponent(cfg):
    """alpha of ``eta ~ eps^alpha``: given, or fitted on the explicit schedule."""
    if "alpha" in cfg["eta"]:
        return float(cfg["eta"]["alpha"])
    eps, eta = cfg["eps"], eta_values(cfg)
    if len(eps) < 2:
        return math.log(eta[0]) / math.log(eps[0])
    xs = [math.log(e) for e in eps]
    ys = [math.log(v) for v in eta]
    mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
    sxx = sum((x - mx) ** 2 for x in xs)
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx
