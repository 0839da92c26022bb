"""Experiment configuration: a versioned TOML file with nested sections.

Schema (version 1); every key is optional and falls back to ``DEFAULTS``::

    version = 1
    seed = 0

    [model]     hidden, activation, likelihood, sigma, learn_sigma, num_classes
    [prior]     mean, variance
    [rule]      tag, bandwidth, median_M, kernel, kernel_value, step_size,
                optimizer, beta1, beta2, eps_opt, gfsf_ridge, num_prior_samples
    [training]  particles, epochs, batch_size
    [bound]     xi, c, psi_constant
    [data]      kind ("toy" | "csv" | "synthetic"), path, target_column,
                test_fraction, splits, standardize, n
    [jensen]    gfsf_eps, eps_row
    [grid]      low, high, points, draws_per_particle
    [bandit]    steps, num_actions, context_dim, noise_std, retrain_every,
                retrain_steps, hidden, seeds
"""

from __future__ import annotations

import copy

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .. import jensen, models
from ..pacbayes import BoundConfig
from ..updates import Kernel, UpdateRule

CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "model": {
        "hidden": [50],
        "activation": "relu",
        "likelihood": "gaussian",
        "sigma": 1.0,
        "learn_sigma": True,
        "num_classes": 2,
    },
    "prior": {"mean": 0.0, "variance": 1.0},
    "rule": {
        "tag": "var",
        "bandwidth": "h",
        "median_M": None,
        "kernel": "median_trick",
        "kernel_value": None,
        "step_size": 0.004,
        "optimizer": "adam",
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_opt": 1e-8,
        "gfsf_ridge": 1e-2,
        "num_prior_samples": 100,
    },
    "training": {"particles": 20, "epochs": 500, "batch_size": 100},
    "bound": {"xi": 0.05, "c": 1.0, "psi_constant": 0.0},
    "data": {
        "kind": "synthetic",
        "path": None,
        "target_column": None,
        "test_fraction": 0.1,
        "splits": 1,
        "standardize": True,
        "n": 20,
    },
    "jensen": {"gfsf_eps": None, "eps_row": 0.5},
    "grid": {"low": -0.4, "high": 1.4, "points": 181, "draws_per_particle": 200},
    "bandit": {
        "steps": 500,
        "num_actions": 4,
        "context_dim": 4,
        "noise_std": 0.5,
        "retrain_every": 50,
        "retrain_steps": 100,
        "hidden": [],
        "seeds": 10,
    },
}

# Presets matching the published protocols.
TOY = {
    "model": {"hidden": [50, 50], "sigma": 0.2, "learn_sigma": False},
    "rule": {"step_size": 0.001},
    "training": {"particles": 50, "epochs": 2000, "batch_size": None},
    "data": {"kind": "toy", "n": 20, "standardize": False},
}
BOSTON = {
    "model": {"hidden": [50], "learn_sigma": True},
    "rule": {"step_size": 0.004},
    "training": {"particles": 20, "epochs": 500, "batch_size": 100},
    "data": {"kind": "csv", "target_column": "MEDV", "splits": 20, "test_fraction": 0.1},
}


class ConfigError(ValueError):
    pass


def merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg):
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for section, keys in DEFAULTS.items():
        if isinstance(keys, dict):
            extra = set(cfg.get(section, {})) - set(keys)
            if extra:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg['version']}")
    return cfg


def load_config(path=None, overrides=None, preset=None):
    """Defaults, then a preset, then the file, then explicit overrides."""
    cfg = merge(DEFAULTS, preset)
    if path is not None:
        with open(path, "rb") as fh:
            try:
                cfg = merge(cfg, tomllib.load(fh))
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
    return validate(merge(cfg, overrides))


def model_spec(cfg, input_dim, output_dim=None):
    m = cfg["model"]
    if output_dim is None:
        output_dim = 1 if m["likelihood"] == "gaussian" else m["num_classes"]
    return models.ModelSpec(
        input_dim=input_dim,
        output_dim=output_dim,
        hidden=tuple(m["hidden"]),
        activation=m["activation"],
        likelihood=m["likelihood"],
        sigma=m["sigma"],
        learn_sigma=m["learn_sigma"] and m["likelihood"] == "gaussian",
    )


def prior(cfg):
    return models.Prior(cfg["prior"]["mean"], cfg["prior"]["variance"])


def update_rule(cfg):
    r = cfg["rule"]
    kernel = Kernel(r["kernel"], r["kernel_value"])
    return UpdateRule(
        tag=r["tag"],
        bandwidth_kind=jensen.BandwidthKind(r["bandwidth"], r["median_M"]),
        kernel=kernel,
        step_size=r["step_size"],
        optimizer=r["optimizer"],
        beta1=r["beta1"],
        beta2=r["beta2"],
        eps_opt=r["eps_opt"],
        gfsf_ridge=r["gfsf_ridge"],
        num_prior_samples=r["num_prior_samples"],
    )


def bound_config(cfg):
    b = cfg["bound"]
    return BoundConfig(b["xi"], b["c"], b["psi_constant"])
