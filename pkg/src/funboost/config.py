"""Run configuration: one YAML file per run, validated key by key.

Every error names the offending key, e.g. ``hyper.mstop`` or
``model.terms.mu[2].kind``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping

import yaml

from .boost import Hyper
from .data import DatasetSchema
from .errors import ConfigError
from .model import ModelSpec
from .resample import METHODS

TOP_KEYS = {"command", "data", "schema", "model", "hyper", "resampling", "output",
            "simulate", "evaluate", "predict", "bands"}
HYPER_KEYS = {"step_length", "mstop", "method", "offset", "loss_weights", "seed"}
RESAMPLING_KEYS = {"method", "folds", "seed"}
SIMULATE_KEYS = {"scenario", "N", "G", "level", "sigma2_mu", "sigma2_sigma", "seed"}
BANDS_KEYS = {"n_boot", "level", "reselect"}


def _section(d: Mapping, key: str, allowed: set) -> dict:
    sec = d.get(key) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"{key}: expected a mapping, got {type(sec).__name__}")
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"{key}: unknown key(s) {sorted(extra)}; allowed {sorted(allowed)}")
    return dict(sec)


def _int(sec, key, where, default, lo=None):
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}.{key}: must be >= {lo}, got {v}")
    return int(v)


def _float(sec, key, where, default):
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


@dataclass
class RunConfig:
    command: str | None = None
    data: str | None = None
    schema: DatasetSchema = field(default_factory=DatasetSchema)
    model: ModelSpec | None = None
    hyper: Hyper = field(default_factory=Hyper)
    resampling: dict = field(default_factory=lambda: {"method": "bootstrap", "folds": 10, "seed": 0})
    output: str | None = None
    simulate: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    predict: dict = field(default_factory=dict)
    bands: dict | None = None
    base_dir: str = "."

    def path(self, p: str | None) -> str | None:
        """Resolve a path relative to the config file."""
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))


def parse_config(d: Mapping | None, base_dir: str = ".") -> RunConfig:
    """Validate a configuration tree (already parsed from YAML)."""
    d = d or {}
    if not isinstance(d, Mapping):
        raise ConfigError("config: top level must be a mapping")
    extra = set(d) - TOP_KEYS
    if extra:
        raise ConfigError(f"config: unknown key(s) {sorted(extra)}; allowed {sorted(TOP_KEYS)}")
    cfg = RunConfig(base_dir=base_dir)
    cfg.command = d.get("command")
    for key in ("data", "output"):
        v = d.get(key)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"{key}: expected a path string, got {v!r}")
        setattr(cfg, key, v)
    sch = d.get("schema")
    if sch is not None and not isinstance(sch, Mapping):
        raise ConfigError("schema: expected a mapping")
    extra = set(sch or {}) - {"response", "categorical"}
    if extra:
        raise ConfigError(f"schema: unknown key(s) {sorted(extra)}")
    cfg.schema = DatasetSchema.from_dict(sch)
    if d.get("model") is not None:
        m = d["model"]
        if not isinstance(m, Mapping):
            raise ConfigError("model: expected a mapping")
        extra = set(m) - {"family", "terms", "preprocess"}
        if extra:
            raise ConfigError(f"model: unknown key(s) {sorted(extra)}")
        cfg.model = ModelSpec.from_dict(m)
        from .families import get_family

        try:
            get_family(cfg.model.family)
        except ConfigError as exc:
            raise ConfigError(f"model.family: {exc}") from None
    h = _section(d, "hyper", HYPER_KEYS)
    try:
        cfg.hyper = Hyper(**h)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"hyper: {exc}") from None
    r = _section(d, "resampling", RESAMPLING_KEYS)
    method = r.get("method", "bootstrap")
    if method not in METHODS:
        raise ConfigError(f"resampling.method: must be one of {METHODS}, got {method!r}")
    cfg.resampling = {"method": method, "folds": _int(r, "folds", "resampling", 10, lo=2),
                      "seed": _int(r, "seed", "resampling", 0, lo=0)}
    s = _section(d, "simulate", SIMULATE_KEYS)
    if s:
        cfg.simulate = {
            "scenario": s.get("scenario", "continuous"),
            "N": _int(s, "N", "simulate", 100, lo=2),
            "G": _int(s, "G", "simulate", 100, lo=2),
            "level": s.get("level", "independent"),
            "sigma2_mu": _float(s, "sigma2_mu", "simulate", 1.0),
            "sigma2_sigma": _float(s, "sigma2_sigma", "simulate", 1.0),
            "seed": _int(s, "seed", "simulate", 0, lo=0),
        }
    cfg.evaluate = _section(d, "evaluate", {"model", "truth", "mstop"})
    cfg.predict = _section(d, "predict", {"model", "mstop"})
    if d.get("bands") is not None:
        b = _section(d, "bands", BANDS_KEYS)
        cfg.bands = {"n_boot": _int(b, "n_boot", "bands", 50, lo=50),
                     "level": _float(b, "level", "bands", 0.95),
                     "reselect": bool(b.get("reselect", True))}
        if not 0 < cfg.bands["level"] < 1:
            raise ConfigError(f"bands.level: must lie in (0, 1), got {cfg.bands['level']}")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            tree = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"--config: {path} is not valid YAML: {exc}") from None
    return parse_config(tree, os.path.dirname(os.path.abspath(path)))


__all__ = ["RunConfig", "parse_config", "load_config"]
