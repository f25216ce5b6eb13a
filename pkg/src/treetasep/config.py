"""Versioned JSON experiment configuration.

Schema (version 1)::

    {
      "version": 1,
      "command": "simulate",
      "tree":   {"law": {"2": 1.0}, "seed": 0},
      "rates":  {"kind": "exponential", "d": 3},
      "lam": 1.0,
      "delta": 0.1,
      "seed": 1,
      "replicas": 1,
      "workers": 1,
      "stop": {"horizon": 10.0},
      "clock": "next_reaction",
      "out": "out",
      "format": "csv",
      "params": {}
    }

``rates.kind`` is one of constant, exponential, slowed (with ``g`` =
["exp", a] or ["power", q]), polynomial (with ``p``) or custom (with
``table``, a path to "parent child rate" lines).  ``stop`` holds exactly one
of ``horizon``, ``entries`` or ``crossings`` ([n, m]).  ``params`` keys
depend on the command; see ``PARAMS``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .engine import NEXT_REACTION, SHARED_STREAM, Crossings, Entries, Horizon, StopRule
from .rates import (DECAY_CLASSES, Constant, CustomTable, Exponential, Polynomial, RateError,
                    RateFamily, Slowed, read_rate_table)
from .tree import OffspringLaw, TreeError

VERSION = 1
COMMANDS = ("simulate", "disentangle", "current-window", "generation-window", "lpp",
            "couple", "equilibrium", "classify-rates", "bounds")
FORMATS = ("csv", "json", "svg")

PARAMS = {
    "simulate": {"points": 11},
    "disentangle": {"n": 16},
    "current-window": {"n": 64, "ell": None, "theta_n": None},
    "generation-window": {"t": 1000.0},
    "lpp": {"n": 5, "m": 5, "M_n": 5, "alpha": 1.0, "samples": 200},
    "couple": {"kind": "canonical", "lam2": 1.0, "T": 20.0},
    "equilibrium": {"depth": 2, "rho": 0.5, "functions": 200},
    "classify-rates": {"horizon": 6},
    "bounds": {"n": 100, "ell": None, "t": None},
}

TOP_KEYS = ("version", "command", "tree", "rates", "lam", "delta", "seed", "replicas",
            "workers", "stop", "clock", "out", "format", "params")
RATE_KEYS = ("kind", "d", "p", "g", "table", "decay_class", "r_sup")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


@dataclass
class ExperimentConfig:
    command: str
    law: dict = field(default_factory=lambda: {2: 1.0})
    tree_seed: int = 0
    rates: dict = field(default_factory=lambda: {"kind": "exponential", "d": 3})
    lam: float = 1.0
    delta: float = 0.1
    seed: int = 0
    replicas: int = 1
    workers: int = 1
    stop: dict = field(default_factory=lambda: {"horizon": 10.0})
    clock: str = NEXT_REACTION
    out: str = "out"
    format: str = "csv"
    params: dict = field(default_factory=dict)

    # derived objects
    def offspring_law(self) -> OffspringLaw:
        return OffspringLaw(self.law)

    def family(self) -> RateFamily:
        return build_family(self.rates, "rates")

    def stop_rule(self) -> StopRule:
        (k, v), = self.stop.items()
        if k == "horizon":
            return Horizon(v)
        if k == "entries":
            return Entries(v)
        return Crossings(*v)

    def param(self, key):
        return self.params.get(key, PARAMS[self.command][key])

    def to_dict(self) -> dict:
        return {
            "version": VERSION,
            "command": self.command,
            "tree": {"law": {str(k): v for k, v in sorted(self.law.items())}, "seed": self.tree_seed},
            "rates": dict(self.rates),
            "lam": self.lam,
            "delta": self.delta,
            "seed": self.seed,
            "replicas": self.replicas,
            "workers": self.workers,
            "stop": dict(self.stop),
            "clock": self.clock,
            "out": self.out,
            "format": self.format,
            "params": dict(sorted(self.params.items())),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, separators=(",", ":"))

    def hash(self) -> str:
        """Hash of the config without the output location."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def build_family(raw: dict, path: str = "rates") -> RateFamily:
    for k in raw:
        if k not in RATE_KEYS:
            raise ConfigError(f"{path}.{k}", "unknown key")
    kind = raw.get("kind")
    dc = raw.get("decay_class")
    if dc is not None and dc not in DECAY_CLASSES:
        raise ConfigError(f"{path}.decay_class", f"must be one of {DECAY_CLASSES}")
    extra = {} if dc is None else {"decay_class": dc}
    try:
        if kind == "constant":
            return Constant(**extra)
        if kind == "exponential":
            return Exponential(_req(raw, "d", path), **extra)
        if kind == "slowed":
            g = raw.get("g", ["exp", 2.0])
            if not (isinstance(g, (list, tuple)) and len(g) == 2):
                raise ConfigError(f"{path}.g", "expected [name, parameter]")
            return Slowed(_req(raw, "d", path), (g[0], g[1]), **extra)
        if kind == "polynomial":
            return Polynomial(_req(raw, "p", path), **extra)
        if kind == "custom":
            table = read_rate_table(_req(raw, "table", path))
            return CustomTable(table, dc, raw.get("r_sup"))
    except RateError as e:
        raise ConfigError(path, str(e)) from None
    raise ConfigError(f"{path}.kind", f"unknown rate family {kind!r}")


def _req(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}", "required")
    return d[key]


def _num(v, path, kind=float, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    v = kind(v)
    if positive and not v > 0:
        raise ConfigError(path, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(path, "must be non-negative")
    return v


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    raw = copy.deepcopy(raw)
    if raw.get("version") != VERSION:
        raise ConfigError("version", f"expected {VERSION}")
    for k in raw:
        if k not in TOP_KEYS:
            raise ConfigError(k, "unknown key")
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    cfg = ExperimentConfig(cmd)
    if "tree" in raw:
        t = raw["tree"]
        for k in t:
            if k not in ("law", "seed"):
                raise ConfigError(f"tree.{k}", "unknown key")
        if "law" in t:
            try:
                law = {int(k): _num(v, f"tree.law.{k}") for k, v in t["law"].items()}
            except ValueError as e:
                if isinstance(e, ConfigError):
                    raise
                raise ConfigError("tree.law", "offspring counts must be integers") from None
            try:
                OffspringLaw(law)
            except TreeError as e:
                raise ConfigError("tree.law", str(e)) from None
            cfg.law = law
        if "seed" in t:
            cfg.tree_seed = _num(t["seed"], "tree.seed", int, nonneg=True)
    if "rates" in raw:
        if not isinstance(raw["rates"], dict):
            raise ConfigError("rates", "expected an object")
        build_family(raw["rates"], "rates")
        cfg.rates = raw["rates"]
    for key, kw in (("lam", {"positive": True}), ("delta", {"positive": True})):
        if key in raw:
            setattr(cfg, key, _num(raw[key], key, **kw))
    if not cfg.delta < 1:
        raise ConfigError("delta", "must lie in (0, 1)")
    for key, kw in (("seed", {"nonneg": True}), ("replicas", {"positive": True}),
                    ("workers", {"positive": True})):
        if key in raw:
            setattr(cfg, key, _num(raw[key], key, int, **kw))
    if "stop" in raw:
        s = raw["stop"]
        if not isinstance(s, dict) or len(s) != 1:
            raise ConfigError("stop", "give exactly one of horizon, entries, crossings")
        (k, v), = s.items()
        if k == "horizon":
            v = _num(v, "stop.horizon", positive=True)
        elif k == "entries":
            v = _num(v, "stop.entries", int, positive=True)
        elif k == "crossings":
            if not (isinstance(v, list) and len(v) == 2):
                raise ConfigError("stop.crossings", "expected [n, m]")
            v = [_num(v[0], "stop.crossings[0]", int, positive=True),
                 _num(v[1], "stop.crossings[1]", int, nonneg=True)]
        else:
            raise ConfigError(f"stop.{k}", "unknown stop rule")
        cfg.stop = {k: v}
    if "clock" in raw:
        if raw["clock"] not in (NEXT_REACTION, SHARED_STREAM):
            raise ConfigError("clock", f"must be {NEXT_REACTION} or {SHARED_STREAM}")
        cfg.clock = raw["clock"]
    if "out" in raw:
        cfg.out = str(raw["out"])
    if "format" in raw:
        if raw["format"] not in FORMATS:
            raise ConfigError("format", f"must be one of {FORMATS}")
        cfg.format = raw["format"]
    if "params" in raw:
        p = raw["params"]
        if not isinstance(p, dict):
            raise ConfigError("params", "expected an object")
        for k in p:
            if k not in PARAMS[cmd]:
                raise ConfigError(f"params.{k}", f"unknown key for {cmd}")
        cfg.params = p
    return cfg


def parse_config(source) -> ExperimentConfig:
    """Parse a dict, a JSON string or a path to a JSON file."""
    if isinstance(source, dict):
        return from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON: {e}") from None
    return from_dict(raw)


def replica_seeds(seed: int, replicas: int) -> list[int]:
    """Independent 63-bit seeds for replicas 0..replicas-1 (SeedSequence spawning)."""
    import numpy as np
    kids = np.random.SeedSequence(seed).spawn(replicas)
    return [int(k.generate_state(1, np.uint64)[0] >> np.uint64(1)) for k in kids]
