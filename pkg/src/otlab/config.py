"""Experiment descriptions (TOML or JSON) and their conversion into solver objects.

A config is a nested mapping::

    [grid]      a, b, n
    [potential] kind = "quadratic" | "power" | "linear" | "table", ...
    [cost]      transport cost h (see ``costs.make_profile``)
    [fisher_H]  Fisher weight H
    [young_L]   Young function L
    [sigma], [omega]   moduli (see ``moduli.make_modulus``)
    [initial]   initial measure (see ``build_measure``)
    [flow]      n_steps, [flow.solver] with JkoConfig fields
    checks = ["theorem", "simpler", "moduli"]

Optional tables used by individual subcommands: ``[ppower]``, ``[criterion]``,
``[transport]``, ``[five_gradients]``, ``[lsi]``, ``[theta]`` and ``[[triples]]``.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .costs import CostSpecError, CostSystem, RadialProfile, make_profile
from .grid import Grid, GridError, GridMeasure, InvalidPotentialError, Potential, make_gibbs
from .jko import JkoConfig, JkoConfigError
from .moduli import Modulus, ModulusSpecError, make_modulus


class ConfigError(ValueError):
    pass


SPEC_ERRORS = (ConfigError, CostSpecError, ModulusSpecError, GridError, InvalidPotentialError,
               JkoConfigError, KeyError, TypeError)


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def parse_scalar(text: str) -> Any:
    """``"0.5"`` -> 0.5, ``"true"`` -> True, anything else stays a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``cfg[a][b]... = value`` for ``dotted = "a.b..."``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a table")
    node[keys[-1]] = value
    return out


def require(cfg: Mapping, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where} is missing required field '{key}'")
    return cfg[key]


def build_grid(spec: Mapping) -> Grid:
    return Grid(float(require(spec, "a", "grid")), float(require(spec, "b", "grid")),
                int(require(spec, "n", "grid")))


def build_measure(spec: Mapping, grid: Grid, V: Optional[Potential] = None,
                  strict: bool = True) -> GridMeasure:
    """Measure from a description.

    Kinds: ``gibbs`` (``e^-V``), ``gaussian{center, width}``,
    ``power_bump{center, p, width}`` (``e^{-|x-c|^p/(p w^p)}``),
    ``tilt{t}`` (``e^{-V + t x}``), ``uniform``, ``indicator{lo, hi}``
    (needs ``strict = false``) and ``table{values}``.
    """
    x = grid.nodes
    kind = require(spec, "kind", "measure")
    if kind == "gibbs":
        if V is None:
            raise ConfigError("gibbs measure needs a potential")
        rho = np.exp(-V.values)
    elif kind == "gaussian":
        c, w = float(spec.get("center", 0.0)), float(spec.get("width", 1.0))
        rho = np.exp(-0.5 * ((x - c) / w) ** 2)
    elif kind == "power_bump":
        c, p, w = float(spec.get("center", 0.0)), float(spec["p"]), float(spec.get("width", 1.0))
        rho = np.exp(-np.abs((x - c) / w) ** p / p)
    elif kind == "tilt":
        if V is None:
            raise ConfigError("tilt measure needs a potential")
        rho = np.exp(-(V.values - V.values.min()) + float(spec["t"]) * (x - x.mean()))
    elif kind == "uniform":
        rho = np.ones_like(x)
    elif kind == "indicator":
        lo, hi = float(spec["lo"]), float(spec["hi"])
        rho = ((x >= lo) & (x <= hi)).astype(float)
    elif kind == "table":
        rho = np.asarray(spec["values"], dtype=float)
    else:
        raise ConfigError(f"unknown measure kind {kind!r}")
    return GridMeasure(grid, rho, strict=strict)


def jko_config(spec: Optional[Mapping]) -> JkoConfig:
    spec = dict(spec or {})
    known = {f.name for f in fields(JkoConfig)}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(f"unknown solver fields {sorted(unknown)}")
    return JkoConfig(**spec)


@dataclass
class ExperimentConfig:
    """Parsed experiment with every referenced description already built."""

    raw: dict
    grid: Grid
    V: Potential
    eta: GridMeasure
    h: RadialProfile
    H: Optional[RadialProfile] = None
    L: Optional[RadialProfile] = None
    sigma: Optional[Modulus] = None
    omega: Optional[Modulus] = None

    @classmethod
    def from_dict(cls, raw: Mapping, need=("grid", "potential", "cost")) -> "ExperimentConfig":
        for key in need:
            require(raw, key)
        grid = build_grid(raw["grid"])
        V, eta = make_gibbs(dict(raw["potential"]), grid)
        h = make_profile(raw["cost"])
        H = make_profile(raw["fisher_H"]) if "fisher_H" in raw else None
        L = make_profile(raw["young_L"]) if "young_L" in raw else None
        sigma = make_modulus(raw["sigma"], "convexity") if "sigma" in raw else None
        omega = make_modulus(raw["omega"], "monotonicity") if "omega" in raw else None
        return cls(dict(raw), grid, V, eta, h, H, L, sigma, omega)

    @property
    def name(self) -> str:
        return str(self.raw.get("name", "experiment"))

    @property
    def checks(self) -> list:
        return list(self.raw.get("checks", ["theorem"]))

    def system(self) -> CostSystem:
        for key, val in (("fisher_H", self.H), ("young_L", self.L)):
            if val is None:
                raise ConfigError(f"config is missing required field '{key}'")
        return CostSystem(self.h, self.H, self.L)

    def moduli(self) -> tuple[Modulus, Modulus]:
        for key, val in (("sigma", self.sigma), ("omega", self.omega)):
            if val is None:
                raise ConfigError(f"config is missing required field '{key}'")
        return self.sigma, self.omega

    def initial(self) -> GridMeasure:
        return build_measure(require(self.raw, "initial"), self.grid, self.V)

    def flow_settings(self) -> tuple[int, JkoConfig]:
        flow = require(self.raw, "flow")
        n_steps = int(require(flow, "n_steps", "flow"))
        if n_steps < 1:
            raise ConfigError(f"flow.n_steps must be at least 1, got {n_steps}")
        return n_steps, jko_config(flow.get("solver"))
