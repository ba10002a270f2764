"""Scenario documents (TOML) and the initial-data catalog.

See ``scenarios/SCHEMA.md`` for the key reference. Every error names the
offending key path, e.g. ``params.eps: must be >= 0, got -1``.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import State, StepperConfig, ntr_quasi_equilibrium
from .equilibrium import SimParams, solve_equilibrium
from .meshfield import POTENTIALS, PotentialPair, build_grid


class ConfigError(ValueError):
    pass


# key -> (default, kind); kind drives validation
_PARAMS = {
    "tau_n": (1.0, "pos"), "tau_p": (1.0, "pos"),
    "n0": (1.0, "pos"), "p0": (1.0, "pos"),
    "eps": (0.0, "nonneg"), "eps0": (None, "nonneg"),
}
_GRID = {"n_cells": (200, "cells")}
_STEPPER = {
    "dt": (1e-3, "pos"), "t_end": (20.0, "nonneg"), "output_every": (10, "count"),
    "linear_tol": (1e-12, "pos"), "max_picard": (100, "count"),
}
_POTENTIAL = {
    "family": ("constant", "potential"), "amplitude": (0.0, "real"),
    "family_p": (None, "potential"), "amplitude_p": (None, "real"),
}
_SWEEP = {"eps": (None, "eps_list"), "threads": (1, "count")}
_TOP = {"name": (None, "str"), "seed": (0, "int"), "output": (None, "str")}

# initial-data families and their keys
_INITIAL = {
    "constant": {"n": (1.0, "nonneg"), "p": (1.0, "nonneg")},
    "step": {"n_left": (1.5, "nonneg"), "n_right": (0.5, "nonneg"),
             "p_left": (0.5, "nonneg"), "p_right": (1.5, "nonneg"),
             "x_step": (0.5, "unit")},
    "gaussian_bump": {"base_n": (1.0, "nonneg"), "base_p": (1.0, "nonneg"),
                      "amp_n": (0.8, "nonneg"), "amp_p": (0.8, "nonneg"),
                      "center_n": (0.3, "unit"), "center_p": (0.7, "unit"),
                      "width": (0.05, "pos")},
    "zero_patch": {"level_n": (1.0, "nonneg"), "level_p": (1.0, "nonneg"),
                   "patch": ([0.4, 0.6], "interval"),
                   "ntr_low": ([0.0, 0.2], "interval"),
                   "ntr_high": ([0.8, 1.0], "interval")},
    "equilibrium": {"charge": (0.0, "real")},
}
# ntr: "quasi_equilibrium" (default, the occupancy balancing both reactions),
# or a constant in [0, 1]; zero_patch overrides it on its two subintervals
_INITIAL_COMMON = {"family": ("gaussian_bump", "initial"),
                   "ntr": ("quasi_equilibrium", "ntr")}


def _check(path, value, kind):
    def fail(msg):
        raise ConfigError(f"{path}: {msg}, got {value!r}")

    if kind in ("pos", "nonneg", "real", "unit"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("must be a number")
        value = float(value)
        if not math.isfinite(value):
            fail("must be finite")
        if kind == "pos" and not value > 0:
            fail("must be > 0")
        if kind == "nonneg" and not value >= 0:
            fail("must be >= 0")
        if kind == "unit" and not 0 <= value <= 1:
            fail("must lie in [0, 1]")
        return value
    if kind in ("int", "count", "cells"):
        if isinstance(value, bool) or not isinstance(value, int):
            fail("must be an integer")
        if kind == "count" and value < 1:
            fail("must be >= 1")
        if kind == "cells" and value < 2:
            fail("must be >= 2")
        return value
    if kind == "str":
        if not isinstance(value, str):
            fail("must be a string")
        return value
    if kind == "potential":
        if value not in POTENTIALS:
            fail(f"unknown potential family; choose from {sorted(POTENTIALS)}")
        return value
    if kind == "initial":
        if value not in _INITIAL:
            fail(f"unknown initial family; choose from {sorted(_INITIAL)}")
        return value
    if kind == "interval":
        if (not isinstance(value, list) or len(value) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in value)
                or not 0 <= value[0] <= value[1] <= 1):
            fail("must be [lo, hi] with 0 <= lo <= hi <= 1")
        return (float(value[0]), float(value[1]))
    if kind == "eps_list":
        if not isinstance(value, list) or not value:
            fail("must be a non-empty list of numbers")
        return tuple(_check(f"{path}[{i}]", v, "nonneg") for i, v in enumerate(value))
    if kind == "ntr":
        if value == "quasi_equilibrium":
            return value
        return _check(path, value, "unit")
    raise AssertionError(kind)


def _section(doc, name, schema, required=False):
    raw = doc.get(name)
    if raw is None:
        if required:
            raise ConfigError(f"{name}: missing required section")
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: must be a table")
    return _fill(name, raw, schema)


def _fill(prefix, raw, schema):
    def path(key):
        return f"{prefix}.{key}" if prefix else key

    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{path(unknown[0])}: unknown key")
    out = {}
    for key, (default, kind) in schema.items():
        if key in raw:
            out[key] = _check(path(key), raw[key], kind)
        else:
            out[key] = default
    return out


@dataclass(frozen=True)
class InitialSpec:
    family: str
    ntr: object
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    params: dict
    n_cells: int
    stepper: StepperConfig
    initial: InitialSpec
    potential: dict
    eps_sweep: tuple
    seed: int = 0
    output: str | None = None
    threads: int = 1

    def potentials(self):
        grid = build_grid(self.n_cells)
        pot = self.potential
        return PotentialPair.from_family(grid, pot["family"], pot["amplitude"],
                                         pot["family_p"], pot["amplitude_p"])

    def build_params(self, eps=None, potentials=None):
        eps = self.params["eps"] if eps is None else float(eps)
        pot = self.potentials() if potentials is None else potentials
        prm = self.params
        return SimParams(pot, prm["tau_n"], prm["tau_p"], prm["n0"], prm["p0"],
                         eps, prm["eps0"])

    def initial_state(self, params):
        return initial_state(self.initial, params)


def parse_config(text, name=None):
    """Validate a TOML scenario document; defaults fill every missing key."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed document: {exc}") from None

    sections = {"params", "grid", "stepper", "initial", "potential", "sweep"}
    top = _fill("", {k: v for k, v in doc.items() if k not in sections}, _TOP)

    params = _section(doc, "params", _PARAMS, required=True)
    grid = _section(doc, "grid", _GRID)
    stepper = _section(doc, "stepper", _STEPPER)
    potential = _section(doc, "potential", _POTENTIAL)
    sweep = _section(doc, "sweep", _SWEEP)

    raw_init = doc.get("initial", {})
    if not isinstance(raw_init, dict):
        raise ConfigError("initial: must be a table")
    family = _check("initial.family", raw_init.get("family", "gaussian_bump"), "initial")
    init = _fill("initial", raw_init, {**_INITIAL_COMMON, **_INITIAL[family]})
    initial = InitialSpec(family, init.pop("ntr"),
                          {k: v for k, v in init.items() if k != "family"})

    eps_sweep = sweep["eps"] if sweep["eps"] is not None else (params["eps"],)
    eps_max = max(eps_sweep + (params["eps"],))
    if params["eps0"] is None:
        params["eps0"] = eps_max if eps_max > 0 else 1.0
    if params["eps"] > params["eps0"]:
        raise ConfigError(f"params.eps: {params['eps']} exceeds params.eps0 = {params['eps0']}")
    for i, eps in enumerate(eps_sweep):
        if eps > params["eps0"]:
            raise ConfigError(f"sweep.eps[{i}]: {eps} exceeds params.eps0 = {params['eps0']}")

    try:
        stepper_cfg = StepperConfig(**stepper)
    except ValueError as exc:
        raise ConfigError(f"stepper: {exc}") from None

    return ScenarioConfig(
        name=top["name"] or name or "scenario",
        params=params,
        n_cells=grid["n_cells"],
        stepper=stepper_cfg,
        initial=initial,
        potential=potential,
        eps_sweep=tuple(eps_sweep),
        seed=top["seed"],
        output=top["output"],
        threads=sweep["threads"],
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, name=path.stem)


def bundled_scenarios():
    """Paths of the scenario documents shipped with the package."""
    here = Path(__file__).resolve().parent / "scenarios"
    return sorted(here.glob("*.toml"))


# -- initial data -----------------------------------------------------------

def _in(x, interval):
    lo, hi = interval
    return (x >= lo) & (x <= hi)


def initial_state(spec, params):
    x = params.grid.centers
    opt = spec.options
    fam = spec.family
    if fam == "equilibrium":
        eq = solve_equilibrium(params, opt["charge"])
        ntr = np.full_like(x, eq.ntr_inf) if params.eps > 0 else None
        return State(0.0, eq.n_inf.copy(), eq.p_inf.copy(), ntr)
    if fam == "constant":
        n = np.full_like(x, opt["n"])
        p = np.full_like(x, opt["p"])
    elif fam == "step":
        left = x < opt["x_step"]
        n = np.where(left, opt["n_left"], opt["n_right"])
        p = np.where(left, opt["p_left"], opt["p_right"])
    elif fam == "gaussian_bump":
        def bump(center):
            return np.exp(-((x - center) ** 2) / (2.0 * opt["width"] ** 2))
        n = opt["base_n"] + opt["amp_n"] * bump(opt["center_n"])
        p = opt["base_p"] + opt["amp_p"] * bump(opt["center_p"])
    elif fam == "zero_patch":
        hole = _in(x, opt["patch"])
        n = np.where(hole, 0.0, opt["level_n"])
        p = np.where(hole, 0.0, opt["level_p"])
    else:
        raise ConfigError(f"initial.family: unknown family {fam!r}")

    if params.eps == 0:
        return State(0.0, n, p, None)
    if spec.ntr == "quasi_equilibrium":
        ntr = ntr_quasi_equilibrium(n, p, params)
    else:
        ntr = np.full_like(x, spec.ntr)
    if fam == "zero_patch":
        ntr = np.where(_in(x, opt["ntr_low"]), 0.0, ntr)
        ntr = np.where(_in(x, opt["ntr_high"]), 1.0, ntr)
    return State(0.0, n, p, ntr)
