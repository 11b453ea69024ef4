"""Experiment configuration: JSON parsing, validation and defaults.

A configuration is a JSON object::

    {
      "kind": "convergence",
      "grid": {"lower": [-3], "upper": [3], "h": 0.01},
      "potential": {"form": "quadratic", "scale": 1.0},
      "m": 2.0,
      "initial": {"type": "bump", "center": [0.4], "width": 1.0, "mass": 0.6666666666666666},
      "solver": {"t_end": 6.0, "dt_out": 0.1},
      "options": {"window": [2.0, 6.0]},
      "output": "runs/convergence",
      "seed": 0
    }

Every omitted key is filled with its default, and :meth:`ExperimentConfig.to_dict`
echoes the complete configuration.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .field import Grid
from .potential import FORMS, Potential
from .solver import FLUXES, SolverConfig

KINDS = ("simulate", "barenblatt-oracle", "comparison", "convergence", "classify", "touching")
INITIAL_TYPES = ("bump", "barenblatt", "equilibrium", "snapshot", "zero")
_REQUIRED = object()


class ConfigError(ValueError):
    pass


def _number(path, v, *, positive=False, nonneg=False, above=None, at_most=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if positive and not v > 0:
        raise ConfigError(f"{path}: must be > 0, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{path}: must be >= 0, got {v}")
    if above is not None and not v > above:
        raise ConfigError(f"{path}: requires {path.rsplit('.', 1)[-1]} > {above:g}, got {v}")
    if at_most is not None and v > at_most:
        raise ConfigError(f"{path}: must be <= {at_most:g}, got {v}")
    return v


def _integer(path, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {v}")
    return int(v)


def _vector(path, v, length=None):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a non-empty list of numbers, got {v!r}")
    out = [_number(f"{path}[{i}]", x) for i, x in enumerate(v)]
    if length is not None and len(out) != length:
        raise ConfigError(f"{path}: expected {length} entries, got {len(out)}")
    return out


def _section(path, data, schema):
    """Fill defaults from ``schema`` (name -> default or _REQUIRED); reject unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    out = {}
    for key, default in schema.items():
        if key in data:
            out[key] = data[key]
        elif default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: missing required key")
        else:
            out[key] = copy.deepcopy(default)
    return out


GRID_KEYS = {"lower": _REQUIRED, "upper": _REQUIRED, "h": _REQUIRED}
SOLVER_KEYS = {"t_end": _REQUIRED, "dt_out": _REQUIRED, "cfl": 0.4, "floor": 0.0,
               "flux": "balanced", "guard_cells": 2, "margin": 0.1}
INITIAL_KEYS = {
    "bump": {"type": _REQUIRED, "center": None, "width": 1.0, "mass": _REQUIRED},
    "barenblatt": {"type": _REQUIRED, "tau": 1.0, "C": 1.0, "center": None},
    "equilibrium": {"type": _REQUIRED, "C0": None, "mass": None},
    "snapshot": {"type": _REQUIRED, "path": _REQUIRED},
    "zero": {"type": _REQUIRED},
}
OPTION_KEYS = {
    "simulate": {},
    "barenblatt-oracle": {"band": 0.8, "refine": True},
    "comparison": {"pairs": 20},
    "convergence": {"window": None, "rate_expected": None},
    "classify": {"candidate": _REQUIRED, "domain": _REQUIRED, "tol": None, "expect": None},
    "touching": {"n": 200, "tol": None, "perturb": 0.0, "source": "exact", "modes": ["above", "below"]},
}
DOMAIN_KEYS = {"lower": _REQUIRED, "upper": _REQUIRED, "times": _REQUIRED, "h": 0.01, "radius": None}
TOP_KEYS = {"kind": _REQUIRED, "grid": _REQUIRED, "potential": None, "m": 2.0, "initial": None,
            "solver": None, "options": None, "output": "out", "seed": 0}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    grid: dict
    potential: dict
    m: float
    initial: dict
    solver: dict
    options: dict
    output: str = "out"
    seed: int = 0
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    # resolved objects -----------------------------------------------------

    def make_grid(self) -> Grid:
        g = self.grid
        return Grid.from_spacing(g["lower"], g["upper"], g["h"])

    def make_potential(self) -> Potential:
        return Potential.from_dict(self.potential)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(m=self.m, **self.solver)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "grid": copy.deepcopy(self.grid),
                "potential": copy.deepcopy(self.potential), "m": self.m,
                "initial": copy.deepcopy(self.initial), "solver": copy.deepcopy(self.solver),
                "options": copy.deepcopy(self.options), "output": self.output, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate one JSON configuration object."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return from_dict(data)


def parse_config_list(text: str) -> list[ExperimentConfig]:
    """A single object or a list of objects."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    if isinstance(data, list):
        if not data:
            raise ConfigError("config: empty experiment list")
        return [from_dict(item, f"config[{i}]") for i, item in enumerate(data)]
    return [from_dict(data)]


def from_dict(data, path: str = "config") -> ExperimentConfig:
    top = _section(path, data, TOP_KEYS)
    kind = top["kind"]
    if kind not in KINDS:
        raise ConfigError(f"{path}.kind: must be one of {list(KINDS)}, got {kind!r}")
    m = _number(f"{path}.m", top["m"], above=1.0)

    g = _section(f"{path}.grid", top["grid"], GRID_KEYS)
    lower = _vector(f"{path}.grid.lower", g["lower"])
    d = len(lower)
    if d not in (1, 2):
        raise ConfigError(f"{path}.grid.lower: dimension must be 1 or 2, got {d}")
    upper = _vector(f"{path}.grid.upper", g["upper"], d)
    h = _number(f"{path}.grid.h", g["h"], positive=True)
    if any(b <= a for a, b in zip(lower, upper)):
        raise ConfigError(f"{path}.grid.upper: must exceed grid.lower on every axis")
    grid = {"lower": lower, "upper": upper, "h": h}
    try:
        Grid.from_spacing(lower, upper, h)
    except ValueError as exc:
        raise ConfigError(f"{path}.grid: {exc}") from exc

    pot = top["potential"]
    if pot is None:
        pot = Potential.zero(d).to_dict()
    if not isinstance(pot, dict) or pot.get("form") not in FORMS:
        raise ConfigError(f"{path}.potential.form: must be one of {list(FORMS)}")
    try:
        potential = Potential.from_dict(pot)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.potential: {exc}") from exc
    if potential.d != d:
        raise ConfigError(f"{path}.potential: dimension {potential.d} does not match grid dimension {d}")
    pot = potential.to_dict()

    solver = None
    if kind != "classify" or top["solver"] is not None:
        if top["solver"] is None:
            raise ConfigError(f"{path}.solver: missing required key")
        s = _section(f"{path}.solver", top["solver"], SOLVER_KEYS)
        s["t_end"] = _number(f"{path}.solver.t_end", s["t_end"], positive=True)
        s["dt_out"] = _number(f"{path}.solver.dt_out", s["dt_out"], positive=True)
        s["cfl"] = _number(f"{path}.solver.cfl", s["cfl"], positive=True, at_most=0.5)
        s["floor"] = _number(f"{path}.solver.floor", s["floor"], nonneg=True)
        s["guard_cells"] = _integer(f"{path}.solver.guard_cells", s["guard_cells"], 1)
        s["margin"] = _number(f"{path}.solver.margin", s["margin"], nonneg=True, at_most=0.5)
        if s["flux"] not in FLUXES:
            raise ConfigError(f"{path}.solver.flux: must be one of {list(FLUXES)}, got {s['flux']!r}")
        solver = s

    initial = _initial(f"{path}.initial", top["initial"], kind, d)
    options = _options(f"{path}.options", top["options"] or {}, kind, d)
    if not isinstance(top["output"], str) or not top["output"]:
        raise ConfigError(f"{path}.output: expected a non-empty path string")
    seed = _integer(f"{path}.seed", top["seed"], 0)
    if seed >= 2**64:
        raise ConfigError(f"{path}.seed: must fit in 64 bits")
    return ExperimentConfig(kind, grid, pot, m, initial, solver, options, top["output"], seed)


def _initial(path, data, kind, d):
    needs = kind in ("simulate", "convergence", "touching")
    if data is None:
        if needs:
            raise ConfigError(f"{path}: missing required key")
        return None
    if not isinstance(data, dict) or data.get("type") not in INITIAL_TYPES:
        raise ConfigError(f"{path}.type: must be one of {list(INITIAL_TYPES)}")
    out = _section(path, data, INITIAL_KEYS[data["type"]])
    t = out["type"]
    if t == "bump":
        out["center"] = [0.0] * d if out["center"] is None else _vector(f"{path}.center", out["center"], d)
        out["width"] = _number(f"{path}.width", out["width"], positive=True)
        out["mass"] = _number(f"{path}.mass", out["mass"], positive=True)
    elif t == "barenblatt":
        out["tau"] = _number(f"{path}.tau", out["tau"], positive=True)
        out["C"] = _number(f"{path}.C", out["C"], positive=True)
        out["center"] = [0.0] * d if out["center"] is None else _vector(f"{path}.center", out["center"], d)
    elif t == "equilibrium":
        if (out["C0"] is None) == (out["mass"] is None):
            raise ConfigError(f"{path}: give exactly one of C0 and mass")
        if out["C0"] is not None:
            out["C0"] = _number(f"{path}.C0", out["C0"])
        else:
            out["mass"] = _number(f"{path}.mass", out["mass"], positive=True)
    elif t == "snapshot":
        if not isinstance(out["path"], str):
            raise ConfigError(f"{path}.path: expected a string")
    return out


def _options(path, data, kind, d):
    out = _section(path, data, OPTION_KEYS[kind])
    if kind == "barenblatt-oracle":
        out["band"] = _number(f"{path}.band", out["band"], positive=True, at_most=1.0)
        if not isinstance(out["refine"], bool):
            raise ConfigError(f"{path}.refine: expected true or false")
    elif kind == "comparison":
        out["pairs"] = _integer(f"{path}.pairs", out["pairs"], 1)
    elif kind == "convergence":
        if out["window"] is not None:
            w = _vector(f"{path}.window", out["window"], 2)
            if not w[0] < w[1]:
                raise ConfigError(f"{path}.window: requires t_a < t_b")
            out["window"] = w
        if out["rate_expected"] is not None and not isinstance(out["rate_expected"], bool):
            raise ConfigError(f"{path}.rate_expected: expected true, false or null")
    elif kind == "classify":
        cand = out["candidate"]
        if not isinstance(cand, dict) or "type" not in cand:
            raise ConfigError(f"{path}.candidate: expected an exact-solution descriptor with a type")
        from .exact import from_descriptor
        try:
            from_descriptor(cand)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.candidate: {exc}") from exc
        dom = _section(f"{path}.domain", out["domain"], DOMAIN_KEYS)
        dom["lower"] = _vector(f"{path}.domain.lower", dom["lower"], d)
        dom["upper"] = _vector(f"{path}.domain.upper", dom["upper"], d)
        dom["times"] = _vector(f"{path}.domain.times", dom["times"])
        dom["h"] = _number(f"{path}.domain.h", dom["h"], positive=True)
        if dom["radius"] is not None:
            dom["radius"] = _number(f"{path}.domain.radius", dom["radius"], positive=True)
        out["domain"] = dom
        if out["tol"] is not None:
            out["tol"] = _number(f"{path}.tol", out["tol"], nonneg=True)
        if out["expect"] is not None and out["expect"] not in (
                "subsolution", "supersolution", "solution", "neither", "not-supersolution",
                "not-subsolution"):
            raise ConfigError(f"{path}.expect: unknown verdict {out['expect']!r}")
    elif kind == "touching":
        out["n"] = _integer(f"{path}.n", out["n"], 1)
        if out["tol"] is not None:
            out["tol"] = _number(f"{path}.tol", out["tol"], nonneg=True)
        out["perturb"] = _number(f"{path}.perturb", out["perturb"], nonneg=True)
        if out["source"] not in ("exact", "simulated"):
            raise ConfigError(f"{path}.source: must be 'exact' or 'simulated'")
        modes = out["modes"]
        if not isinstance(modes, list) or not modes or any(mo not in ("above", "below") for mo in modes):
            raise ConfigError(f"{path}.modes: expected a non-empty list of 'above'/'below'")
    return out
