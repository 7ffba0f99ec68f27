"""Workflow configuration: one YAML file per run.

Sections may be written nested or with dotted keys (``optimal.eta: 1``).
Numbers are atomic units unless given as a string with a unit, e.g.
``"2 /ps"``, ``"1 ps"``, ``"328.5 MV/cm"``, ``"3424.19 cm-1"``, ``"300 K"``.
Unknown keys are rejected with their dotted location.
"""

from __future__ import annotations

import copy
import re
from pathlib import Path

import yaml

from . import constants as c
from .errors import ValidationError

#: multiplier taking "<value> <unit>" to atomic units
UNITS = {
    "au": 1.0,
    "fs": c.FS, "ps": c.PS,
    "/fs": 1.0 / c.FS, "1/fs": 1.0 / c.FS, "/ps": 1.0 / c.PS, "1/ps": 1.0 / c.PS,
    "cm-1": c.CM_1, "1/cm": c.CM_1,
    "mv/cm": c.MV_CM,
    "k": c.KELVIN,
    "angstrom": c.ANGSTROM, "a": c.ANGSTROM,
    "debye": c.DEBYE, "d": c.DEBYE, "debye/angstrom": c.DEBYE / c.ANGSTROM,
    "amu": c.AMU,
    "ev": 1.0 / 27.211386,
}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([^\s].*)?$")


def quantity(value, where: str) -> float:
    """Number in atomic units from a float or a ``"<number> <unit>"`` string."""
    if isinstance(value, bool):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _QUANTITY.match(value)
        if m:
            unit = (m.group(2) or "au").strip().lower().replace(" ", "")
            if unit not in UNITS:
                raise ValidationError(f"{where}: unknown unit {m.group(2)!r}; known: {sorted(UNITS)}")
            try:
                return float(m.group(1)) * UNITS[unit]
            except ValueError:
                pass
    raise ValidationError(f"{where}: expected a number or '<number> <unit>', got {value!r}")


# --- schema -------------------------------------------------------------------
# leaf validators: (type tag, default); "q" = quantity, "int", "str:<a|b>",
# "ints" = list of ints, "qs" = list of quantities, "any" = passed through

FUNC = {"type": ("str:morse|taylor|mecke|gaussian|double_well", None), "d_e": ("q", None),
        "r_e": ("q", None), "alpha": ("q", None), "coefficients": ("qs", None),
        "center": ("q", 0.0), "constant": ("q", 0.0), "r0": ("q", None), "q0": ("q", None),
        "height": ("q", None), "width": ("q", None), "barrier": ("q", None), "tilt": ("q", None)}

PULSE = {"amplitude": ("q", None), "frequency": ("q", None), "duration": ("q", None),
         "t_start": ("q", 0.0), "chirp": ("q", 0.0), "phase": ("q", 0.0)}

OBSERVABLE = {"type": ("str:prj|ovl|amo", "prj"), "states": ("ints", None), "label": ("str", ""),
              "function": (FUNC, None)}

SCHEMA = {
    "model": {
        "preset": ("str:morse|double_well|none", "none"),
        "grid": {"n_points": ("int", None), "x_min": ("q", None), "x_max": ("q", None),
                 "mass": ("q", None)},
        "potential": (FUNC, None),
        "dipole": ([FUNC], None),
        "sbc": (FUNC, None),
        "v_min": ("int", 0),
        "v_max": ("int", None),
    },
    "observe": {"targets": ([OBSERVABLE], None), "choices": ("ints", None)},
    "lvne": {"enabled": ("bool", None), "temperature": ("q", 0.0), "ordering": ("str:cs|df", "df")},
    "relax": {"model": ("str:fermi|einstein|constant|none", "none"), "rate": ("q", 0.0),
              "lower": ("int", 0), "upper": ("int", 1)},
    "dephase": {"model": ("str:none|quadratic|constant", "none"), "kappa": ("q", 0.0),
                "rate": ("q", 0.0)},
    "initial": {"type": ("str:pure|cat|mixed|thermal|equilibrium", "equilibrium"),
                "states": ("ints", None), "temperature": ("q", 0.0)},
    "time": {"delta": ("q", None), "steps": ("int", None), "start": ("q", 0.0)},
    "field": {"pulses": ([PULSE], None), "dt": ("q", None), "shape_duration": ("q", None)},
    "solver": {"method": ("str:adaptive|rk4|rk2", "adaptive"), "reltol": ("q", 1e-6),
               "substeps": ("int", 10)},
    "optimal": {"functional": ("str:J1a|J1b|J1c", "J1a"), "target": ("int", 0),
                "terminal": ("q", None), "max_iter": ("int", 10), "tolerance": ("q", 1e-10),
                "alpha": ("qs", [1.0]), "eta": ("q", 1.0), "zeta": ("q", 1.0),
                "j1c_overlap_eval": ("str:boundary|every", "boundary"), "substeps": ("int", 10)},
    "reduce": {"BN_scale": ("q", 1.0), "method": ("str:iter|bicg", "iter"),
               "transform": ("str:srbt", "srbt"), "A_stable": ("str:ssu|evs|none", "ssu"),
               "A_shift": ("q", 1e-6), "A_split": ("int", 1), "max_iter": ("int", 500),
               "conv_tol": ("q", 1e-6), "solver_tol": ("q", 1e-10), "d": ("int", None),
               "truncation": ("str:simple|spt", "simple"), "seed": ("int", 0)},
}

LIMITS = {
    ("optimal", "eta"): (0.0, 2.0), ("optimal", "zeta"): (0.0, 2.0),
    ("solver", "reltol"): (1e-14, 1e-2),
}


def _leaf(spec, value, where):
    if isinstance(spec, dict):
        return _section(spec, value, where)
    if isinstance(spec, list):
        if not isinstance(value, list):
            raise ValidationError(f"{where}: expected a list")
        return [_leaf(spec[0], v, f"{where}[{i}]") for i, v in enumerate(value)]
    if spec == "q":
        return quantity(value, where)
    if spec == "qs":
        vals = value if isinstance(value, list) else [value]
        return [quantity(v, f"{where}[{i}]") for i, v in enumerate(vals)]
    if spec == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{where}: expected an integer, got {value!r}")
        return value
    if spec == "ints":
        vals = value if isinstance(value, list) else [value]
        return [_leaf("int", v, f"{where}[{i}]") for i, v in enumerate(vals)]
    if spec == "bool":
        if not isinstance(value, bool):
            raise ValidationError(f"{where}: expected true/false, got {value!r}")
        return value
    if spec == "str":
        return str(value)
    if spec.startswith("str:"):
        choices = spec[4:].split("|")
        if value not in choices:
            raise ValidationError(f"{where}: {value!r} not one of {choices}")
        return value
    raise AssertionError(spec)


def _unflatten(raw: dict, where: str) -> dict:
    out: dict = {}
    for key, value in raw.items():
        if not isinstance(key, str):
            raise ValidationError(f"{where}: non-string key {key!r}")
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"{where}{key}: conflicts with a scalar entry")
        if isinstance(value, dict):
            value = _unflatten(value, f"{where}{key}.")
            if isinstance(node.get(parts[-1]), dict):
                node[parts[-1]].update(value)
                continue
        node[parts[-1]] = value
    return out


def _section(schema: dict, raw, where: str) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{where or 'config'}: expected a mapping")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        loc = f"{where}.{unknown[0]}" if where else unknown[0]
        raise ValidationError(f"unknown key '{loc}' (allowed: {sorted(schema)})")
    out = {}
    for key, spec in schema.items():
        loc = f"{where}.{key}" if where else key
        if isinstance(spec, dict):
            out[key] = _section(spec, raw.get(key), loc) if key in raw else None
            continue
        typ, default = spec
        out[key] = _leaf(typ, raw[key], loc) if key in raw else copy.deepcopy(default)
    return out


def validate(raw: dict) -> dict:
    """Return a fully populated config dict or raise :class:`ValidationError`."""
    flat = _unflatten(raw or {}, "")
    cfg = _section(SCHEMA, flat, "")
    for (sec, key), (lo, hi) in LIMITS.items():
        if cfg[sec] is not None and not lo <= cfg[sec][key] <= hi:
            raise ValidationError(f"{sec}.{key} = {cfg[sec][key]} outside the legal range [{lo}, {hi}]")
    opt = cfg["optimal"]
    if opt is not None:
        if opt["tolerance"] <= 0:
            raise ValidationError("optimal.tolerance must be positive")
        if opt["max_iter"] < 0 or opt["substeps"] < 1:
            raise ValidationError("optimal.max_iter must be >= 0 and optimal.substeps >= 1")
    red = cfg["reduce"]
    if red is not None and red["BN_scale"] < 1:
        raise ValidationError(f"reduce.BN_scale = {red['BN_scale']} must be >= 1")
    return cfg


def load(path) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: YAML syntax error: {exc}") from exc
    return validate(raw or {})
