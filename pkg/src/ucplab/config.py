"""Experiment configuration: JSON files checked against a published schema."""

import copy
import json
import re
from importlib import resources

import jsonschema

from .exceptions import ConfigError

DEFAULTS = {
    "model": {
        "V0": {"kind": "cosine", "amplitude": 0.5},
        "distribution": {"kind": "uniform", "a": 0.0, "b": 1.0},
        "C_minus": 1.0,
        "C_plus": 1.0,
        "delta_minus": 0.3,
        "delta_plus": 0.4,
        "profile": "indicator",
        "M": 1,
        "M_tilde": 0.5,
        "balls": "centered",
        "n_extra": 0,
    },
    "numeric": {
        "d": 1,
        "L": [5, 9, 13],
        "bc": "periodic",
        "nodes_per_unit": 40,
        "n_eigs": 10,
        "tol": 1e-9,
        "delta": 0.3,
        "E": None,
        "E_offset": 0.1,
        "epsilons": [0.02, 0.04, 0.08, 0.16],
        "t_values": [i / 10 for i in range(11)],
        "eta": 1e-4,
        "q": 0.5,
        "kappa": None,
        "matrix_size": 300,
        "n_instances": 30,
        "rank": 5,
    },
    "randomness": {"n_real": 200},
    "constants": {"C2": 1.0, "C3": 1.0, "K_Delta": 1.0, "C_dim": 2.718281828459045,
                  "K_V": 0.0, "E0": 0.0, "K1": 1.0, "K2": 1.0},
    "output": {"dir": "ucplab-out", "formats": ["csv", "json"]},
}


def schema():
    text = resources.files("ucplab").joinpath("schema/experiment.json").read_text(encoding="utf-8")
    return json.loads(text)


def _field_of(error):
    path = ".".join(str(p) for p in error.absolute_path)
    if error.validator == "required":
        missing = re.findall(r"'([^']+)' is a required property", error.message)
        if missing:
            return f"{path}.{missing[0]}" if path else missing[0]
    if error.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)' was unexpected", error.message)
        if extra:
            return f"{path}.{extra[0]}" if path else extra[0]
    return path or "<root>"


def _line_of(text, field):
    if not text:
        return None
    key = field.rsplit(".", 1)[-1]
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


def validate(cfg, source_text=None):
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        field = _field_of(err)
        line = _line_of(source_text, field)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"config error at {field}{where}: {err.message}", field=field)
    return cfg


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item):
    """``"numeric.L=[5, 9]"`` -> ``(["numeric", "L"], [5, 9])``; values are JSON, else strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value", field=item)
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        path, value = parse_override(item) if isinstance(item, str) else item
        node = cfg
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    return cfg


def resolve(cfg):
    """Schema-check ``cfg`` and fill in every default."""
    validate(cfg)
    out = _merge(DEFAULTS, cfg)
    validate(out)
    return out


def load_config(path, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", field=None) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}",
                          field=None) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", field="<root>")
    raw = apply_overrides(raw, overrides)
    validate(raw, text)
    return resolve(raw)
