"""Structured run configuration: a strict, schema-validated key-value tree.

Unknown keys are rejected with their full path, defaults are filled in, and
the effective configuration is echoed back into every report so a run can be
audited and replayed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

__all__ = ["ConfigError", "RunConfig", "parse_config", "emit_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

_REQUIRED = object()


def _number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


# leaf spec: (type check, default); subtree spec: dict
_SCHEMA = {
    "schema_version": (lambda v: v == SCHEMA_VERSION, SCHEMA_VERSION),
    "seed": (lambda v: isinstance(v, int) and 0 <= v < 2**64, _REQUIRED),
    "method": (lambda v: v in ("adversarial", "mle", "smm", "ii"), "adversarial"),
    "n": (lambda v: isinstance(v, int) and v >= 1, 300),
    "m": (lambda v: isinstance(v, int) and v >= 1, 300),
    "model": {
        "name": (lambda v: v in ("logistic_location", "normal_location",
                                 "binary_choice", "roy"), _REQUIRED),
        "noise": (lambda v: v in ("logistic", "normal"), "logistic"),
        "smoothing": {
            "h": (lambda v: _number(v) and v >= 0, 0.0),
        },
        "roy": {
            "quadrature_nodes": (lambda v: isinstance(v, int) and v >= 2, 32),
            "conditional_expectations": (lambda v: isinstance(v, bool), True),
        },
    },
    "params": {
        "start": (lambda v: v is None or (isinstance(v, list)
                                          and all(_number(x) for x in v)), None),
        "fixed": (lambda v: isinstance(v, dict)
                  and all(_number(x) for x in v.values()), {}),
    },
    "data": {
        "truth": (lambda v: v is None or (isinstance(v, list)
                                          and all(_number(x) for x in v)), None),
        "real_model": (lambda v: v is None or v in (
            "logistic_location", "normal_location", "binary_choice", "roy"), None),
        "real_noise": (lambda v: v in ("logistic", "normal"), "logistic"),
        "path": (lambda v: v is None or isinstance(v, str), None),
    },
    "discriminator": {
        "family": (lambda v: v in ("oracle", "logistic", "parametric", "mlp"),
                   "logistic"),
        "features": (lambda v: v is None or isinstance(v, str), None),
        "parametric_id": (lambda v: v is None or v in ("loc_shift",
                                                       "binary_shift"), None),
        "hidden": (lambda v: isinstance(v, list)
                   and all(isinstance(x, int) and x >= 1 for x in v), []),
        "activation": (lambda v: v in ("tanh", "sigmoid"), "tanh"),
    },
    "train": {
        "optimizer": (lambda v: v in ("newton_irls", "full_batch_adam"),
                      "newton_irls"),
        "iters": (lambda v: isinstance(v, int) and v >= 1, 2000),
        "tol": (lambda v: _number(v) and v > 0, 1e-9),
        "lr": (lambda v: _number(v) and v > 0, 0.05),
        "ridge": (lambda v: _number(v) and v >= 0, 1e-8),
    },
    "opt": {
        "method": (lambda v: v in ("nelder_mead", "grid_then_nelder_mead"),
                   "nelder_mead"),
        "scale": (lambda v: _number(v) and v > 0, 0.05),
        "ftol": (lambda v: _number(v) and v > 0, 1e-8),
        "xtol": (lambda v: _number(v) and v > 0, 1e-6),
        "max_evals": (lambda v: isinstance(v, int) and v >= 1, 2000),
        "grid": (lambda v: v is None or isinstance(v, list), None),
        "multistart": (lambda v: isinstance(v, int) and v >= 1, 1),
    },
    "smm": {
        "moments": (lambda v: isinstance(v, str), "poly3"),
        "weighting": (lambda v: v in ("optimal", "identity"), "optimal"),
    },
    "ii": {
        "degree": (lambda v: isinstance(v, int) and v >= 1, 3),
        "weighting": (lambda v: v in ("optimal", "identity"), "optimal"),
    },
    "inference": {
        "reps": (lambda v: isinstance(v, int) and v >= 1, 500),
        "boot": (lambda v: isinstance(v, int) and v >= 2, 500),
        "jobs": (lambda v: isinstance(v, int) and v >= 1, 1),
    },
    "output": {
        "dir": (lambda v: isinstance(v, str), "."),
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _validate(tree, schema, path=""):
    if not isinstance(tree, dict):
        raise ConfigError(f"expected a table at {path or '<root>'}")
    out = {}
    for key in tree:
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
    for key, spec in schema.items():
        here = path + key
        if isinstance(spec, dict):
            out[key] = _validate(tree.get(key, {}), spec, here + ".")
        else:
            check, default = spec
            if key in tree:
                value = tree[key]
            elif default is _REQUIRED:
                raise ConfigError(f"missing required config key {here!r}")
            else:
                value = default
            if not check(value):
                raise ConfigError(f"invalid value for {here!r}: {value!r}")
            out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with every default made explicit."""

    tree: dict

    def __getitem__(self, dotted: str):
        node = self.tree
        for part in dotted.split("."):
            node = node[part]
        return node

    def as_dict(self) -> dict:
        return json.loads(json.dumps(self.tree))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON configuration document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig(tree=_validate(raw, _SCHEMA))


def emit_config(cfg: RunConfig) -> str:
    """Serialize with defaults filled; parse(emit(parse(x))) == parse(x)."""
    return json.dumps(cfg.tree, indent=2, sort_keys=True)
