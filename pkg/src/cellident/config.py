"""Run configuration: JSON schema, loading and validation."""

from __future__ import annotations

import json
import os
from pathlib import Path

import jsonschema

from .errors import ConfigurationError

__all__ = ["SCHEMA_VERSION", "TASKS", "CONFIG_SCHEMA", "load_config", "validate_config"]

SCHEMA_VERSION = 1
TASKS = ("synth", "fit", "sample", "design", "eis", "landscape")

_number = {"type": "number"}
_parameter = {
    "type": "object",
    "required": ["name"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "lower": _number,
        "upper": _number,
        "initial": _number,
        "transform": {
            "oneOf": [
                {"enum": ["identity", "log"]},
                {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["identity", "log", "affine"]}, "scale": _number,
                                   "offset": _number},
                    "additionalProperties": False,
                },
            ]
        },
        "prior": {
            "type": "object",
            "required": ["kind", "a", "b"],
            "properties": {"kind": {"enum": ["uniform", "gaussian", "log-uniform"]}, "a": _number, "b": _number},
            "additionalProperties": False,
        },
    },
}
_id_block = {
    "type": "object",
    "required": ["id"],
    "properties": {"id": {"type": "string"}, "options": {"type": "object"}},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": list(TASKS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["spm", "ecm"]},
                "options": {"type": "object"},
                "fixed": {"type": "object", "additionalProperties": _number},
            },
        },
        "parameters": {"type": "array", "items": _parameter, "minItems": 1},
        "data": {
            "type": "object",
            "required": ["path"],
            "additionalProperties": False,
            "properties": {"path": {"type": "string"}},
        },
        "protocol": {
            "type": "object",
            "required": ["segments"],
            "additionalProperties": False,
            "properties": {
                "segments": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
                },
                "units": {"enum": ["A", "C"]},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "truth": {"type": "object", "additionalProperties": _number},
                "sigma": {"type": "number", "minimum": 0},
            },
        },
        "cost": _id_block,
        "optimiser": _id_block,
        "sampler": _id_block,
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "metric": {"enum": ["gravimetric", "volumetric"]},
                "c_rate": {"type": "number", "exclusiveMinimum": 0},
                "cutoff_voltage": _number,
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "rescale_current": {"type": "boolean"},
            },
        },
        "eis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "soc": {"type": "number", "minimum": 0, "maximum": 1},
                "frequencies": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "min": {"type": "number", "exclusiveMinimum": 0},
                                "max": {"type": "number", "exclusiveMinimum": 0},
                                "per_decade": {"type": "integer", "minimum": 1},
                            },
                        },
                    ]
                },
                "fit": {"type": "boolean"},
            },
        },
        "landscape": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "parameters": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                "points": {"type": "integer", "minimum": 2},
                "transformed_axes": {"type": "boolean"},
                "trace": {"type": "string"},
            },
        },
        "identifiability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "elongation": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

_REQUIRED = {
    "synth": ("protocol", "synth"),
    "fit": ("parameters", "data"),
    "sample": ("parameters", "data"),
    "design": ("parameters",),
    "eis": (),
    "landscape": ("parameters", "data"),
}


def validate_config(config: dict, task: str, base_dir: Path | None = None) -> dict:
    """Schema-check ``config`` for ``task`` and resolve relative file paths.

    Raises
    ------
    ConfigurationError
        Schema violations, a task mismatch, missing sections or missing files.
    """
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}")
    if "task" in config and config["task"] != task:
        raise ConfigurationError(f"config is for task {config['task']!r}, not {task!r}")
    missing = [s for s in _REQUIRED[task] if s not in config]
    if missing:
        raise ConfigurationError(f"task {task!r} needs config sections {missing}")
    cfg = json.loads(json.dumps(config))
    base = Path(base_dir or ".")
    for section in ("data",):
        if section in cfg:
            path = Path(cfg[section]["path"])
            if not path.is_absolute():
                path = base / path
            if not path.is_file():
                raise ConfigurationError(f"{section} file {str(path)!r} does not exist")
            cfg[section]["path"] = str(path)
    if "landscape" in cfg and "trace" in cfg["landscape"]:
        path = Path(cfg["landscape"]["trace"])
        if not path.is_absolute():
            path = base / path
        if not path.is_file():
            raise ConfigurationError(f"trace file {str(path)!r} does not exist")
        cfg["landscape"]["trace"] = str(path)
    return cfg


def load_config(path, task: str) -> dict:
    """Read and validate a JSON config file; relative paths resolve against its folder."""
    path = Path(path)
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {os.fspath(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigurationError("config must be a JSON object")
    return validate_config(config, task, path.parent)
