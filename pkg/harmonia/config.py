"""Run settings: key-value files, environment, flags, validated against declared schemas."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from dotenv import dotenv_values
from jsonschema import Draft4Validator
from singer_sdk import typing as th

from harmonia.exceptions import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "HARMONIA_THREADS"
EFFECTIVE_CONFIG = "effective_config.json"

DEFAULTS: Dict[str, Any] = {
    "template_weight": 5.0,
    "epochs_phase1": 480,
    "epochs_phase2": 240,
    "patience": 80,
    "lr": 1e-3,
    "batch_size": 8,
    "clip_norm": 5.0,
    "beta_cap": 0.01,
    "seeds": [123, 456, 789],
    "threads": os.cpu_count() or 1,
    "normalize": False,
    "tonic_offset": False,
    "diminished_marker": True,
    "tsv": False,
    "csv": False,
    "kind": "chord",
    "n_sequences": 50,
    "min_length": 24,
    "max_length": 48,
    "seed": 123,
    "folds": 10,
    "test_fold": 0,
}

_COMMON = [
    th.Property("threads", th.IntegerType, description="Worker threads for per-sequence work."),
    th.Property("output_dir", th.StringType, description="Directory receiving every output file."),
]

INGEST_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("normalize", th.BooleanType, description="Transpose every sequence to the no-accidental set."),
).to_dict()

TRAIN_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("template_weight", th.NumberType, description="Magnitude w of the chord quality templates."),
    th.Property("epochs_phase1", th.IntegerType),
    th.Property("epochs_phase2", th.IntegerType),
    th.Property("patience", th.IntegerType, description="Epochs without dev improvement before stopping."),
    th.Property("lr", th.NumberType, description="Adam learning rate."),
    th.Property("batch_size", th.IntegerType),
    th.Property("clip_norm", th.NumberType, description="Global gradient norm cap."),
    th.Property("beta_cap", th.NumberType, description="Upper bound of the phase-2 modulation rate."),
    th.Property("seeds", th.ArrayType(th.IntegerType), description="One full two-phase run per seed."),
    th.Property("phase", th.IntegerType, description="Run only this phase (1 or 2)."),
    th.Property("init_checkpoint", th.StringType, description="Phase-1 checkpoint for a phase-2 run."),
).to_dict()

ANALYZE_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("tonic_offset", th.BooleanType, description="Read degrees relative to the learned tonic."),
    th.Property("diminished_marker", th.BooleanType, description="Render 'o' after diminished numerals."),
    th.Property("tsv", th.BooleanType, description="Also write a tab-separated frame,key,chord,rn table."),
).to_dict()

TONIC_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("csv", th.BooleanType, description="Also write the per-root CSV."),
).to_dict()

EVAL_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("kind", th.StringType, description="'chord' or 'roman'."),
).to_dict()

SAMPLE_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("n_sequences", th.IntegerType),
    th.Property("min_length", th.IntegerType),
    th.Property("max_length", th.IntegerType),
    th.Property("seed", th.IntegerType),
    th.Property("template_weight", th.NumberType),
).to_dict()

SPLIT_SCHEMA = th.PropertiesList(
    *_COMMON,
    th.Property("folds", th.IntegerType),
    th.Property("test_fold", th.IntegerType),
    th.Property("seed", th.IntegerType),
).to_dict()

# value constraints the property declarations above do not express
_CONSTRAINTS: Dict[str, Dict[str, Any]] = {
    "threads": {"minimum": 1},
    "template_weight": {"minimum": 0, "exclusiveMinimum": True},
    "epochs_phase1": {"minimum": 1},
    "epochs_phase2": {"minimum": 1},
    "patience": {"minimum": 1},
    "lr": {"minimum": 0},
    "batch_size": {"minimum": 1},
    "clip_norm": {"minimum": 0},
    "beta_cap": {"minimum": 0, "maximum": 1},
    "seeds": {"minItems": 1},
    "phase": {"enum": [1, 2]},
    "kind": {"enum": ["chord", "roman"]},
    "n_sequences": {"minimum": 1},
    "min_length": {"minimum": 1},
    "max_length": {"minimum": 1},
    "folds": {"minimum": 3},
    "test_fold": {"minimum": 0},
}


def _constrained(schema: Dict[str, Any]) -> Dict[str, Any]:
    schema = json.loads(json.dumps(schema))
    for name, prop in schema.get("properties", {}).items():
        prop.update(_CONSTRAINTS.get(name, {}))
    return schema


def _json_types(prop: Mapping[str, Any]) -> List[str]:
    types = prop.get("type", "string")
    return [types] if isinstance(types, str) else list(types)


def _coerce(name: str, raw: str, prop: Mapping[str, Any]) -> Any:
    types = [t for t in _json_types(prop) if t != "null"]
    text = raw.strip()
    try:
        if "boolean" in types:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if "integer" in types:
            return int(text)
        if "number" in types:
            return float(text)
        if "array" in types:
            return [int(part) for part in text.replace(",", " ").split()]
    except ValueError as err:
        raise ConfigError(f"setting {name!r}: {err}", [f"{name}: {err}"]) from err
    if "string" in types:
        return text
    raise ConfigError(f"setting {name!r} has an unsupported type {types}", [name])


def load_settings(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    schema: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Layer defaults < file < environment < flags and validate the result.

    Only keys the schema declares are kept; unknown file keys are reported
    and ignored.
    """
    schema = _constrained(schema or TRAIN_SCHEMA)
    properties = schema.get("properties", {})
    settings = {k: v for k, v in DEFAULTS.items() if k in properties}

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file {path} does not exist", [str(path)])
        for name, raw in dotenv_values(path).items():
            if name not in properties:
                logger.warning(f"Ignoring unknown setting {name!r} in {path}")
                continue
            if raw is None:
                continue
            settings[name] = _coerce(name, raw, properties[name])

    env_threads = os.environ.get(THREADS_ENV)
    if env_threads and "threads" in properties:
        settings["threads"] = _coerce("threads", env_threads, properties["threads"])

    for name, value in (overrides or {}).items():
        if value is not None:
            settings[name] = value

    errors = sorted(Draft4Validator(schema).iter_errors(settings), key=lambda e: [str(p) for p in e.path])
    if errors:
        messages = [f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("Invalid settings: " + "; ".join(messages), messages)
    return settings


def echo_settings(settings: Mapping[str, Any], output_dir: Union[str, Path]) -> Path:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / EFFECTIVE_CONFIG
    with open(path, "w") as outfile:
        json.dump(dict(settings), outfile, indent=4, sort_keys=True)
    logger.info(f"Effective configuration written to {path}")
    return path
