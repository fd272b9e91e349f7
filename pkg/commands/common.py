"""
Option parsing and experiment-file loading shared by the commands.
"""
import configparser
import json
from pathlib import Path

import click
from pydantic import ValidationError

from models import ExperimentConfig
from services import tt_npe, tt_pca
from services.tt_model import MODEL_MAGIC
from utils.errors import DataError, UsageError


def parse_dims(value: str | None) -> tuple | None:
    """'4x7x4x7' -> (4, 7, 4, 7)."""
    if value is None or value == "":
        return None
    try:
        dims = tuple(int(part) for part in str(value).lower().split("x"))
    except ValueError:
        raise UsageError(f"dims must look like 4x7x4x7, got {value!r}")
    if any(size < 1 for size in dims):
        raise UsageError(f"dims must be positive, got {value!r}")
    return dims


def parse_int_list(value: str | None) -> list | None:
    """'2,3,2' -> [2, 3, 2]."""
    if value is None or value == "":
        return None
    try:
        return [int(part) for part in str(value).split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated integers, got {value!r}")


def parse_float_list(value: str | None) -> list | None:
    if value is None or value == "":
        return None
    try:
        return [float(part) for part in str(value).split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated numbers, got {value!r}")


def parse_rank_grid(values) -> list | None:
    """Repeated '--ranks 2,3,2' flags, or one config value with ';' between vectors."""
    if not values:
        return None
    if isinstance(values, str):
        values = values.split(";")
    return [tuple(parse_int_list(v)) for v in values if v and v.strip()]


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def parse_epsilon(value):
    if value is None or str(value).lower() == "auto":
        return "auto"
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"epsilon must be a number or 'auto', got {value!r}")


# ============================================================================
# EXPERIMENT FILES
# ============================================================================

def read_config_file(path) -> dict:
    """key = value pairs from every [section], keys normalized to snake_case."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"))
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as e:
        raise UsageError(f"Cannot read config file {path}: {e}")
    except configparser.Error as e:
        raise UsageError(f"Malformed config file {path}: {e}")

    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            values[key.replace("-", "_")] = value
    return values


_PARSERS = {
    "dims": parse_dims,
    "ranks": parse_rank_grid,
    "tau": parse_float_list,
    "knn_k": parse_int_list,
    "classes": parse_int_list,
    "epsilon": parse_epsilon,
    "center": parse_bool,
    "include_tnpe": parse_bool,
}


def build_experiment(config_path, overrides: dict) -> ExperimentConfig:
    """Config file values, then every flag that was given on the command line."""
    values = read_config_file(config_path) if config_path else {}
    for key, raw in list(values.items()):
        if key in _PARSERS:
            values[key] = _PARSERS[key](raw)
    for key, value in overrides.items():
        if value is None or value == () or value == []:
            continue
        values[key] = value
    unknown = set(values) - set(ExperimentConfig.model_fields)
    if unknown:
        raise UsageError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")
    values = {k: v for k, v in values.items() if v is not None}
    if "train" not in values:
        raise UsageError("--train (or 'train' in the config file) is required")
    return validated(ExperimentConfig, **values)


def validated(model, **values):
    """Instantiate a pydantic model, reporting validation failures as usage errors."""
    try:
        return model(**values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise UsageError(problems)


# ============================================================================
# MODEL FILES
# ============================================================================

def model_kind(path) -> str:
    try:
        with open(path, "rb") as handle:
            magic = handle.read(4)
    except OSError as e:
        raise DataError(f"Cannot read model {path}: {e}")
    kinds = {tt_pca.CLASSIFIER_MAGIC: "classifier", tt_npe.EMBEDDING_MAGIC: "embedding", MODEL_MAGIC: "subspace"}
    if magic not in kinds:
        raise DataError(f"{path}: not a model file (magic {magic!r})")
    return kinds[magic]


def echo_json(payload) -> None:
    click.echo(json.dumps(payload, indent=2, default=str))


def sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}{suffix}")
