# recps/core/config.py
# Run configuration loading: defaults < RECPS_* environment < config file < CLI flags
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from recps.schemas.run import RunConfig
from recps.utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "RECPS_"


def _normalise_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _known_fields() -> set:
    return set(RunConfig.model_fields)


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Collect RECPS_<FIELD> variables that name a RunConfig field."""
    environ = os.environ if environ is None else environ
    fields = _known_fields()
    values = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = _normalise_key(name[len(ENV_PREFIX):])
        if key in fields:
            values[key] = value
    return values


def read_config_file(path: str) -> Dict[str, str]:
    """Parse a flat KEY=VALUE config file; keys are case-insensitive."""
    if not Path(path).is_file():
        raise ConfigError(f"Config file not found: {path}", field="config", value=str(path))
    fields = _known_fields()
    values = {}
    for key, value in dotenv_values(path).items():
        normalised = _normalise_key(key)
        if normalised not in fields:
            raise ConfigError(f"Unknown config key '{key}' in {path}", field=key, value=value)
        if value is None:
            raise ConfigError(f"Config key '{key}' has no value", field=key)
        values[normalised] = value
    return values


def parse_assignments(assignments: Iterable[str]) -> Dict[str, str]:
    """Turn repeated --set key=value flags into overrides."""
    fields = _known_fields()
    values = {}
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"Expected key=value, got '{assignment}'", field="set", value=assignment)
        key, value = assignment.split("=", 1)
        normalised = _normalise_key(key)
        if normalised not in fields:
            raise ConfigError(f"Unknown config key '{key}'", field=key, value=value)
        values[normalised] = value.strip()
    return values


def load_run_config(
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    use_environment: bool = True,
    defaults: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Resolve the run configuration.

    Args:
        config_path: Optional flat KEY=VALUE file
        overrides: Values from command-line flags (None values are ignored)
        use_environment: Whether RECPS_* variables (and a local .env) apply
        defaults: Values recorded by an earlier run (lowest priority)

    Returns:
        Validated RunConfig
    """
    merged: Dict[str, Any] = dict(defaults or {})
    if use_environment:
        load_dotenv(override=False)
        merged.update(env_overrides())
    if config_path:
        merged.update(read_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[_normalise_key(key)] = value

    try:
        config = RunConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(loc) for loc in first["loc"])
        raise ConfigError(
            f"Invalid configuration: {field}: {first['msg']}",
            field=field,
            value=first.get("input"),
        ) from e

    logger.debug(f"Resolved run configuration: {config.model_dump(mode='json')}")
    return config
