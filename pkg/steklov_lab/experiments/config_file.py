"""Flat `key=value` run configuration files."""

import typing
from pathlib import Path
from typing import Union

import structlog
from pydantic import ValidationError

from ..errors import ConfigError
from ..schemas.run import RunConfig

logger = structlog.get_logger()


def _is_list(key: str) -> bool:
    return typing.get_origin(RunConfig.model_fields[key].annotation) is list


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    """Blank lines and `#` comments are skipped; list values are comma separated"""

    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value", line=number)

        key, value = (part.strip() for part in line.split("=", 1))
        if key not in RunConfig.model_fields:
            raise ConfigError(f"{source}:{number}: unknown key '{key}'", line=number, key=key)
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}'", line=number, key=key)

        values[key] = [item.strip() for item in value.split(",") if item.strip()] if _is_list(key) else value
        lines[key] = number

    if "experiment" not in values:
        raise ConfigError(f"{source}: missing required key 'experiment'", key="experiment")

    try:
        config = RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        number = lines.get(key)
        raise ConfigError(f"{source}:{number}: {key}: {error['msg']}", line=number, key=key) from e

    logger.debug("Run configuration parsed", source=source, experiment=config.experiment)
    return config


def parse_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))
