"""Helpers shared by the command handlers."""
from pathlib import Path
from typing import Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel, ValidationError

from spaars.utils.errors import ConfigurationError, UsageError

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def load_config(path: Optional[str], schema: Type[ConfigT]) -> ConfigT:
    """Validate a JSON config file; defaults when no path is given."""
    if path is None:
        return schema()
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(f"Config file not found: {config_path}")
    try:
        return schema.model_validate_json(config_path.read_text())
    except ValidationError as e:
        raise ConfigurationError(f"Invalid config {config_path}: {e}") from e


def ensure_writable(path: Path, force: bool):
    if path.exists() and not force:
        raise UsageError(f"{path} already exists; pass --force to overwrite")


def parse_options(pairs: Optional[List[str]]) -> Dict[str, object]:
    """key=value pairs; integer values are converted."""
    options = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"Expected key=value, got '{pair}'")
        key, value = pair.split("=", 1)
        try:
            options[key] = int(value)
        except ValueError:
            options[key] = value
    return options
