"""Versioned joblib persistence for parameters, models and training bundles."""
import os
from pathlib import Path
from typing import Any, Dict, Union

import joblib

from spaars.config import settings
from spaars.utils.errors import ConfigurationError

PathLike = Union[str, os.PathLike]


def resolve_output(path: PathLike) -> Path:
    """Resolve a relative output path against SPAARS_OUTPUT_ROOT."""
    path = Path(path)
    if path.is_absolute():
        return path
    return Path(settings.OUTPUT_ROOT) / path


def save_payload(path: PathLike, kind: str, payload: Dict[str, Any]) -> Path:
    """
    Write a versioned payload with joblib.

    Args:
        path: Destination file
        kind: Payload kind tag checked on load
        payload: Picklable content

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"format_version": settings.FORMAT_VERSION, "kind": kind, **payload}, path)
    return path


def load_payload(path: PathLike, kind: str) -> Dict[str, Any]:
    """
    Read a payload written by save_payload and check its version and kind.

    Raises:
        ConfigurationError: If the file is missing or has another version/kind
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Checkpoint not found: {path}")

    payload = joblib.load(path)
    if not isinstance(payload, dict) or payload.get("format_version") != settings.FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported checkpoint format in {path}")
    if payload.get("kind") != kind:
        raise ConfigurationError(
            f"Checkpoint {path} holds '{payload.get('kind')}', expected '{kind}'"
        )
    return payload
