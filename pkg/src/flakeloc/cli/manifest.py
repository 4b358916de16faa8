"""
Run manifests written beside every output.

A manifest records the tool version, command, arguments, settings and seed.
It carries no timestamps, so reruns produce identical files.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .. import __version__
from ..settings import Settings

MANIFEST_NAME = "run_manifest.json"


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def build_manifest(command: str, arguments: Mapping[str, Any], settings: Settings) -> Dict[str, Any]:
    """Manifest contents for one command invocation."""
    return {
        "tool": "flakeloc",
        "version": __version__,
        "command": command,
        "arguments": _plain(dict(arguments)),
        "settings": settings.to_dict(),
        "seed": settings.seed,
    }


def manifest_path(output: Path, is_directory: bool) -> Path:
    """``run_manifest.json`` inside a directory, ``<file>.manifest.json`` beside a file."""
    return output / MANIFEST_NAME if is_directory else output.with_name(output.name + ".manifest.json")


def write_manifest(
    output: Path,
    command: str,
    arguments: Mapping[str, Any],
    settings: Settings,
    is_directory: Optional[bool] = None,
) -> Path:
    """Write the manifest for ``output`` and return its path."""
    if is_directory is None:
        is_directory = output.is_dir()
    path = manifest_path(output, is_directory)
    manifest = build_manifest(command, arguments, settings)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
