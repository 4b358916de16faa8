"""
Model bundles: JSON lines of evolved models.
"""

import json
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import structlog

from ..errors import InputValidationError
from .evolve import EvolvedModel

logger = structlog.get_logger(__name__)


def write_bundle(models: Iterable[EvolvedModel], path: Union[str, Path]) -> None:
    """Write one JSON object per model."""
    lines = [json.dumps(m.to_dict(), sort_keys=True) for m in models]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_bundle(path: Union[str, Path]) -> List[EvolvedModel]:
    """Read and validate every model of a bundle file."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise InputValidationError(f"cannot read model bundle: {e}", str(path)) from e

    models: List[EvolvedModel] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{line_no}"
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputValidationError(f"invalid JSON: {e.msg}", where) from None
        if not isinstance(data, dict):
            raise InputValidationError("model record must be an object", where)
        try:
            models.append(EvolvedModel.from_dict(data))
        except InputValidationError as e:
            raise InputValidationError(str(e), where) from None
    if not models:
        raise InputValidationError("model bundle is empty", str(path))
    logger.debug("bundle_read", path=str(path), models=len(models))
    return models


def read_bundles(paths: Sequence[Union[str, Path]]) -> List[EvolvedModel]:
    """Concatenation of several bundle files, in argument order."""
    models: List[EvolvedModel] = []
    for path in paths:
        models.extend(read_bundle(path))
    return models


def write_model(model: EvolvedModel, path: Union[str, Path]) -> None:
    """Write a single model as a JSON document."""
    Path(path).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
