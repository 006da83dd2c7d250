"""Provenance blocks and JSON artifact writing."""

import hashlib
import json
import logging
from collections.abc import Mapping
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, TypeVar, Union

from pydantic import BaseModel, ValidationError

from synergyseg import __version__
from synergyseg.errors import IOFailure, UnreadableFile
from synergyseg.models import Provenance

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def file_sha256(path: Union[str, Path]) -> str:
    """SHA-256 of a file, or of the sorted (name, digest) listing of a directory."""
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(child.relative_to(path)).encode("utf-8"))
            digest.update(file_sha256(child).encode("ascii"))
        return digest.hexdigest()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_provenance(
    resolved_config: Mapping[str, Any], inputs: Optional[Mapping[str, Union[str, Path]]] = None
) -> Provenance:
    """Build the provenance block for an artifact."""
    hashes = {}
    for name, path in (inputs or {}).items():
        if Path(path).exists():
            hashes[name] = file_sha256(path)
    return Provenance(
        tool_version=__version__,
        resolved_config=json.loads(json.dumps(dict(resolved_config), default=str)),
        input_hashes=hashes,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def write_json_artifact(
    model: BaseModel, path: Union[str, Path], provenance: Optional[Provenance] = None
) -> Path:
    """Write a model as indented JSON, embedding provenance when the model supports it."""
    path = Path(path)
    if provenance is not None and "provenance" in type(model).model_fields:
        model = model.model_copy(update={"provenance": provenance})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(model.model_dump_json(indent=2, exclude_none=True), encoding="utf-8")
    except OSError as e:
        raise IOFailure(f"Failed to write {path}: {e}") from e
    logger.debug(f"Wrote {type(model).__name__} to {path}")
    return path


def read_json_artifact(model_type: type[ModelT], path: Union[str, Path]) -> ModelT:
    """Read an artifact written by write_json_artifact."""
    path = Path(path)
    try:
        return model_type.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise UnreadableFile(f"{path}: {e}") from e
    except ValidationError as e:
        raise UnreadableFile(f"{path}: invalid {model_type.__name__}: {e}") from e
