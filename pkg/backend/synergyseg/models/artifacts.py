"""Provenance block embedded in every written artifact."""

from typing import Any

from pydantic import BaseModel, Field


class Provenance(BaseModel):
    """Where an artifact came from; `created_at` is the only time-dependent field."""

    tool_version: str
    resolved_config: dict[str, Any] = Field(default_factory=dict)
    input_hashes: dict[str, str] = Field(default_factory=dict)
    created_at: str = ""
