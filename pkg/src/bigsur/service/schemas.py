"""Request bodies. Responses mirror canonical record serialization as plain dicts."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class RecordIn(BaseModel):
    kind: str
    body: dict[str, Any]


class JobIn(BaseModel):
    function: str
    inputs: list[str] = Field(default_factory=list)
    params: dict[str, str] = Field(default_factory=dict)
    priority: int = 0
    constraints: Optional[list[str]] = None


class ClaimIn(BaseModel):
    host: str


class OutputIn(BaseModel):
    name: str
    uri: str
    types: list[str]
    id: Optional[str] = None


class ReportIn(BaseModel):
    outcome: str
    host: str
    outputs: Optional[list[OutputIn]] = None


class ControlIn(BaseModel):
    command: str
    target: Optional[str] = None
    value: Optional[int] = None
