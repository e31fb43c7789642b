"""Typed tool calls: parse model text into validated, schema-checked calls.

Model output carries at most one fenced block tagged ``tool`` holding a JSON
object ``{"tool": <name>, "args": {...}}``. Parsing resolves the tool by
name, coerces each argument to its declared semantic type, enforces required
parameters, and (in strict mode, the default) rejects unknown arguments.
"""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from finorch.errors import (
    MissingRequiredParam,
    NoCallBlock,
    TypeMismatch,
    UnknownParam,
    UnknownTool,
)

__all__ = [
    "SEMANTIC_TYPES",
    "ToolCall",
    "ToolParam",
    "ToolSchema",
    "render_call",
    "text2params",
    "validate_call",
]

SEMANTIC_TYPES = ("string", "number", "integer", "boolean", "date", "enum")

_CALL_BLOCK = re.compile(r"```tool\s+(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ToolParam:
    """One declared parameter of a tool."""

    name: str
    type: str
    required: bool = True
    values: tuple[str, ...] = ()  # enum members; empty for other types

    def __post_init__(self) -> None:
        if self.type not in SEMANTIC_TYPES:
            raise ValueError(
                f"parameter {self.name!r}: unknown semantic type {self.type!r}"
            )
        if self.type == "enum" and not self.values:
            raise ValueError(f"enum parameter {self.name!r} needs values")
        if self.type != "enum" and self.values:
            raise ValueError(
                f"parameter {self.name!r}: only enum parameters take values"
            )

    def describe_type(self) -> str:
        if self.type == "enum":
            return "enum(" + ", ".join(self.values) + ")"
        return self.type


@dataclass(frozen=True)
class ToolSchema:
    """Declared shape of one callable tool."""

    tool_name: str
    description: str
    parameters: tuple[ToolParam, ...] = ()
    strict: bool = True  # reject unknown arguments; lenient keeps them as-is

    def __post_init__(self) -> None:
        names = [p.name for p in self.parameters]
        if len(names) != len(set(names)):
            raise ValueError(
                f"schema {self.tool_name!r}: duplicate parameter names"
            )

    def param(self, name: str) -> ToolParam | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class ToolCall:
    """A validated call; ``origin_text`` preserves the model text for audit."""

    tool_name: str
    arguments: Mapping[str, Any]
    origin_text: str = field(default="", compare=False)


def _coerce(param: ToolParam, value: Any) -> Any:
    """Coerce a JSON-decoded value to the parameter's semantic type."""
    kind = param.type
    if kind == "string":
        if isinstance(value, str):
            return value
    elif kind == "number":
        if isinstance(value, bool):
            pass  # bools are not numbers
        elif isinstance(value, (int, float)):
            return float(value)
        elif isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif kind == "integer":
        if isinstance(value, bool):
            pass
        elif isinstance(value, int):
            return value
        elif isinstance(value, float) and value.is_integer():
            return int(value)
        elif isinstance(value, str):
            try:
                return int(value, 10)
            except ValueError:
                pass
    elif kind == "boolean":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
    elif kind == "date":
        if isinstance(value, dt.date) and not isinstance(value, dt.datetime):
            return value
        if isinstance(value, str):
            try:
                return dt.date.fromisoformat(value)
            except ValueError:
                pass
    elif kind == "enum":
        if isinstance(value, str) and value in param.values:
            return value
    raise TypeMismatch(param.name, param.describe_type())


def _validate_arguments(
    raw: Mapping[str, Any], schema: ToolSchema
) -> dict[str, Any]:
    known = {p.name for p in schema.parameters}
    out: dict[str, Any] = {}
    for name, value in raw.items():
        if name not in known:
            if schema.strict:
                raise UnknownParam(name)
            out[name] = value  # lenient: pass through untouched
            continue
        param = schema.param(name)
        assert param is not None
        out[name] = _coerce(param, value)
    for p in schema.parameters:
        if p.required and p.name not in raw:
            raise MissingRequiredParam(p.name)
    return out


def text2params(model_text: str, schemas: Sequence[ToolSchema]) -> ToolCall:
    """Extract the fenced tool block from model text and validate it.

    If several blocks are present the first one wins (parallel calls in one
    turn are out of scope).
    """
    match = _CALL_BLOCK.search(model_text)
    if match is None:
        raise NoCallBlock("no fenced tool block found in model text")
    try:
        payload = json.loads(match.group(1))
    except json.JSONDecodeError as exc:
        raise NoCallBlock(f"tool block is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "tool" not in payload:
        raise NoCallBlock("tool block must be an object with a 'tool' key")
    tool_name = payload["tool"]
    args = payload.get("args", {})
    if not isinstance(args, dict):
        raise NoCallBlock("'args' must be an object")
    by_name = {s.tool_name: s for s in schemas}
    if tool_name not in by_name:
        raise UnknownTool(f"unknown tool {tool_name!r}")
    schema = by_name[tool_name]
    arguments = _validate_arguments(args, schema)
    return ToolCall(
        tool_name=tool_name, arguments=arguments, origin_text=model_text
    )


def validate_call(call: ToolCall, schema: ToolSchema) -> ToolCall:
    """Re-run validation on an existing call; identity on valid input."""
    if call.tool_name != schema.tool_name:
        raise UnknownTool(
            f"call names {call.tool_name!r} but schema is {schema.tool_name!r}"
        )
    arguments = _validate_arguments(call.arguments, schema)
    if arguments == dict(call.arguments):
        return call
    return ToolCall(
        tool_name=call.tool_name,
        arguments=arguments,
        origin_text=call.origin_text,
    )


def _json_ready(value: Any) -> Any:
    if isinstance(value, dt.date) and not isinstance(value, dt.datetime):
        return value.isoformat()
    return value


def render_call(call: ToolCall) -> str:
    """Serialize a call back to its fenced-block form (re-parseable)."""
    payload = {
        "tool": call.tool_name,
        "args": {k: _json_ready(v) for k, v in call.arguments.items()},
    }
    body = json.dumps(payload, ensure_ascii=False, sort_keys=True)
    return f"```tool\n{body}\n```"
