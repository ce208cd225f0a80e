"""Canonical on-disk format for process definitions.

Documents are UTF-8 JSON with a top-level format_version. Serialization is
canonical: sorted keys, 2-space indent, trailing newline, so equal documents
are byte-equal. Parsing is strict: unknown fields and mistyped values are
rejected with a JSON-pointer path. Structural checks only; run
model.validate separately for semantic checks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .model import (
    BehaviorGraph,
    FunctionState,
    ProcessDefinition,
    ReceiveState,
    SendState,
    State,
    SubjectDefinition,
    Transition,
)

FORMAT_VERSION = 1


class DefinitionSyntaxError(ValueError):
    """Input is not well-formed JSON."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(ValueError):
    """Well-formed JSON that does not match the document schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class VersionError(ValueError):
    """Unsupported format_version."""

    def __init__(self, found: Any):
        super().__init__(f"unsupported format_version {found!r}, expected {FORMAT_VERSION}")
        self.found = found


@dataclass(frozen=True)
class DefinitionDocument:
    format_version: int
    process: ProcessDefinition


def parse_definition(data: bytes) -> DefinitionDocument:
    """Parse document bytes into a structurally checked DefinitionDocument."""
    try:
        raw = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DefinitionSyntaxError("invalid UTF-8", exc.start) from exc
    except json.JSONDecodeError as exc:
        raise DefinitionSyntaxError(exc.msg, exc.pos) from exc

    obj = _object(raw, "", {"format_version", "process"})
    version = _field(obj, "", "format_version", int)
    if version != FORMAT_VERSION:
        raise VersionError(version)
    process = _parse_process(_field(obj, "", "process", dict), "/process")
    return DefinitionDocument(format_version=version, process=process)


def _parse_process(raw: Any, path: str) -> ProcessDefinition:
    obj = _object(raw, path, {"pid", "name", "subjects"})
    subjects = tuple(
        _parse_subject(item, f"{path}/subjects/{i}")
        for i, item in enumerate(_field(obj, path, "subjects", list))
    )
    return ProcessDefinition(
        pid=_field(obj, path, "pid", str),
        name=_field(obj, path, "name", str),
        subjects=subjects,
    )


def _parse_subject(raw: Any, path: str) -> SubjectDefinition:
    obj = _object(raw, path, {"sid", "name", "can_be_started", "behavior"})
    return SubjectDefinition(
        sid=_field(obj, path, "sid", str),
        name=_field(obj, path, "name", str),
        can_be_started=_field(obj, path, "can_be_started", bool),
        behavior=_parse_behavior(_field(obj, path, "behavior", dict), f"{path}/behavior"),
    )


def _parse_behavior(raw: Any, path: str) -> BehaviorGraph:
    obj = _object(raw, path, {"start_state", "states"})
    states = tuple(
        _parse_state(item, f"{path}/states/{i}")
        for i, item in enumerate(_field(obj, path, "states", list))
    )
    return BehaviorGraph(
        start_state=_field(obj, path, "start_state", str),
        states=states,
    )

_STATE_FIELDS = {
    "function": {"id", "kind", "name", "is_end", "read_params", "write_params",
                 "transitions", "refinement"},
    "send": {"id", "kind", "name", "is_end", "read_params", "write_params",
             "to_subject", "message_type", "sent_params", "target"},
    "receive": {"id", "kind", "name", "is_end", "message_types", "target"},
}


def _parse_state(raw: Any, path: str) -> State:
    if not isinstance(raw, dict):
        raise SchemaError(path, f"expected object, got {type(raw).__name__}")
    kind = raw.get("kind")
    if kind not in _STATE_FIELDS:
        raise SchemaError(f"{path}/kind", f"unknown state kind {kind!r}")
    obj = _object(raw, path, _STATE_FIELDS[kind])
    common = dict(
        id=_field(obj, path, "id", str),
        name=_field(obj, path, "name", str),
        is_end=_field(obj, path, "is_end", bool),
    )
    if kind == "function":
        transitions = tuple(
            _parse_transition(item, f"{path}/transitions/{i}")
            for i, item in enumerate(_field(obj, path, "transitions", list))
        )
        return FunctionState(
            **common,
            read_params=_str_list(obj, path, "read_params"),
            write_params=_str_list(obj, path, "write_params"),
            transitions=transitions,
            refinement=_field(obj, path, "refinement", str, nullable=True),
        )
    if kind == "send":
        return SendState(
            **common,
            read_params=_str_list(obj, path, "read_params"),
            write_params=_str_list(obj, path, "write_params"),
            to_subject=_field(obj, path, "to_subject", str),
            message_type=_field(obj, path, "message_type", str),
            sent_params=_str_list(obj, path, "sent_params"),
            target=_field(obj, path, "target", str, nullable=True),
        )
    return ReceiveState(
        **common,
        message_types=_str_list(obj, path, "message_types"),
        target=_field(obj, path, "target", str, nullable=True),
    )


def _parse_transition(raw: Any, path: str) -> Transition:
    obj = _object(raw, path, {"label", "target"})
    return Transition(
        label=_field(obj, path, "label", str),
        target=_field(obj, path, "target", str),
    )


def _object(raw: Any, path: str, allowed: set[str]) -> dict:
    if not isinstance(raw, dict):
        raise SchemaError(path or "/", f"expected object, got {type(raw).__name__}")
    extra = set(raw) - allowed
    if extra:
        key = sorted(extra)[0]
        raise SchemaError(f"{path}/{key}", f"unknown field {key!r}")
    return raw


def _field(obj: dict, path: str, key: str, expected: type, nullable: bool = False):
    if key not in obj:
        raise SchemaError(f"{path}/{key}", "missing required field")
    value = obj[key]
    if value is None and nullable:
        return None
    # bool is an int subclass; keep the two distinct
    if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
        raise SchemaError(
            f"{path}/{key}",
            f"expected {expected.__name__}, got {type(value).__name__}")
    return value


def _str_list(obj: dict, path: str, key: str) -> tuple[str, ...]:
    items = _field(obj, path, key, list)
    for i, item in enumerate(items):
        if not isinstance(item, str):
            raise SchemaError(f"{path}/{key}/{i}", "expected string")
    return tuple(items)


def serialize_definition(doc: DefinitionDocument) -> bytes:
    """Serialize to canonical bytes: sorted keys, 2-space indent, trailing newline."""
    payload = {
        "format_version": doc.format_version,
        "process": _process_to_json(doc.process),
    }
    text = json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def _process_to_json(process: ProcessDefinition) -> dict:
    return {
        "pid": process.pid,
        "name": process.name,
        "subjects": [
            {
                "sid": s.sid,
                "name": s.name,
                "can_be_started": s.can_be_started,
                "behavior": {
                    "start_state": s.behavior.start_state,
                    "states": [_state_to_json(st) for st in s.behavior.states],
                },
            }
            for s in process.subjects
        ],
    }


def _state_to_json(state: State) -> dict:
    common = {"id": state.id, "kind": state.kind, "name": state.name,
              "is_end": state.is_end}
    if isinstance(state, FunctionState):
        return {
            **common,
            "read_params": list(state.read_params),
            "write_params": list(state.write_params),
            "transitions": [{"label": t.label, "target": t.target}
                            for t in state.transitions],
            "refinement": state.refinement,
        }
    if isinstance(state, SendState):
        return {
            **common,
            "read_params": list(state.read_params),
            "write_params": list(state.write_params),
            "to_subject": state.to_subject,
            "message_type": state.message_type,
            "sent_params": list(state.sent_params),
            "target": state.target,
        }
    return {
        **common,
        "message_types": list(state.message_types),
        "target": state.target,
    }
