"""Interpreter for one subject's behavior graph.

Each stimulus (task answer or message delivery) advances exactly one state
transition and returns the new instance plus the effects the host must carry
out: task creation, message dispatch, refinement invocation, end-state entry.
Instances are immutable; apply_* functions return fresh instances, which
makes snapshot/restore trivial and replay deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Optional, Union

from .model import BehaviorGraph, FunctionState, ReceiveState, SendState, State


class Phase(str, Enum):
    AWAITING_TASK = "AwaitingTask"
    AWAITING_MESSAGE = "AwaitingMessage"
    IN_END_STATE = "InEndState"


class EngineError(Exception):
    pass


class WrongPhase(EngineError):
    pass


class InvalidTransition(EngineError):
    pass


class IllegalWrite(EngineError):
    pass


class TypeMismatch(EngineError):
    pass


class StateNotInGraph(EngineError):
    pass


@dataclass(frozen=True)
class TaskParam:
    name: str
    value: str
    writable: bool


@dataclass(frozen=True)
class CreateTask:
    """Ask the host to persist an open task for the state just entered."""

    state_id: str
    kind: str  # "function" | "send" | "receive"
    name: str
    transitions: tuple[str, ...] = ()
    to_subject: Optional[str] = None
    message_type: Optional[str] = None
    message_types: tuple[str, ...] = ()
    params: tuple[TaskParam, ...] = ()


@dataclass(frozen=True)
class SendMessage:
    message_type: str
    to_subject: str
    params: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class InvokeRefinement:
    name: str
    state_id: str
    variables: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class EnteredEndState:
    state_id: str


@dataclass(frozen=True)
class Halted:
    """No further stimuli will be accepted."""


Effect = Union[CreateTask, SendMessage, InvokeRefinement, EnteredEndState, Halted]


@dataclass(frozen=True)
class Snapshot:
    """Durable capture of an instance between stimuli."""

    current_state: str
    variables: tuple[tuple[str, str], ...]
    pending_task: Optional[str] = None


@dataclass(frozen=True)
class EngineInstance:
    siid: str
    behavior: BehaviorGraph
    current_state: str
    variables: Mapping[str, str]
    phase: Phase

    def var(self, name: str) -> str:
        # unwritten variables read as empty string
        return self.variables.get(name, "")

    def state(self) -> State:
        state = self.behavior.state(self.current_state)
        assert state is not None
        return state


def _freeze(variables: Mapping[str, str]) -> Mapping[str, str]:
    return MappingProxyType(dict(variables))


def _phase_for(state: State) -> Phase:
    if state.is_end:
        return Phase.IN_END_STATE
    if isinstance(state, ReceiveState):
        return Phase.AWAITING_MESSAGE
    return Phase.AWAITING_TASK


def _entry_effects(state: State, variables: Mapping[str, str]) -> list[Effect]:
    """Effects produced by arriving at a state: its task, or end-of-life."""
    if state.is_end:
        return [EnteredEndState(state.id), Halted()]
    params = tuple(
        [TaskParam(p, variables.get(p, ""), False)
         for p in getattr(state, "read_params", ())]
        + [TaskParam(p, variables.get(p, ""), True)
           for p in getattr(state, "write_params", ())]
    )
    if isinstance(state, FunctionState):
        return [CreateTask(
            state_id=state.id, kind="function", name=state.name,
            transitions=tuple(t.label for t in state.transitions),
            params=params)]
    if isinstance(state, SendState):
        return [CreateTask(
            state_id=state.id, kind="send", name=state.name,
            to_subject=state.to_subject, message_type=state.message_type,
            params=params)]
    assert isinstance(state, ReceiveState)
    return [CreateTask(
        state_id=state.id, kind="receive", name=state.name,
        message_types=state.message_types)]


def _enter(inst: EngineInstance, state_id: str) -> tuple[EngineInstance, list[Effect]]:
    state = inst.behavior.state(state_id)
    if state is None:
        raise StateNotInGraph(f"state {state_id!r} not in behavior graph")
    new = replace(inst, current_state=state_id, phase=_phase_for(state))
    return new, _entry_effects(state, new.variables)


def instantiate(behavior: BehaviorGraph, siid: str) -> tuple[EngineInstance, list[Effect]]:
    """Position a fresh instance at the start state and emit its first task."""
    inst = EngineInstance(
        siid=siid, behavior=behavior, current_state=behavior.start_state,
        variables=_freeze({}), phase=Phase.AWAITING_TASK)
    return _enter(inst, behavior.start_state)


def _require_state(inst: EngineInstance, expected_phase: Phase, kind: type) -> State:
    if inst.phase != expected_phase:
        raise WrongPhase(
            f"instance {inst.siid} is {inst.phase.value}, "
            f"expected {expected_phase.value}")
    state = inst.state()
    if not isinstance(state, kind):
        raise WrongPhase(
            f"current state {state.id!r} is a {state.kind} state")
    return state


def _write(inst: EngineInstance, state: State,
           writes: Mapping[str, str]) -> EngineInstance:
    allowed = set(getattr(state, "write_params", ()))
    illegal = set(writes) - allowed
    if illegal:
        raise IllegalWrite(f"parameters not writable here: {sorted(illegal)}")
    merged = dict(inst.variables)
    merged.update(writes)
    return replace(inst, variables=_freeze(merged))


def apply_function_answer(
    inst: EngineInstance,
    label: str,
    writes: Mapping[str, str],
) -> tuple[EngineInstance, list[Effect]]:
    """Apply a function-task answer: write params, run refinement, transition."""
    state = _require_state(inst, Phase.AWAITING_TASK, FunctionState)
    target = None
    for t in state.transitions:
        if t.label == label:
            target = t.target
    if target is None:
        raise InvalidTransition(
            f"label {label!r} not offered by state {state.id!r}")
    inst = _write(inst, state, writes)
    effects: list[Effect] = []
    if state.refinement:
        effects.append(InvokeRefinement(
            state.refinement, state.id, tuple(sorted(inst.variables.items()))))
    new, entry = _enter(inst, target)
    return new, effects + entry


def apply_refinement_writes(
    inst: EngineInstance, writes: Mapping[str, str]
) -> EngineInstance:
    """Merge variable writes returned by a refinement callback."""
    merged = dict(inst.variables)
    merged.update(writes)
    return replace(inst, variables=_freeze(merged))


def apply_send_answer(
    inst: EngineInstance,
    writes: Mapping[str, str],
) -> tuple[EngineInstance, list[Effect]]:
    """Apply a send-task answer: write params, emit the message, transition."""
    state = _require_state(inst, Phase.AWAITING_TASK, SendState)
    inst = _write(inst, state, writes)
    payload = tuple((p, inst.var(p)) for p in state.sent_params)
    effects: list[Effect] = [
        SendMessage(state.message_type, state.to_subject, payload)]
    assert state.target is not None  # validated model: non-end send has target
    new, entry = _enter(inst, state.target)
    return new, effects + entry


def apply_receive(
    inst: EngineInstance,
    message_type: str,
    params: Mapping[str, str],
) -> tuple[EngineInstance, list[Effect]]:
    """Consume a message: merge its params into variables, transition."""
    state = _require_state(inst, Phase.AWAITING_MESSAGE, ReceiveState)
    if message_type not in state.message_types:
        raise TypeMismatch(
            f"state {state.id!r} does not accept message type {message_type!r}")
    merged = dict(inst.variables)
    merged.update(params)
    inst = replace(inst, variables=_freeze(merged))
    assert state.target is not None
    return _enter(inst, state.target)


def snapshot(inst: EngineInstance, pending_task: Optional[str] = None) -> Snapshot:
    return Snapshot(
        current_state=inst.current_state,
        variables=tuple(sorted(inst.variables.items())),
        pending_task=pending_task)


def restore(behavior: BehaviorGraph, snap: Snapshot, siid: str) -> EngineInstance:
    """Rebuild an instance from a snapshot; behaves identically afterwards."""
    state = behavior.state(snap.current_state)
    if state is None:
        raise StateNotInGraph(
            f"snapshot state {snap.current_state!r} not in behavior graph")
    return EngineInstance(
        siid=siid, behavior=behavior, current_state=snap.current_state,
        variables=_freeze(dict(snap.variables)), phase=_phase_for(state))
