"""Domain model for subject-oriented processes.

A process is a set of subjects (independent state machines) that interact
only by exchanging typed messages. Each subject's behavior is a graph of
function, send, and receive states. All types here are immutable after
construction and safe to share between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union


@dataclass(frozen=True)
class Transition:
    """A labeled arc out of a function state."""

    label: str
    target: str


@dataclass(frozen=True)
class FunctionState:
    """Internal action state: the agent picks one transition and may edit parameters."""

    id: str
    name: str
    is_end: bool = False
    read_params: tuple[str, ...] = ()
    write_params: tuple[str, ...] = ()
    transitions: tuple[Transition, ...] = ()
    refinement: Optional[str] = None

    kind = "function"

    def targets(self) -> tuple[str, ...]:
        return tuple(t.target for t in self.transitions)


@dataclass(frozen=True)
class SendState:
    """Dispatches one typed message to another subject, then moves to `target`."""

    id: str
    name: str
    to_subject: str
    message_type: str
    is_end: bool = False
    read_params: tuple[str, ...] = ()
    write_params: tuple[str, ...] = ()
    sent_params: tuple[str, ...] = ()
    target: Optional[str] = None

    kind = "send"

    def targets(self) -> tuple[str, ...]:
        return (self.target,) if self.target is not None else ()


@dataclass(frozen=True)
class ReceiveState:
    """Blocks until a message of an acceptable type is consumed, then moves to `target`."""

    id: str
    name: str
    message_types: tuple[str, ...] = ()
    is_end: bool = False
    target: Optional[str] = None

    kind = "receive"

    def targets(self) -> tuple[str, ...]:
        return (self.target,) if self.target is not None else ()


State = Union[FunctionState, SendState, ReceiveState]


@dataclass(frozen=True)
class BehaviorGraph:
    """One subject's state machine. `states` keeps model order; ids are unique."""

    start_state: str
    states: tuple[State, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {s.id: s for s in self.states})

    def state(self, state_id: str) -> Optional[State]:
        return self._by_id.get(state_id)

    def state_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.states)


@dataclass(frozen=True)
class SubjectDefinition:
    sid: str
    name: str
    can_be_started: bool
    behavior: BehaviorGraph


@dataclass(frozen=True)
class ProcessDefinition:
    pid: str
    name: str
    subjects: tuple[SubjectDefinition, ...] = ()

    def subject_by_name(self, name: str) -> Optional[SubjectDefinition]:
        for s in self.subjects:
            if s.name == name:
                return s
        return None


@dataclass(frozen=True)
class ParameterBinding:
    """A named opaque value. Payload semantics belong to the caller."""

    name: str
    value: str


class ViolationCode(str, Enum):
    NO_SUBJECTS = "NO_SUBJECTS"
    NO_STARTABLE_SUBJECT = "NO_STARTABLE_SUBJECT"
    EMPTY_PROCESS_NAME = "EMPTY_PROCESS_NAME"
    DUPLICATE_SID = "DUPLICATE_SID"
    DUPLICATE_SUBJECT_NAME = "DUPLICATE_SUBJECT_NAME"
    DUPLICATE_STATE_ID = "DUPLICATE_STATE_ID"
    UNKNOWN_START_STATE = "UNKNOWN_START_STATE"
    DANGLING_TRANSITION = "DANGLING_TRANSITION"
    NO_END_STATE = "NO_END_STATE"
    UNREACHABLE_END = "UNREACHABLE_END"
    END_STATE_HAS_TRANSITIONS = "END_STATE_HAS_TRANSITIONS"
    MISSING_TRANSITIONS = "MISSING_TRANSITIONS"
    MISSING_TARGET = "MISSING_TARGET"
    DUPLICATE_TRANSITION_LABEL = "DUPLICATE_TRANSITION_LABEL"
    RECEIVE_NO_MESSAGE_TYPES = "RECEIVE_NO_MESSAGE_TYPES"
    READ_WRITE_OVERLAP = "READ_WRITE_OVERLAP"
    UNKNOWN_TO_SUBJECT = "UNKNOWN_TO_SUBJECT"
    NO_MATCHING_RECEIVE = "NO_MATCHING_RECEIVE"
    ORPHAN_RECEIVE = "ORPHAN_RECEIVE"  # warning severity


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.code.value} at {self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    warnings: tuple[Violation, ...] = ()

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def codes(self) -> set[ViolationCode]:
        return {v.code for v in self.violations}


def validate(definition: ProcessDefinition) -> ValidationReport:
    """Check every structural invariant of a process definition.

    Violations are reported in deterministic order: process-level checks
    first, then per subject in model order, states sorted by id. Warnings
    (receive types with no in-process sender) never make the model invalid.
    """
    violations: list[Violation] = []
    warnings: list[Violation] = []

    if not definition.name:
        violations.append(Violation(
            ViolationCode.EMPTY_PROCESS_NAME, "/process/name",
            "process name must be non-empty"))
    if not definition.subjects:
        violations.append(Violation(
            ViolationCode.NO_SUBJECTS, "/process/subjects", "no subjects"))
    elif not any(s.can_be_started for s in definition.subjects):
        violations.append(Violation(
            ViolationCode.NO_STARTABLE_SUBJECT, "/process/subjects",
            "no subject has can_be_started = true"))

    seen_sids: set[str] = set()
    seen_names: set[str] = set()
    for i, subject in enumerate(definition.subjects):
        path = f"/process/subjects/{i}"
        if subject.sid in seen_sids:
            violations.append(Violation(
                ViolationCode.DUPLICATE_SID, f"{path}/sid",
                f"duplicate subject id {subject.sid!r}"))
        seen_sids.add(subject.sid)
        if subject.name in seen_names:
            violations.append(Violation(
                ViolationCode.DUPLICATE_SUBJECT_NAME, f"{path}/name",
                f"duplicate subject name {subject.name!r}"))
        seen_names.add(subject.name)
        violations.extend(_check_behavior(subject, path))

    violations.extend(_check_message_closure(definition))
    warnings.extend(_orphan_receive_warnings(definition))
    return ValidationReport(tuple(violations), tuple(warnings))


def _check_behavior(subject: SubjectDefinition, path: str) -> list[Violation]:
    out: list[Violation] = []
    behavior = subject.behavior
    ids: set[str] = set()
    for s in behavior.states:
        if s.id in ids:
            out.append(Violation(
                ViolationCode.DUPLICATE_STATE_ID, f"{path}/behavior/states",
                f"duplicate state id {s.id!r}"))
        ids.add(s.id)

    if behavior.start_state not in ids:
        out.append(Violation(
            ViolationCode.UNKNOWN_START_STATE, f"{path}/behavior/start_state",
            f"start state {behavior.start_state!r} is not defined"))

    for s in sorted(behavior.states, key=lambda st: st.id):
        spath = f"{path}/behavior/states/{s.id}"
        out.extend(_check_state(s, ids, spath))

    end_ids = {s.id for s in behavior.states if s.is_end}
    if not end_ids:
        out.append(Violation(
            ViolationCode.NO_END_STATE, f"{path}/behavior/states",
            "behavior has no end state"))
    else:
        reaching = _states_reaching(behavior, end_ids)
        for s in sorted(behavior.states, key=lambda st: st.id):
            if s.id not in reaching:
                out.append(Violation(
                    ViolationCode.UNREACHABLE_END,
                    f"{path}/behavior/states/{s.id}",
                    f"state {s.id!r} cannot reach any end state"))
    return out


def _check_state(s: State, ids: set[str], spath: str) -> list[Violation]:
    out: list[Violation] = []
    for target in s.targets():
        if target not in ids:
            out.append(Violation(
                ViolationCode.DANGLING_TRANSITION, spath,
                f"transition target {target!r} is not a state in this behavior"))

    if s.is_end and s.targets():
        out.append(Violation(
            ViolationCode.END_STATE_HAS_TRANSITIONS, spath,
            "end states must have no outgoing transitions"))

    if isinstance(s, FunctionState):
        if not s.is_end and not s.transitions:
            out.append(Violation(
                ViolationCode.MISSING_TRANSITIONS, spath,
                "non-end function state needs at least one transition"))
        labels = [t.label for t in s.transitions]
        for label in sorted({l for l in labels if labels.count(l) > 1}):
            out.append(Violation(
                ViolationCode.DUPLICATE_TRANSITION_LABEL, spath,
                f"transition label {label!r} used more than once"))
    elif isinstance(s, SendState):
        if not s.is_end and s.target is None:
            out.append(Violation(
                ViolationCode.MISSING_TARGET, spath,
                "non-end send state needs a target"))
    elif isinstance(s, ReceiveState):
        if not s.message_types:
            out.append(Violation(
                ViolationCode.RECEIVE_NO_MESSAGE_TYPES, spath,
                "receive state accepts no message types"))
        if not s.is_end and s.target is None:
            out.append(Violation(
                ViolationCode.MISSING_TARGET, spath,
                "non-end receive state needs a target"))

    read = set(getattr(s, "read_params", ()))
    write = set(getattr(s, "write_params", ()))
    overlap = read & write
    if overlap:
        out.append(Violation(
            ViolationCode.READ_WRITE_OVERLAP, spath,
            f"parameters both read-only and writable: {sorted(overlap)}"))
    return out


def _states_reaching(behavior: BehaviorGraph, goal_ids: set[str]) -> set[str]:
    """Reverse reachability: all states with a path into `goal_ids`."""
    incoming: dict[str, set[str]] = {s.id: set() for s in behavior.states}
    for s in behavior.states:
        for target in s.targets():
            if target in incoming:
                incoming[target].add(s.id)
    reached = set(goal_ids)
    frontier = list(goal_ids)
    while frontier:
        current = frontier.pop()
        for pred in incoming.get(current, ()):
            if pred not in reached:
                reached.add(pred)
                frontier.append(pred)
    return reached


def _check_message_closure(definition: ProcessDefinition) -> list[Violation]:
    out: list[Violation] = []
    for i, subject in enumerate(definition.subjects):
        for s in sorted(subject.behavior.states, key=lambda st: st.id):
            if not isinstance(s, SendState):
                continue
            spath = f"/process/subjects/{i}/behavior/states/{s.id}"
            recipient = definition.subject_by_name(s.to_subject)
            if recipient is None:
                out.append(Violation(
                    ViolationCode.UNKNOWN_TO_SUBJECT, spath,
                    f"unknown to_subject {s.to_subject!r}"))
                continue
            accepted = {
                mt for r in recipient.behavior.states
                if isinstance(r, ReceiveState) for mt in r.message_types
            }
            if s.message_type not in accepted:
                out.append(Violation(
                    ViolationCode.NO_MATCHING_RECEIVE, spath,
                    f"subject {s.to_subject!r} has no receive state accepting "
                    f"{s.message_type!r}"))
    return out


def _orphan_receive_warnings(definition: ProcessDefinition) -> list[Violation]:
    sent: set[str] = set()
    for subject in definition.subjects:
        for s in subject.behavior.states:
            if isinstance(s, SendState):
                sent.add(s.message_type)
    out: list[Violation] = []
    for i, subject in enumerate(definition.subjects):
        for s in sorted(subject.behavior.states, key=lambda st: st.id):
            if not isinstance(s, ReceiveState):
                continue
            for mt in s.message_types:
                if mt not in sent:
                    out.append(Violation(
                        ViolationCode.ORPHAN_RECEIVE,
                        f"/process/subjects/{i}/behavior/states/{s.id}",
                        f"message type {mt!r} has no in-process sender "
                        "(external trigger assumed)"))
    return out


def startable_subjects(definition: ProcessDefinition) -> list[SubjectDefinition]:
    """Subjects allowed to initiate a new process instance, in model order."""
    return [s for s in definition.subjects if s.can_be_started]
