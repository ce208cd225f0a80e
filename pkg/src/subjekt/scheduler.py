"""Orchestrates process execution.

The scheduler hosts engine instances: it starts processes, wakes a sleeping
instance from its snapshot when its task is answered, routes messages with
lazy instantiation of the receiving subject, claims ownership on first
answer, and terminates a process instance once every instantiated subject
sits in an end state. Every mutation runs in one repository transaction;
events are published to live subscribers only after commit.
"""
from __future__ import annotations

import logging
import queue
import threading
from typing import Callable, Mapping, Optional

import httpx

from . import engine
from .engine import (
    CreateTask,
    Effect,
    EnteredEndState,
    EngineError,
    Halted,
    InvokeRefinement,
    SendMessage,
    TaskParam,
)
from .repository import (
    EventRecord,
    FunctionTaskRecord,
    MessageRecord,
    ReceiveTaskRecord,
    Repository,
    SendTaskRecord,
    SubjectInstanceRecord,
    TaskRecord,
    UnknownSubjectName,
    UnknownTask,
    UnknownUser,
    new_id,
)

log = logging.getLogger(__name__)

# Event kinds, strictly ordered per process instance by repository sequence.
EV_PROCESS_STARTED = "ProcessStarted"
EV_TASK_CREATED = "TaskCreated"
EV_MESSAGE_DELIVERED = "MessageDelivered"
EV_INSTANCE_CLAIMED = "InstanceClaimed"
EV_ENTERED_END_STATE = "EnteredEndState"
EV_PROCESS_TERMINATED = "ProcessTerminated"
EV_DELIVERY_REJECTED = "DeliveryRejected"

RefinementCallback = Callable[
    [str, str, str, str, Mapping[str, str]], Optional[Mapping[str, str]]]


class SchedulerError(Exception):
    pass


class NotAuthorized(SchedulerError):
    pass


class NotVisible(SchedulerError):
    pass


class TaskAlreadyDone(SchedulerError):
    pass


class InvalidAnswer(SchedulerError):
    pass


class UnknownToSubject(SchedulerError):
    pass


class PostTerminationDelivery(SchedulerError):
    pass


class Scheduler:
    """Central coordinator over one repository. Safe for concurrent callers."""

    def __init__(
        self,
        repository: Repository,
        webhooks: Optional[Mapping[str, str]] = None,
        refinements: Optional[Mapping[str, RefinementCallback]] = None,
    ):
        self.repository = repository
        self.webhooks = dict(webhooks or {})
        self.refinements = dict(refinements or {})
        self._subscribers: list[queue.SimpleQueue] = []
        self._subscribers_lock = threading.Lock()
        self._pending_events = threading.local()

    # -- event stream --------------------------------------------------------

    def subscribe(self) -> "queue.SimpleQueue[EventRecord]":
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._subscribers_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._subscribers_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _emit(self, kind: str, pid: str, piid: str, siid: Optional[str] = None,
              tid: Optional[str] = None, mid: Optional[str] = None) -> None:
        record = self.repository.append_event(kind, pid, piid, siid, tid, mid)
        self._buffer().append(record)

    def _buffer(self) -> list[EventRecord]:
        if not hasattr(self._pending_events, "items"):
            self._pending_events.items = []
        return self._pending_events.items

    def _run(self, op: Callable):
        """Run one mutation transactionally; publish its events after commit."""
        try:
            with self.repository.transaction():
                result = op()
        except BaseException:
            # rolled back: the buffered event rows are gone from the store
            self._pending_events.items = []
            raise
        buffered, self._pending_events.items = self._buffer(), []
        with self._subscribers_lock:
            subscribers = list(self._subscribers)
        for record in buffered:
            for q in subscribers:
                q.put(record)
        return result

    # -- public operations ---------------------------------------------------

    def startable(self, username: str) -> list[tuple[str, str]]:
        return self.repository.q1_startable_processes(username)

    def open_tasks(self, username: str) -> dict:
        """Union of open function, send, and receive tasks visible to the user."""
        repo = self.repository
        return {
            "function": repo.q2_open_function_tasks(username),
            "send": repo.q3_open_send_tasks(username),
            "receive": repo.q4_open_receive_tasks(username),
        }

    def task_detail(
        self, tid: str, username: str
    ) -> tuple[TaskRecord, Optional[list[MessageRecord]]]:
        """One task with, for open receive tasks, its receivable messages."""
        repo = self.repository
        task = repo.get_task(tid)
        instance = repo.get_instance(task.siid)
        pid = repo.process_of_subject(instance.sid)
        self._check_visibility(username, instance, pid)
        messages = None
        if isinstance(task, ReceiveTaskRecord) and not task.done:
            messages = [repo.get_message(m)
                        for m in repo.q8_receivable_messages(task.siid, task.mtypes)]
        return task, messages

    def start_process(self, sid: str, username: str) -> tuple[str, str]:
        """Create a fresh process instance with an owned starter subject."""
        return self._run(lambda: self._start_process(sid, username))

    def _start_process(self, sid: str, username: str) -> tuple[str, str]:
        repo = self.repository
        pid = repo.process_of_subject(sid)
        if (sid, repo.get_process(pid).name) not in repo.q1_startable_processes(username):
            raise NotAuthorized(
                f"user {username!r} may not start subject {sid!r}")
        definition = repo.get_process(pid)
        subject = next(s for s in definition.subjects if s.sid == sid)
        piid, siid = new_id(), new_id()
        repo.add_instance(SubjectInstanceRecord(
            siid=siid, sid=sid, piid=piid, owner=username))
        self._emit(EV_PROCESS_STARTED, pid, piid, siid)
        inst, effects = engine.instantiate(subject.behavior, siid)
        self._settle(inst, effects, pid, piid)
        return piid, siid

    def deliver_message(self, effect: SendMessage, from_siid: str) -> str:
        """Route a message per the send procedure, instantiating the recipient
        subject on demand. Standalone entry point; also used internally."""
        try:
            return self._run(lambda: self._deliver(effect, from_siid))
        except PostTerminationDelivery:
            # the rejection event was rolled back with the transaction;
            # record the warning on its own
            pid, piid = self.repository.q5_process_of_instance(from_siid)
            self._run(lambda: self._emit(
                EV_DELIVERY_REJECTED, pid, piid, from_siid))
            raise

    def _deliver(self, effect: SendMessage, from_siid: str) -> str:
        repo = self.repository
        pid, piid = repo.q5_process_of_instance(from_siid)
        try:
            to_sid = repo.q6_subject_by_name(pid, effect.to_subject)
        except UnknownSubjectName as exc:
            raise UnknownToSubject(
                f"no subject named {effect.to_subject!r} in process {pid!r}; "
                "store may be corrupt") from exc
        if any(i.terminated for i in repo.q10_instances_of(piid)):
            self._emit(EV_DELIVERY_REJECTED, pid, piid, from_siid)
            raise PostTerminationDelivery(piid)

        to_siid = repo.q7_instance_of(to_sid, piid)
        if to_siid is None:
            # lazy instantiation: unowned until a user first answers
            to_siid = new_id()
            repo.add_instance(SubjectInstanceRecord(
                siid=to_siid, sid=to_sid, piid=piid, owner=None))
            definition = repo.get_process(pid)
            subject = next(s for s in definition.subjects if s.sid == to_sid)
            inst, effects = engine.instantiate(subject.behavior, to_siid)
            self._settle(inst, effects, pid, piid)
        mid = new_id()
        repo.add_message(MessageRecord(
            mid=mid, mtype=effect.message_type, from_siid=from_siid,
            to_subject=effect.to_subject, to_siid=to_siid,
            params=dict(effect.params)))
        self._emit(EV_MESSAGE_DELIVERED, pid, piid, to_siid, mid=mid)
        return mid

    def answer_task(self, tid: str, username: str, answer: Mapping) -> dict:
        """Apply a task answer; claims unowned instances on first answer."""
        return self._run(lambda: self._answer_task(tid, username, answer))

    def _answer_task(self, tid: str, username: str, answer: Mapping) -> dict:
        repo = self.repository
        task = repo.get_task(tid)
        if task.done:
            raise TaskAlreadyDone(tid)
        instance = repo.get_instance(task.siid)
        if instance.terminated:
            raise TaskAlreadyDone(tid)
        pid = repo.process_of_subject(instance.sid)
        self._check_visibility(username, instance, pid)

        if instance.owner is None:
            repo.set_owner(instance.siid, username)
            self._emit(EV_INSTANCE_CLAIMED, pid, instance.piid, instance.siid,
                       tid=tid)

        definition = repo.get_process(pid)
        subject = next(s for s in definition.subjects if s.sid == instance.sid)
        assert instance.snapshot is not None
        inst = engine.restore(subject.behavior, instance.snapshot, instance.siid)

        try:
            if isinstance(task, FunctionTaskRecord):
                inst, effects = engine.apply_function_answer(
                    inst, _require_str(answer, "label"),
                    dict(answer.get("params") or {}))
            elif isinstance(task, SendTaskRecord):
                inst, effects = engine.apply_send_answer(
                    inst, dict(answer.get("params") or {}))
            else:
                mid = self._resolve_receive(task, answer)
                message = repo.get_message(mid)
                inst, effects = engine.apply_receive(
                    inst, message.mtype, message.params)
                repo.mark_message_received(mid)
        except EngineError as exc:
            raise InvalidAnswer(str(exc)) from exc

        repo.mark_task_done(tid)
        self._settle(inst, effects, pid, instance.piid)
        return {"tid": tid, "siid": instance.siid, "piid": instance.piid,
                "done": True}

    def _check_visibility(self, username: str,
                          instance: SubjectInstanceRecord, pid: str) -> None:
        repo = self.repository
        if not repo.user_exists(username):
            raise UnknownUser(username)
        if instance.owner == username:
            return
        if instance.owner is None:
            definition = repo.get_process(pid)
            subject = next(
                s for s in definition.subjects if s.sid == instance.sid)
            if (pid, subject.name) in repo.get_user(username).roles:
                return
        raise NotVisible(
            f"user {username!r} may not act on instance {instance.siid}")

    def _resolve_receive(self, task: ReceiveTaskRecord, answer: Mapping) -> str:
        mids = self.repository.q8_receivable_messages(task.siid, task.mtypes)
        chosen = answer.get("mid")
        if chosen is not None:
            if chosen not in mids:
                raise InvalidAnswer(
                    f"message {chosen!r} is not receivable by this task")
            return chosen
        if not mids:
            raise InvalidAnswer("no receivable message in the input pool")
        if len(mids) > 1:
            raise InvalidAnswer(
                "multiple receivable messages; the answer must name one mid")
        return mids[0]

    # -- effect handling -----------------------------------------------------

    def _settle(self, inst: engine.EngineInstance, effects: list[Effect],
                pid: str, piid: str) -> None:
        """Carry out engine effects, then park the instance in its snapshot."""
        repo = self.repository
        pending_tid: Optional[str] = None
        ended = False
        for effect in effects:
            if isinstance(effect, CreateTask):
                pending_tid = new_id()
                repo.add_task(self._build_task(pending_tid, effect, inst))
                self._emit(EV_TASK_CREATED, pid, piid, inst.siid,
                           tid=pending_tid)
            elif isinstance(effect, SendMessage):
                self._deliver(effect, inst.siid)
            elif isinstance(effect, InvokeRefinement):
                writes = self._invoke_refinement(effect, pid, piid, inst.siid)
                if writes:
                    inst = engine.apply_refinement_writes(inst, writes)
            elif isinstance(effect, EnteredEndState):
                ended = True
            elif isinstance(effect, Halted):
                pass
        repo.set_snapshot(inst.siid, engine.snapshot(inst, pending_tid))
        if ended:
            self._end_state_entered(inst.siid, pid, piid)

    def _build_task(self, tid: str, proto: CreateTask,
                    inst: engine.EngineInstance) -> TaskRecord:
        # parameter values re-read from the instance so refinement writes
        # made earlier in the same answer are visible
        params = tuple(
            TaskParam(p.name, inst.var(p.name), p.writable)
            for p in proto.params)
        if proto.kind == "function":
            return FunctionTaskRecord(
                tid=tid, name=proto.name, siid=inst.siid,
                transitions=proto.transitions, params=params)
        if proto.kind == "send":
            return SendTaskRecord(
                tid=tid, name=proto.name, siid=inst.siid,
                to_subject=proto.to_subject or "",
                mtype=proto.message_type or "", params=params)
        return ReceiveTaskRecord(
            tid=tid, name=proto.name, siid=inst.siid,
            mtypes=proto.message_types)

    def _invoke_refinement(self, effect: InvokeRefinement, pid: str,
                           piid: str, siid: str) -> Mapping[str, str]:
        variables = dict(effect.variables)
        if effect.name.startswith("webhook:"):
            self._post_webhook(effect.name[len("webhook:"):],
                               pid, piid, siid, effect.state_id, variables)
            return {}
        callback = self.refinements.get(effect.name)
        if callback is None:
            log.warning("no refinement registered under %r; skipping",
                        effect.name)
            return {}
        return callback(pid, piid, siid, effect.state_id, variables) or {}

    def _post_webhook(self, key: str, pid: str, piid: str, siid: str,
                      state_id: str, variables: dict[str, str]) -> None:
        url = self.webhooks.get(key)
        if url is None:
            log.warning("no webhook URL configured for key %r; skipping", key)
            return
        payload = {"pid": pid, "piid": piid, "siid": siid,
                   "state": state_id, "variables": variables}
        try:
            httpx.post(url, json=payload, timeout=5.0)
        except httpx.HTTPError as exc:
            # refinement failure must not wedge the process
            log.warning("webhook %s failed: %s", url, exc)

    def end_state_entered(self, siid: str) -> None:
        """Record an end-state entry and terminate the process instance when
        every instantiated subject has ended."""
        instance = self.repository.get_instance(siid)
        pid = self.repository.process_of_subject(instance.sid)
        self._run(lambda: self._end_state_entered(siid, pid, instance.piid))

    def _end_state_entered(self, siid: str, pid: str, piid: str) -> None:
        repo = self.repository
        repo.set_end_state(siid)
        self._emit(EV_ENTERED_END_STATE, pid, piid, siid)
        if repo.q9_count_not_ended(piid) == 0:
            for record in repo.q10_instances_of(piid):
                repo.set_terminated(record.siid)
            self._emit(EV_PROCESS_TERMINATED, pid, piid)


def _require_str(answer: Mapping, key: str) -> str:
    value = answer.get(key)
    if not isinstance(value, str):
        raise InvalidAnswer(f"answer must carry a string {key!r}")
    return value
