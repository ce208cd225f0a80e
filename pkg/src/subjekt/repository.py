"""Durable store for processes, instances, tasks, messages, users, and events.

Backed by an embedded sqlite database behind a storage-interface boundary so
a server-backed store could be swapped in later. All writes happen inside
explicit transactions (nestable; only the outermost commits), so a crash
between writes of one logical operation leaves no partial state.

The q1..q10 methods transcribe the scheduler's repository queries: which
processes a user may start, open tasks per kind, sender-to-recipient
resolution for message delivery, and the process-termination count.
"""
from __future__ import annotations

import json
import sqlite3
import threading
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence, Union

from .engine import Snapshot, TaskParam
from .model import ProcessDefinition
from .model_io import DefinitionDocument, parse_definition, serialize_definition


class RepositoryError(Exception):
    pass


class UnknownUser(RepositoryError):
    pass


class UnknownProcess(RepositoryError):
    pass


class UnknownSubject(RepositoryError):
    pass


class UnknownSubjectName(RepositoryError):
    pass


class UnknownInstance(RepositoryError):
    pass


class UnknownTask(RepositoryError):
    pass


class UnknownMessage(RepositoryError):
    pass


class DuplicateProcess(RepositoryError):
    pass


class IntegrityViolation(RepositoryError):
    pass


class StorageError(RepositoryError):
    pass


@dataclass
class SubjectInstanceRecord:
    siid: str
    sid: str
    piid: str
    owner: Optional[str] = None
    is_in_end_state: bool = False
    terminated: bool = False
    snapshot: Optional[Snapshot] = None


@dataclass
class MessageRecord:
    mid: str
    mtype: str
    from_siid: str
    to_subject: str
    to_siid: str
    received: bool = False
    params: dict[str, str] = field(default_factory=dict)


@dataclass
class FunctionTaskRecord:
    tid: str
    name: str
    siid: str
    done: bool = False
    transitions: tuple[str, ...] = ()
    params: tuple[TaskParam, ...] = ()

    kind = "function"


@dataclass
class SendTaskRecord:
    tid: str
    name: str
    siid: str
    done: bool = False
    to_subject: str = ""
    mtype: str = ""
    params: tuple[TaskParam, ...] = ()

    kind = "send"


@dataclass
class ReceiveTaskRecord:
    tid: str
    name: str
    siid: str
    done: bool = False
    mtypes: tuple[str, ...] = ()

    kind = "receive"


TaskRecord = Union[FunctionTaskRecord, SendTaskRecord, ReceiveTaskRecord]


@dataclass
class UserRecord:
    username: str
    roles: frozenset[tuple[str, str]] = frozenset()  # (pid, subject name)


@dataclass
class EventRecord:
    seq: int
    kind: str
    pid: str
    piid: str
    siid: Optional[str] = None
    tid: Optional[str] = None
    mid: Optional[str] = None
    timestamp: float = 0.0


_SCHEMA = """
CREATE TABLE IF NOT EXISTS processes (
    pid TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    definition BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS subjects (
    sid TEXT PRIMARY KEY,
    pid TEXT NOT NULL REFERENCES processes(pid),
    name TEXT NOT NULL,
    can_be_started INTEGER NOT NULL,
    UNIQUE (pid, name)
);
CREATE TABLE IF NOT EXISTS users (
    username TEXT PRIMARY KEY
);
CREATE TABLE IF NOT EXISTS user_roles (
    username TEXT NOT NULL REFERENCES users(username),
    pid TEXT NOT NULL REFERENCES processes(pid),
    subject_name TEXT NOT NULL,
    UNIQUE (username, pid, subject_name)
);
CREATE TABLE IF NOT EXISTS subject_instances (
    siid TEXT PRIMARY KEY,
    sid TEXT NOT NULL REFERENCES subjects(sid),
    piid TEXT NOT NULL,
    owner TEXT,
    is_in_end_state INTEGER NOT NULL DEFAULT 0,
    terminated INTEGER NOT NULL DEFAULT 0,
    snapshot TEXT,
    UNIQUE (sid, piid)
);
CREATE TABLE IF NOT EXISTS messages (
    mid TEXT PRIMARY KEY,
    mtype TEXT NOT NULL,
    from_siid TEXT NOT NULL REFERENCES subject_instances(siid),
    to_subject TEXT NOT NULL,
    to_siid TEXT NOT NULL REFERENCES subject_instances(siid),
    received INTEGER NOT NULL DEFAULT 0,
    params TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
    tid TEXT PRIMARY KEY,
    kind TEXT NOT NULL,
    name TEXT NOT NULL,
    siid TEXT NOT NULL REFERENCES subject_instances(siid),
    done INTEGER NOT NULL DEFAULT 0,
    payload TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    kind TEXT NOT NULL,
    pid TEXT NOT NULL,
    piid TEXT NOT NULL,
    siid TEXT,
    tid TEXT,
    mid TEXT,
    timestamp REAL NOT NULL
);
"""


def new_id() -> str:
    return str(uuid.uuid4())


class Repository:
    """Embedded transactional store. Safe for concurrent callers."""

    def __init__(self, path: str = ":memory:"):
        self.path = path
        try:
            self._conn = sqlite3.connect(
                path, check_same_thread=False, isolation_level=None)
            self._conn.execute("PRAGMA foreign_keys = ON")
            if path != ":memory:":
                self._conn.execute("PRAGMA journal_mode = WAL")
                self._conn.execute("PRAGMA synchronous = FULL")
            self._conn.executescript(_SCHEMA)
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        self._lock = threading.RLock()
        self._txn_depth = 0
        self._definitions: dict[str, ProcessDefinition] = {}

    def close(self) -> None:
        self._conn.close()

    @contextmanager
    def transaction(self) -> Iterator[None]:
        """All-or-nothing scope; nested uses join the outermost transaction."""
        with self._lock:
            outermost = self._txn_depth == 0
            if outermost:
                self._conn.execute("BEGIN IMMEDIATE")
            self._txn_depth += 1
            try:
                yield
            except BaseException:
                self._txn_depth -= 1
                if outermost:
                    self._conn.execute("ROLLBACK")
                raise
            else:
                self._txn_depth -= 1
                if outermost:
                    self._conn.execute("COMMIT")

    def _execute(self, sql: str, args: Sequence = ()) -> sqlite3.Cursor:
        try:
            return self._conn.execute(sql, args)
        except sqlite3.IntegrityError as exc:
            raise IntegrityViolation(str(exc)) from exc
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc

    # -- processes -----------------------------------------------------------

    def add_process(self, doc: DefinitionDocument) -> None:
        process = doc.process
        with self.transaction():
            if self._execute(
                    "SELECT 1 FROM processes WHERE pid = ?",
                    (process.pid,)).fetchone():
                raise DuplicateProcess(process.pid)
            for subject in process.subjects:
                if self._execute(
                        "SELECT 1 FROM subjects WHERE sid = ?",
                        (subject.sid,)).fetchone():
                    raise IntegrityViolation(
                        f"subject id {subject.sid!r} already exists in another process")
            self._execute(
                "INSERT INTO processes (pid, name, definition) VALUES (?, ?, ?)",
                (process.pid, process.name, serialize_definition(doc)))
            for subject in process.subjects:
                self._execute(
                    "INSERT INTO subjects (sid, pid, name, can_be_started) "
                    "VALUES (?, ?, ?, ?)",
                    (subject.sid, process.pid, subject.name,
                     int(subject.can_be_started)))

    def get_process(self, pid: str) -> ProcessDefinition:
        cached = self._definitions.get(pid)
        if cached is not None:
            return cached
        row = self._execute(
            "SELECT definition FROM processes WHERE pid = ?", (pid,)).fetchone()
        if row is None:
            raise UnknownProcess(pid)
        definition = parse_definition(row[0]).process
        self._definitions[pid] = definition
        return definition

    def list_processes(self) -> list[tuple[str, str]]:
        return [tuple(r) for r in self._execute(
            "SELECT pid, name FROM processes ORDER BY pid").fetchall()]

    def process_of_subject(self, sid: str) -> str:
        row = self._execute(
            "SELECT pid FROM subjects WHERE sid = ?", (sid,)).fetchone()
        if row is None:
            raise UnknownSubject(sid)
        return row[0]

    # -- users ---------------------------------------------------------------

    def put_user(self, user: UserRecord) -> None:
        if not user.username:
            raise IntegrityViolation("username must be non-empty")
        with self.transaction():
            for pid, _name in user.roles:
                if not self._execute(
                        "SELECT 1 FROM processes WHERE pid = ?", (pid,)).fetchone():
                    raise IntegrityViolation(
                        f"role references unknown process {pid!r}")
            self._execute(
                "INSERT OR IGNORE INTO users (username) VALUES (?)",
                (user.username,))
            self._execute(
                "DELETE FROM user_roles WHERE username = ?", (user.username,))
            for pid, name in sorted(user.roles):
                self._execute(
                    "INSERT INTO user_roles (username, pid, subject_name) "
                    "VALUES (?, ?, ?)", (user.username, pid, name))

    def get_user(self, username: str) -> UserRecord:
        if not self.user_exists(username):
            raise UnknownUser(username)
        roles = self._execute(
            "SELECT pid, subject_name FROM user_roles WHERE username = ?",
            (username,)).fetchall()
        return UserRecord(username, frozenset((p, n) for p, n in roles))

    def user_exists(self, username: str) -> bool:
        return self._execute(
            "SELECT 1 FROM users WHERE username = ?", (username,)).fetchone() is not None

    # -- subject instances ---------------------------------------------------

    def add_instance(self, record: SubjectInstanceRecord) -> None:
        self._execute(
            "INSERT INTO subject_instances "
            "(siid, sid, piid, owner, is_in_end_state, terminated, snapshot) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            (record.siid, record.sid, record.piid, record.owner,
             int(record.is_in_end_state), int(record.terminated),
             _snapshot_to_json(record.snapshot)))

    def get_instance(self, siid: str) -> SubjectInstanceRecord:
        row = self._execute(
            "SELECT siid, sid, piid, owner, is_in_end_state, terminated, snapshot "
            "FROM subject_instances WHERE siid = ?", (siid,)).fetchone()
        if row is None:
            raise UnknownInstance(siid)
        return _instance_from_row(row)

    def set_owner(self, siid: str, owner: str) -> None:
        current = self.get_instance(siid)
        if current.owner is not None and current.owner != owner:
            raise IntegrityViolation(
                f"instance {siid} already owned by {current.owner}")
        self._execute(
            "UPDATE subject_instances SET owner = ? WHERE siid = ?",
            (owner, siid))

    def set_end_state(self, siid: str) -> None:
        self.get_instance(siid)
        self._execute(
            "UPDATE subject_instances SET is_in_end_state = 1 WHERE siid = ?",
            (siid,))

    def set_terminated(self, siid: str) -> None:
        self.get_instance(siid)
        self._execute(
            "UPDATE subject_instances SET terminated = 1 WHERE siid = ?",
            (siid,))

    def set_snapshot(self, siid: str, snap: Optional[Snapshot]) -> None:
        self.get_instance(siid)
        self._execute(
            "UPDATE subject_instances SET snapshot = ? WHERE siid = ?",
            (_snapshot_to_json(snap), siid))

    # -- messages ------------------------------------------------------------

    def add_message(self, record: MessageRecord) -> None:
        self._execute(
            "INSERT INTO messages "
            "(mid, mtype, from_siid, to_subject, to_siid, received, params) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            (record.mid, record.mtype, record.from_siid, record.to_subject,
             record.to_siid, int(record.received),
             json.dumps(record.params, sort_keys=True)))

    def get_message(self, mid: str) -> MessageRecord:
        row = self._execute(
            "SELECT mid, mtype, from_siid, to_subject, to_siid, received, params "
            "FROM messages WHERE mid = ?", (mid,)).fetchone()
        if row is None:
            raise UnknownMessage(mid)
        return MessageRecord(
            mid=row[0], mtype=row[1], from_siid=row[2], to_subject=row[3],
            to_siid=row[4], received=bool(row[5]), params=json.loads(row[6]))

    def messages_of(self, siid: str) -> list[MessageRecord]:
        """Every message addressed to the instance, received or not."""
        rows = self._execute(
            "SELECT mid, mtype, from_siid, to_subject, to_siid, received, params "
            "FROM messages WHERE to_siid = ? ORDER BY mid ASC",
            (siid,)).fetchall()
        return [MessageRecord(
            mid=r[0], mtype=r[1], from_siid=r[2], to_subject=r[3],
            to_siid=r[4], received=bool(r[5]), params=json.loads(r[6]))
            for r in rows]

    def mark_message_received(self, mid: str) -> None:
        message = self.get_message(mid)
        if message.received:
            raise IntegrityViolation(f"message {mid} already received")
        self._execute(
            "UPDATE messages SET received = 1 WHERE mid = ?", (mid,))

    # -- tasks ---------------------------------------------------------------

    def add_task(self, record: TaskRecord) -> None:
        open_count = 0 if record.done else self._execute(
            "SELECT count(*) FROM tasks WHERE siid = ? AND done = 0",
            (record.siid,)).fetchone()[0]
        if open_count:
            raise IntegrityViolation(
                f"instance {record.siid} already has an open task")
        self._execute(
            "INSERT INTO tasks (tid, kind, name, siid, done, payload) "
            "VALUES (?, ?, ?, ?, ?, ?)",
            (record.tid, record.kind, record.name, record.siid,
             int(record.done), _task_payload(record)))

    def get_task(self, tid: str) -> TaskRecord:
        row = self._execute(
            "SELECT tid, kind, name, siid, done, payload FROM tasks "
            "WHERE tid = ?", (tid,)).fetchone()
        if row is None:
            raise UnknownTask(tid)
        return _task_from_row(row)

    def mark_task_done(self, tid: str) -> None:
        task = self.get_task(tid)
        if task.done:
            raise IntegrityViolation(f"task {tid} already done")
        self._execute("UPDATE tasks SET done = 1 WHERE tid = ?", (tid,))

    def open_task_of(self, siid: str) -> Optional[TaskRecord]:
        row = self._execute(
            "SELECT tid, kind, name, siid, done, payload FROM tasks "
            "WHERE siid = ? AND done = 0 ORDER BY tid", (siid,)).fetchone()
        return _task_from_row(row) if row else None

    # -- events --------------------------------------------------------------

    def append_event(self, kind: str, pid: str, piid: str,
                     siid: Optional[str] = None, tid: Optional[str] = None,
                     mid: Optional[str] = None) -> EventRecord:
        ts = time.time()
        cursor = self._execute(
            "INSERT INTO events (kind, pid, piid, siid, tid, mid, timestamp) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            (kind, pid, piid, siid, tid, mid, ts))
        return EventRecord(cursor.lastrowid, kind, pid, piid, siid, tid, mid, ts)

    def events_after(self, seq: int) -> list[EventRecord]:
        rows = self._execute(
            "SELECT seq, kind, pid, piid, siid, tid, mid, timestamp "
            "FROM events WHERE seq > ? ORDER BY seq", (seq,)).fetchall()
        return [EventRecord(*row) for row in rows]

    def events_for(self, piid: str) -> list[EventRecord]:
        rows = self._execute(
            "SELECT seq, kind, pid, piid, siid, tid, mid, timestamp "
            "FROM events WHERE piid = ? ORDER BY seq", (piid,)).fetchall()
        return [EventRecord(*row) for row in rows]

    def last_event_seq(self) -> int:
        row = self._execute("SELECT max(seq) FROM events").fetchone()
        return row[0] or 0

    # -- the scheduler's queries --------------------------------------------

    def q1_startable_processes(self, username: str) -> list[tuple[str, str]]:
        """(sid, process name) pairs the user is allowed to start."""
        self._require_user(username)
        rows = self._execute(
            "SELECT DISTINCT s.sid, p.name FROM subjects s "
            "JOIN user_roles r ON r.pid = s.pid AND r.subject_name = s.name "
            "JOIN processes p ON p.pid = s.pid "
            "WHERE s.can_be_started = 1 AND r.username = ? "
            "ORDER BY s.sid", (username,)).fetchall()
        return [tuple(r) for r in rows]

    _VISIBILITY = (
        " AND (i.owner = :u OR (i.owner IS NULL AND EXISTS ("
        "SELECT 1 FROM user_roles r JOIN subjects s ON s.sid = i.sid "
        "WHERE r.username = :u AND r.pid = s.pid AND r.subject_name = s.name)))"
    )

    def _open_tasks_of_kind(self, username: str, kind: str) -> list[TaskRecord]:
        self._require_user(username)
        rows = self._execute(
            "SELECT t.tid, t.kind, t.name, t.siid, t.done, t.payload "
            "FROM tasks t JOIN subject_instances i ON t.siid = i.siid "
            "WHERE t.kind = :k AND t.done = 0" + self._VISIBILITY +
            " ORDER BY t.tid", {"k": kind, "u": username}).fetchall()
        return [_task_from_row(row) for row in rows]

    def q2_open_function_tasks(self, username: str) -> list[FunctionTaskRecord]:
        return self._open_tasks_of_kind(username, "function")

    def q3_open_send_tasks(self, username: str) -> list[SendTaskRecord]:
        return self._open_tasks_of_kind(username, "send")

    def q4_open_receive_tasks(
        self, username: str
    ) -> list[tuple[ReceiveTaskRecord, list[MessageRecord]]]:
        """Visible open receive tasks that have at least one receivable message."""
        out = []
        for task in self._open_tasks_of_kind(username, "receive"):
            mids = self.q8_receivable_messages(task.siid, task.mtypes)
            if mids:
                out.append((task, [self.get_message(m) for m in mids]))
        return out

    def q5_process_of_instance(self, from_siid: str) -> tuple[str, str]:
        row = self._execute(
            "SELECT s.pid, i.piid FROM subjects s "
            "JOIN subject_instances i ON i.sid = s.sid "
            "WHERE i.siid = ?", (from_siid,)).fetchone()
        if row is None:
            raise UnknownInstance(from_siid)
        return tuple(row)

    def q6_subject_by_name(self, pid: str, to_subject: str) -> str:
        row = self._execute(
            "SELECT sid FROM subjects WHERE pid = ? AND name = ?",
            (pid, to_subject)).fetchone()
        if row is None:
            raise UnknownSubjectName(f"{pid}:{to_subject}")
        return row[0]

    def q7_instance_of(self, sid: str, piid: str) -> Optional[str]:
        row = self._execute(
            "SELECT siid FROM subject_instances WHERE sid = ? AND piid = ?",
            (sid, piid)).fetchone()
        return row[0] if row else None

    def q8_receivable_messages(
        self, siid: str, mtypes: Sequence[str]
    ) -> list[str]:
        self.get_instance(siid)
        rows = self._execute(
            "SELECT mid, mtype FROM messages "
            "WHERE received = 0 AND to_siid = ? ORDER BY mid", (siid,)).fetchall()
        accepted = set(mtypes)
        return [mid for mid, mtype in rows if mtype in accepted]

    def q9_count_not_ended(self, piid: str) -> int:
        return self._execute(
            "SELECT count(*) FROM subject_instances "
            "WHERE is_in_end_state = 0 AND piid = ?", (piid,)).fetchone()[0]

    def q10_instances_of(self, piid: str) -> list[SubjectInstanceRecord]:
        rows = self._execute(
            "SELECT siid, sid, piid, owner, is_in_end_state, terminated, snapshot "
            "FROM subject_instances WHERE piid = ? ORDER BY siid",
            (piid,)).fetchall()
        return [_instance_from_row(row) for row in rows]

    def _require_user(self, username: str) -> None:
        if not self.user_exists(username):
            raise UnknownUser(username)


def _snapshot_to_json(snap: Optional[Snapshot]) -> Optional[str]:
    if snap is None:
        return None
    return json.dumps({
        "current_state": snap.current_state,
        "variables": dict(snap.variables),
        "pending_task": snap.pending_task,
    }, sort_keys=True)


def _snapshot_from_json(raw: Optional[str]) -> Optional[Snapshot]:
    if raw is None:
        return None
    data = json.loads(raw)
    return Snapshot(
        current_state=data["current_state"],
        variables=tuple(sorted(data["variables"].items())),
        pending_task=data["pending_task"])


def _instance_from_row(row: Sequence) -> SubjectInstanceRecord:
    return SubjectInstanceRecord(
        siid=row[0], sid=row[1], piid=row[2], owner=row[3],
        is_in_end_state=bool(row[4]), terminated=bool(row[5]),
        snapshot=_snapshot_from_json(row[6]))


def _task_payload(record: TaskRecord) -> str:
    if isinstance(record, FunctionTaskRecord):
        data = {
            "transitions": list(record.transitions),
            "params": [[p.name, p.value, p.writable] for p in record.params],
        }
    elif isinstance(record, SendTaskRecord):
        data = {
            "to_subject": record.to_subject,
            "mtype": record.mtype,
            "params": [[p.name, p.value, p.writable] for p in record.params],
        }
    else:
        data = {"mtypes": list(record.mtypes)}
    return json.dumps(data, sort_keys=True)


def _task_from_row(row: Sequence) -> TaskRecord:
    tid, kind, name, siid, done, payload = row
    data = json.loads(payload)
    done = bool(done)
    if kind == "function":
        return FunctionTaskRecord(
            tid=tid, name=name, siid=siid, done=done,
            transitions=tuple(data["transitions"]),
            params=tuple(TaskParam(n, v, w) for n, v, w in data["params"]))
    if kind == "send":
        return SendTaskRecord(
            tid=tid, name=name, siid=siid, done=done,
            to_subject=data["to_subject"], mtype=data["mtype"],
            params=tuple(TaskParam(n, v, w) for n, v, w in data["params"]))
    return ReceiveTaskRecord(
        tid=tid, name=name, siid=siid, done=done,
        mtypes=tuple(data["mtypes"]))
