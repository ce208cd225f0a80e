"""HTTP facade over the scheduler and repository.

Plain JSON over HTTP. Identity comes from a trusted X-User header (auth mode
"header"); swap the dependency for a different auth scheme. The event
endpoint streams newline-delimited JSON and replaces push notifications.
"""
from __future__ import annotations

import json
import time
from typing import Iterator, Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles

from . import model, model_io
from .config import ApiConfig
from .repository import (
    DuplicateProcess,
    EventRecord,
    FunctionTaskRecord,
    MessageRecord,
    Repository,
    RepositoryError,
    SendTaskRecord,
    TaskRecord,
    UnknownInstance,
    UnknownMessage,
    UnknownProcess,
    UnknownSubject,
    UnknownSubjectName,
    UnknownTask,
    UnknownUser,
    UserRecord,
)
from .scheduler import (
    InvalidAnswer,
    NotAuthorized,
    NotVisible,
    Scheduler,
    TaskAlreadyDone,
)

_NOT_FOUND = (UnknownUser, UnknownProcess, UnknownSubject, UnknownSubjectName,
              UnknownInstance, UnknownTask, UnknownMessage)


def task_to_json(task: TaskRecord,
                 messages: Optional[list[MessageRecord]] = None,
                 context: Optional[dict] = None) -> dict:
    data = {"tid": task.tid, "kind": task.kind, "name": task.name,
            "siid": task.siid, "done": task.done}
    if context:
        data.update(context)
    if isinstance(task, FunctionTaskRecord):
        data["transitions"] = list(task.transitions)
        data["params"] = [
            {"name": p.name, "value": p.value, "writable": p.writable}
            for p in task.params]
    elif isinstance(task, SendTaskRecord):
        data["to_subject"] = task.to_subject
        data["mtype"] = task.mtype
        data["params"] = [
            {"name": p.name, "value": p.value, "writable": p.writable}
            for p in task.params]
    else:
        data["mtypes"] = list(task.mtypes)
    if messages is not None:
        data["messages"] = [message_to_json(m) for m in messages]
    return data


def message_to_json(message: MessageRecord) -> dict:
    return {"mid": message.mid, "mtype": message.mtype,
            "from_siid": message.from_siid, "to_subject": message.to_subject,
            "to_siid": message.to_siid, "received": message.received,
            "params": message.params}


def event_to_json(event: EventRecord) -> dict:
    return {"seq": event.seq, "kind": event.kind, "pid": event.pid,
            "piid": event.piid, "siid": event.siid, "tid": event.tid,
            "mid": event.mid, "timestamp": event.timestamp}


def _context(repo: Repository, siid: str) -> dict:
    """Process and subject names for a task's owning instance."""
    instance = repo.get_instance(siid)
    pid = repo.process_of_subject(instance.sid)
    definition = repo.get_process(pid)
    subject = next(s for s in definition.subjects if s.sid == instance.sid)
    return {"pid": pid, "piid": instance.piid,
            "process": definition.name, "subject": subject.name}


def create_app(scheduler: Scheduler,
               config: Optional[ApiConfig] = None) -> FastAPI:
    config = config or ApiConfig()
    repo = scheduler.repository
    app = FastAPI(title="subjekt", docs_url=None, redoc_url=None)

    def current_user(x_user: Optional[str] = Header(default=None)) -> str:
        if config.auth_mode != "header":
            raise HTTPException(500, f"unsupported auth mode {config.auth_mode!r}")
        if not x_user:
            raise HTTPException(401, "missing X-User header")
        return x_user

    def _http(exc: Exception) -> HTTPException:
        if isinstance(exc, (NotAuthorized, NotVisible)):
            return HTTPException(403, str(exc))
        if isinstance(exc, _NOT_FOUND):
            return HTTPException(404, str(exc))
        if isinstance(exc, (TaskAlreadyDone, DuplicateProcess)):
            return HTTPException(409, str(exc))
        if isinstance(exc, (InvalidAnswer, model_io.SchemaError,
                            model_io.VersionError)):
            return HTTPException(422, str(exc))
        if isinstance(exc, model_io.DefinitionSyntaxError):
            return HTTPException(400, str(exc))
        raise exc

    @app.get("/api/processes")
    def list_processes(user: str = Depends(current_user)):
        try:
            pairs = scheduler.startable(user)
        except Exception as exc:
            raise _http(exc)
        return [{"sid": sid, "name": name} for sid, name in pairs]

    @app.post("/api/processes/{sid}/start")
    def start_process(sid: str, user: str = Depends(current_user)):
        try:
            piid, siid = scheduler.start_process(sid, user)
            task = repo.open_task_of(siid)
        except Exception as exc:
            raise _http(exc)
        return {"piid": piid, "siid": siid,
                "task": task_to_json(task, context=_context(repo, siid))
                if task else None}

    @app.get("/api/tasks")
    def list_tasks(user: str = Depends(current_user)):
        try:
            tasks = scheduler.open_tasks(user)
        except Exception as exc:
            raise _http(exc)
        return {
            "function": [task_to_json(t, context=_context(repo, t.siid))
                         for t in tasks["function"]],
            "send": [task_to_json(t, context=_context(repo, t.siid))
                     for t in tasks["send"]],
            "receive": [task_to_json(t, messages, _context(repo, t.siid))
                        for t, messages in tasks["receive"]],
        }

    @app.get("/api/tasks/{tid}")
    def task_detail(tid: str, user: str = Depends(current_user)):
        try:
            task, messages = scheduler.task_detail(tid, user)
        except Exception as exc:
            raise _http(exc)
        return task_to_json(task, messages, _context(repo, task.siid))

    @app.post("/api/tasks/{tid}/answer")
    async def answer_task(tid: str, request: Request,
                          user: str = Depends(current_user)):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(400, "body must be JSON")
        if not isinstance(body, dict):
            raise HTTPException(422, "answer body must be a JSON object")
        try:
            return scheduler.answer_task(tid, user, body)
        except Exception as exc:
            raise _http(exc)

    @app.get("/api/events")
    def events(since: int = -1, user: str = Depends(current_user)):
        start = repo.last_event_seq() if since < 0 else since

        def stream() -> Iterator[bytes]:
            cursor = start
            while True:
                batch = repo.events_after(cursor)
                for event in batch:
                    cursor = event.seq
                    yield (json.dumps(event_to_json(event), sort_keys=True)
                           + "\n").encode("utf-8")
                if not batch:
                    time.sleep(0.1)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.post("/api/admin/definitions")
    async def upload_definition(request: Request,
                                user: str = Depends(current_user)):
        try:
            doc = model_io.parse_definition(await request.body())
        except Exception as exc:
            raise _http(exc)
        report = model.validate(doc.process)
        if not report.is_valid:
            raise HTTPException(422, detail={
                "violations": [
                    {"code": v.code.value, "path": v.path, "message": v.message}
                    for v in report.violations]})
        try:
            repo.add_process(doc)
        except Exception as exc:
            raise _http(exc)
        return {"pid": doc.process.pid, "name": doc.process.name,
                "subjects": len(doc.process.subjects),
                "warnings": [
                    {"code": w.code.value, "path": w.path, "message": w.message}
                    for w in report.warnings]}

    @app.post("/api/admin/users")
    async def put_user(request: Request, user: str = Depends(current_user)):
        body = await request.json()
        username = body.get("username")
        roles = body.get("roles", [])
        if not isinstance(username, str) or not username:
            raise HTTPException(422, "username must be a non-empty string")
        try:
            repo.put_user(UserRecord(
                username,
                frozenset((r["pid"], r["subject"]) for r in roles)))
        except (KeyError, TypeError):
            raise HTTPException(422, "roles must be [{pid, subject}, ...]")
        except Exception as exc:
            raise _http(exc)
        return {"username": username, "roles": len(roles)}

    @app.get("/api/admin/instances/{piid}")
    def instance_audit(piid: str, user: str = Depends(current_user)):
        records = repo.q10_instances_of(piid)
        if not records:
            raise HTTPException(404, f"no instances for process instance {piid}")
        instances = []
        for record in records:
            task = repo.open_task_of(record.siid)
            instances.append({
                "siid": record.siid, "sid": record.sid, "owner": record.owner,
                "is_in_end_state": record.is_in_end_state,
                "terminated": record.terminated,
                "open_task": task_to_json(task) if task else None,
            })
        return {
            "piid": piid,
            "instances": instances,
            "events": [event_to_json(e) for e in repo.events_for(piid)],
        }

    if config.static_path:
        app.mount("/", StaticFiles(directory=config.static_path, html=True),
                  name="ui")
    return app


def build_server(config: ApiConfig) -> tuple[FastAPI, Scheduler, Repository]:
    """Wire repository, scheduler, and app from one config."""
    repo = Repository(config.store_path)
    scheduler = Scheduler(repo, webhooks=config.webhooks)
    return create_app(scheduler, config), scheduler, repo
