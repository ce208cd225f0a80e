"""Administration and scripted-agent command line client.

Most commands talk to a running server (SUBJEKT_URL or --url); validate and
upload can alternatively work directly against an embedded store (--store).
run-script drives a machine agent: it polls the task list, matches each
scripted step against visible open tasks, and posts the answer.

Exit codes: 0 ok, 2 usage, 3 validation failure, 4 server error,
5 script assertion or timeout.
"""
from __future__ import annotations

import concurrent.futures
import json
import sys
import time
from typing import Optional

import click
import httpx

from . import model, model_io

EXIT_VALIDATION = 3
EXIT_SERVER = 4
EXIT_SCRIPT = 5

DEFAULT_POLL_INTERVAL = 0.2
DEFAULT_TIMEOUT = 30.0


class ServerFailure(click.ClickException):
    exit_code = EXIT_SERVER


class Client:
    def __init__(self, url: str, username: Optional[str] = None,
                 as_json: bool = False):
        self.url = url.rstrip("/")
        self.username = username
        self.as_json = as_json
        self._http = httpx.Client(
            base_url=self.url, timeout=10.0,
            headers={"X-User": username} if username else {})

    def request(self, method: str, path: str, **kwargs) -> httpx.Response:
        try:
            response = self._http.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            raise ServerFailure(f"server unreachable: {exc}")
        if response.status_code >= 400:
            _fail_server(response)
        return response


def _fail_server(response: httpx.Response) -> None:
    try:
        detail = response.json().get("detail", response.text)
    except json.JSONDecodeError:
        detail = response.text
    click.echo(f"server error {response.status_code}: {detail}", err=True)
    sys.exit(EXIT_SERVER)


def _emit(data, as_json: bool, human: str = "") -> None:
    if as_json:
        click.echo(json.dumps(data, sort_keys=True, indent=2))
    else:
        click.echo(human or json.dumps(data, sort_keys=True, indent=2))


@click.group()
@click.option("--url", envvar="SUBJEKT_URL", default="http://127.0.0.1:8000",
              show_default=True, help="Server base URL.")
@click.option("--json", "as_json", is_flag=True,
              help="Machine-readable output.")
@click.pass_context
def main(ctx: click.Context, url: str, as_json: bool) -> None:
    """Client for the subjekt process server."""
    ctx.obj = {"url": url, "json": as_json}


def _client(ctx: click.Context, username: Optional[str] = None) -> Client:
    return Client(ctx.obj["url"], username, ctx.obj["json"])


@main.command()
@click.argument("path", type=click.Path(exists=True))
def validate(path: str) -> None:
    """Parse and validate a process definition file."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        doc = model_io.parse_definition(data)
    except (model_io.DefinitionSyntaxError, model_io.SchemaError,
            model_io.VersionError) as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    report = model.validate(doc.process)
    for warning in report.warnings:
        click.echo(f"warning: {warning}", err=True)
    if not report.is_valid:
        for violation in report.violations:
            click.echo(f"violation: {violation}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"ok: {doc.process.pid} ({len(doc.process.subjects)} subjects)")


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--as", "username", default="admin", show_default=True)
@click.option("--store", type=click.Path(), default=None,
              help="Write directly into an embedded store instead of a server.")
@click.pass_context
def upload(ctx: click.Context, path: str, username: str,
           store: Optional[str]) -> None:
    """Upload a process definition."""
    with open(path, "rb") as fh:
        data = fh.read()
    if store is not None:
        from .repository import Repository
        try:
            doc = model_io.parse_definition(data)
        except (model_io.DefinitionSyntaxError, model_io.SchemaError,
                model_io.VersionError) as exc:
            click.echo(f"invalid: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        report = model.validate(doc.process)
        if not report.is_valid:
            for violation in report.violations:
                click.echo(f"violation: {violation}", err=True)
            sys.exit(EXIT_VALIDATION)
        Repository(store).add_process(doc)
        click.echo(f"uploaded {doc.process.pid} into {store}")
        return
    response = _client(ctx, username).request(
        "POST", "/api/admin/definitions", content=data)
    _emit(response.json(), ctx.obj["json"],
          f"uploaded {response.json()['pid']}")


@main.command()
@click.option("--as", "username", required=True)
@click.pass_context
def processes(ctx: click.Context, username: str) -> None:
    """List processes the user may start."""
    response = _client(ctx, username).request("GET", "/api/processes")
    rows = response.json()
    _emit(rows, ctx.obj["json"],
          "\n".join(f"{r['sid']}\t{r['name']}" for r in rows) or "(none)")


@main.command()
@click.argument("sid")
@click.option("--as", "username", required=True)
@click.pass_context
def start(ctx: click.Context, sid: str, username: str) -> None:
    """Start a new process instance from a startable subject."""
    response = _client(ctx, username).request(
        "POST", f"/api/processes/{sid}/start")
    body = response.json()
    _emit(body, ctx.obj["json"],
          f"piid={body['piid']} siid={body['siid']}")


@main.command()
@click.option("--as", "username", required=True)
@click.pass_context
def tasks(ctx: click.Context, username: str) -> None:
    """List open tasks visible to the user."""
    response = _client(ctx, username).request("GET", "/api/tasks")
    body = response.json()
    if ctx.obj["json"]:
        _emit(body, True)
        return
    lines = []
    for kind in ("function", "send", "receive"):
        for task in body[kind]:
            lines.append(f"{task['tid']}\t{kind}\t{task.get('subject', '')}"
                         f"\t{task['name']}")
    click.echo("\n".join(lines) or "(no open tasks)")


@main.command()
@click.argument("tid")
@click.option("--as", "username", required=True)
@click.option("--body", "body", required=True,
              help="JSON answer payload, shape depends on the task kind.")
@click.pass_context
def answer(ctx: click.Context, tid: str, username: str, body: str) -> None:
    """Answer one open task."""
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"--body is not valid JSON: {exc}")
    response = _client(ctx, username).request(
        "POST", f"/api/tasks/{tid}/answer", json=payload)
    _emit(response.json(), ctx.obj["json"], f"answered {tid}")


@main.command(name="user-add")
@click.argument("username")
@click.option("--role", "roles", multiple=True, metavar="PID:SUBJECT",
              help="Role assignment, repeatable.")
@click.option("--as", "admin", default="admin", show_default=True)
@click.pass_context
def user_add(ctx: click.Context, username: str, roles: tuple[str, ...],
             admin: str) -> None:
    """Create or replace a user and their subject role assignments."""
    parsed = []
    for role in roles:
        pid, _, subject = role.partition(":")
        if not pid or not subject:
            raise click.UsageError(f"role {role!r} must be PID:SUBJECT")
        parsed.append({"pid": pid, "subject": subject})
    response = _client(ctx, admin).request(
        "POST", "/api/admin/users",
        json={"username": username, "roles": parsed})
    _emit(response.json(), ctx.obj["json"], f"user {username} saved")


@main.command()
@click.option("--as", "username", default="admin", show_default=True)
@click.option("--since", default=-1, show_default=True,
              help="Replay persisted events after this sequence number.")
@click.pass_context
def watch(ctx: click.Context, username: str, since: int) -> None:
    """Tail the server event stream (newline-delimited JSON)."""
    client = Client(ctx.obj["url"], username)
    with client._http.stream(
            "GET", "/api/events", params={"since": since},
            timeout=httpx.Timeout(10.0, read=None)) as response:
        if response.status_code >= 400:
            response.read()
            _fail_server(response)
        for line in response.iter_lines():
            if line:
                click.echo(line)


@main.command(name="run-script")
@click.argument("paths", type=click.Path(exists=True), nargs=-1, required=True)
@click.option("--poll-interval", default=DEFAULT_POLL_INTERVAL,
              show_default=True)
@click.option("--timeout", default=DEFAULT_TIMEOUT, show_default=True)
@click.pass_context
def run_script(ctx: click.Context, paths: tuple[str, ...],
               poll_interval: float, timeout: float) -> None:
    """Execute agent scripts; multiple files run concurrently."""
    scripts = []
    for path in paths:
        with open(path, "rb") as fh:
            scripts.append((path, json.loads(fh.read())))
    if len(scripts) == 1:
        path, script = scripts[0]
        _run_one_script(ctx.obj["url"], path, script, poll_interval, timeout)
        return
    with concurrent.futures.ThreadPoolExecutor(len(scripts)) as pool:
        futures = [
            pool.submit(_run_one_script, ctx.obj["url"], path, script,
                        poll_interval, timeout)
            for path, script in scripts]
        for future in futures:
            future.result()


class ScriptFailure(click.ClickException):
    exit_code = EXIT_SCRIPT


def _run_one_script(url: str, path: str, script: dict,
                    poll_interval: float, timeout: float) -> None:
    username = script.get("username")
    if not isinstance(username, str):
        raise click.UsageError(f"{path}: script needs a username")
    client = Client(url, username)
    for index, step in enumerate(script.get("steps", [])):
        label = f"{path} step {index}"
        if "start" in step:
            response = client.request(
                "POST", f"/api/processes/{step['start']}/start")
            click.echo(f"{label}: started {response.json()['piid']}")
            continue
        task = _await_task(client, step.get("match", {}), poll_interval,
                           timeout, label)
        _check_expected(task, step.get("expected"), label)
        action = step.get("action", {})
        client.request("POST", f"/api/tasks/{task['tid']}/answer", json=action)
        click.echo(f"{label}: answered {task['kind']} task {task['name']!r}")


def _await_task(client: Client, match: dict, poll_interval: float,
                timeout: float, label: str) -> dict:
    deadline = time.monotonic() + timeout
    while True:
        body = client.request("GET", "/api/tasks").json()
        for kind in ("function", "send", "receive"):
            for task in body[kind]:
                if _matches(task, match):
                    return task
        if time.monotonic() >= deadline:
            raise ScriptFailure(
                f"{label}: timed out waiting for a task matching {match}")
        time.sleep(poll_interval)


def _matches(task: dict, match: dict) -> bool:
    for key in ("kind", "subject", "process"):
        if key in match and task.get(key) != match[key]:
            return False
    if "state" in match and task.get("name") != match["state"]:
        return False
    return True


def _check_expected(task: dict, expected: Optional[dict], label: str) -> None:
    if not expected:
        return
    visible = {p["name"]: p["value"] for p in task.get("params", [])}
    for name, value in expected.items():
        if visible.get(name) != value:
            raise ScriptFailure(
                f"{label}: expected param {name!r}={value!r}, "
                f"saw {visible.get(name)!r}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="TOML config file.")
@click.option("--bind", default=None, help="host:port to listen on.")
@click.option("--store", default=None, help="Path of the embedded store.")
@click.option("--static", "static_path", default=None,
              help="Directory of UI assets to serve at /.")
@click.option("--webhook", "webhooks", multiple=True, metavar="KEY=URL",
              help="Refinement webhook target, repeatable.")
def serve(config_path: Optional[str], bind: Optional[str],
          store: Optional[str], static_path: Optional[str],
          webhooks: tuple[str, ...]) -> None:
    """Run the HTTP server."""
    import uvicorn

    from .api import build_server
    from .config import load_config

    config = load_config(config_path)
    if bind:
        config.bind = bind
    if store:
        config.store_path = store
    if static_path:
        config.static_path = static_path
    for entry in webhooks:
        key, _, url = entry.partition("=")
        if not key or not url:
            raise click.UsageError(f"webhook {entry!r} must be KEY=URL")
        config.webhooks[key] = url
    app, _scheduler, _repo = build_server(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


if __name__ == "__main__":
    main()
