"""Run the HTTP server in-thread (for streaming tests) or as a subprocess
(for crash tests)."""
import json
import socket
import subprocess
import sys
import threading
import time

import httpx
import uvicorn

from subjekt.api import build_server
from subjekt.config import ApiConfig


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ThreadServer:
    """uvicorn in a daemon thread over a fresh store."""

    def __init__(self, store_path: str, webhooks=None):
        self.port = free_port()
        config = ApiConfig(bind=f"127.0.0.1:{self.port}",
                           store_path=store_path,
                           webhooks=dict(webhooks or {}))
        self.app, self.scheduler, self.repo = build_server(config)
        self._server = uvicorn.Server(uvicorn.Config(
            self.app, host="127.0.0.1", port=self.port, log_level="error"))
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self) -> "ThreadServer":
        self._thread.start()
        wait_ready(self.url)
        return self

    def __exit__(self, *exc) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5)


class SubprocessServer:
    """`subjekt serve` in a subprocess, killable with SIGKILL."""

    def __init__(self, store_path: str, webhooks=None, port=None):
        self.store_path = store_path
        self.webhooks = dict(webhooks or {})
        self.port = port or free_port()
        self.process = None

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> None:
        argv = [sys.executable, "-m", "subjekt.cli", "serve",
                "--bind", f"127.0.0.1:{self.port}",
                "--store", self.store_path]
        for key, url in self.webhooks.items():
            argv += ["--webhook", f"{key}={url}"]
        self.process = subprocess.Popen(
            argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        wait_ready(self.url)

    def kill(self) -> None:
        self.process.kill()
        self.process.wait()

    def stop(self) -> None:
        if self.process and self.process.poll() is None:
            self.process.terminate()
            self.process.wait(timeout=10)


def wait_ready(url: str, timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            httpx.get(url + "/api/processes", timeout=1.0)
            return
        except httpx.HTTPError:
            time.sleep(0.05)
    raise RuntimeError(f"server at {url} did not come up")


def seed_internal_order(url: str, fixture_bytes: bytes) -> None:
    """Upload the use-case process and its two users."""
    admin = {"X-User": "admin"}
    response = httpx.post(url + "/api/admin/definitions",
                          content=fixture_bytes, headers=admin)
    assert response.status_code == 200, response.text
    for username, subject in (("jd", "Employee"), ("nr", "Supervisor")):
        response = httpx.post(url + "/api/admin/users", headers=admin, json={
            "username": username,
            "roles": [{"pid": "internal-order", "subject": subject}]})
        assert response.status_code == 200, response.text


class EventCollector:
    """Background reader of the newline-delimited JSON event stream."""

    def __init__(self, url: str, since: int = 0):
        self.url = url
        self.since = since
        self.events = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._read, daemon=True)
        self._started = threading.Event()

    def __enter__(self) -> "EventCollector":
        self._thread.start()
        if not self._started.wait(timeout=5):
            raise RuntimeError("event stream did not connect")
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()

    def _read(self) -> None:
        with httpx.stream(
                "GET", self.url + "/api/events",
                params={"since": self.since}, headers={"X-User": "admin"},
                timeout=httpx.Timeout(5.0, read=None)) as response:
            self._started.set()
            for line in response.iter_lines():
                if self._stop.is_set():
                    return
                if line:
                    with self._lock:
                        self.events.append(json.loads(line))

    def kinds(self) -> list[str]:
        with self._lock:
            return [e["kind"] for e in self.events]

    def wait_for(self, kind: str, count: int = 1, timeout: float = 10.0) -> None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.kinds().count(kind) >= count:
                return
            time.sleep(0.05)
        raise AssertionError(
            f"event {kind} x{count} not observed; saw {self.kinds()}")
