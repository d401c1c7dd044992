from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubProvider:
    """Tiny OpenAI-shaped HTTP server.

    ``routes`` maps a path suffix to a status code; ``reply`` is the chat
    completion text (a callable receives the request body).
    """

    def __init__(self, routes=None, reply="Score: 7"):
        self.routes = routes or {}
        self.reply = reply
        self.requests: list[tuple[str, str]] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _handle(self, method):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                with stub._lock:
                    stub.requests.append((method, self.path))
                status = 200
                for suffix, code in stub.routes.items():
                    if self.path.endswith(suffix):
                        status = code
                payload = {"error": {"message": "stub"}}
                if status == 200:
                    if self.path.endswith("/models"):
                        payload = {"data": [{"id": "stub-model"}]}
                    elif self.path.endswith("/chat/completions"):
                        req = json.loads(body or b"{}")
                        text = stub.reply(req) if callable(stub.reply) else stub.reply
                        payload = {"choices": [{"message": {"role": "assistant", "content": text}}]}
                    else:
                        payload = {"output_text": "pong"}
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._handle("GET")

            def do_POST(self):
                self._handle("POST")

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def count(self, suffix: str = "") -> int:
        with self._lock:
            return sum(1 for _, p in self.requests if p.endswith(suffix))

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_factory():
    started = []

    def make(routes=None, reply="Score: 7"):
        stub = StubProvider(routes, reply).__enter__()
        started.append(stub)
        return stub

    yield make
    for stub in started:
        stub.__exit__(None, None, None)


@pytest.fixture
def no_provider_env(monkeypatch):
    for var in ("GPT5_API_BASE", "GPT5_API_KEY", "CASCADEBENCH_CONFIG"):
        monkeypatch.delenv(var, raising=False)


_CRITERIA: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    n, text = marker.args
    if report.when == "setup" and report.passed:
        return
    passed = report.passed and _CRITERIA.get(n, (text, True))[1]
    _CRITERIA[n] = (text, passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, passed = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {text}")
