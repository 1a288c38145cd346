"""Shared test fixtures."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def read_golden(name: str) -> str:
    text = (GOLDEN / name).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


@pytest.fixture
def stub_http_server():
    """Start a scripted HTTP server; yields (url, set_handler, call_log).

    The handler receives the parsed JSON body and returns (status, payload).
    """
    state = {"handler": lambda body: (200, {}), "calls": []}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            state["calls"].append(body)
            status, payload = state["handler"](body)
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}"

    def set_handler(fn):
        state["handler"] = fn

    yield url, set_handler, state["calls"]
    server.shutdown()
    thread.join(timeout=5)
