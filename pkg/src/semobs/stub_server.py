"""Scripted inference server for integration tests.

Speaks the ``POST /infer`` JSON protocol of :class:`semobs.backend.RemoteBackend`.
It never looks at frames: it answers a fixed text after a fixed delay, or a
scripted status code / broken body to exercise client error paths.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@dataclass
class Script:
    text: str = "Normal"
    delay_s: float = 0.0
    status: int = 200
    body: bytes | None = None  # raw override, e.g. a schema violation
    tokens_generated: int = 1
    infer_ms: float | None = None


def _handler(script: Script, requests_seen: list):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 - http.server API
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            try:
                requests_seen.append(json.loads(raw))
            except ValueError:
                requests_seen.append(None)
            if self.path.rstrip("/") != "/infer":
                self.send_error(404)
                return
            if script.delay_s:
                time.sleep(script.delay_s)
            if script.body is not None:
                payload = script.body
            else:
                infer_ms = script.infer_ms if script.infer_ms is not None else script.delay_s * 1000
                payload = json.dumps(
                    {"text": script.text, "tokens_generated": script.tokens_generated,
                     "infer_ms": infer_ms}
                ).encode()
            try:
                self.send_response(script.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
            except (BrokenPipeError, ConnectionResetError):
                pass  # client abandoned the call

        def log_message(self, format, *args):
            pass

    return Handler


class StubServer:
    """Context manager running the stub on a background thread.

    >>> with StubServer(Script(text="Normal")) as srv:   # doctest: +SKIP
    ...     srv.url
    'http://127.0.0.1:PORT'
    """

    def __init__(self, script: Script | None = None, host: str = "127.0.0.1", port: int = 0):
        self.script = script or Script()
        self.requests: list = []
        self._server = ThreadingHTTPServer((host, port), _handler(self.script, self.requests))
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(script: Script, host: str = "127.0.0.1", port: int = 8765) -> None:
    srv = StubServer(script, host, port)
    print(f"stub inference server on {srv.url}", flush=True)
    try:
        srv._server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv._server.server_close()
