"""Shared plumbing for the bundled HTTP services (threaded stdlib server)."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import parse_qs

log = logging.getLogger(__name__)


class AppServer(ThreadingHTTPServer):
    """ThreadingHTTPServer that carries the application object for handlers."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, handler_class, app: Any) -> None:
        super().__init__(address, handler_class)
        self.app = app


class JsonHandler(BaseHTTPRequestHandler):
    """Base handler: JSON responses with correct lengths, keep-alive enabled."""

    protocol_version = "HTTP/1.1"

    @property
    def app(self):
        return self.server.app  # type: ignore[attr-defined]

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    def send_json(self, obj: Any, status: int = 200, headers: Optional[dict] = None) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        for name, value in (headers or {}).items():
            self.send_header(name, value)
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length) if length else b""

    def read_json_body(self) -> Any:
        try:
            return json.loads(self._read_body())
        except (ValueError, UnicodeDecodeError):
            return None

    def read_form_body(self) -> dict[str, str]:
        parsed = parse_qs(self._read_body().decode("utf-8", errors="replace"))
        return {k: v[0] for k, v in parsed.items() if v}

    def bearer_token(self) -> Optional[str]:
        auth = self.headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            return auth[len("Bearer "):].strip()
        return None


class ServerHandle:
    """Runs an AppServer on a background thread; use as a context manager."""

    def __init__(self, server: AppServer) -> None:
        self.server = server
        self._thread: Optional[threading.Thread] = None

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ServerHandle":
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def __enter__(self) -> "ServerHandle":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
