"""Tiny revocation-list server for long-term confirmation keys.

Serves ``GET /revoked`` as a JSON array of key thumbprints. Long-term keys
named in a token stay valid until they appear on this list, so verifiers
check it (and fail closed when it cannot be reached).
"""

from __future__ import annotations

import threading
from typing import Iterable

from .httpbase import AppServer, JsonHandler, ServerHandle


class RevocationList:
    def __init__(self, thumbprints: Iterable[str] = ()) -> None:
        self._thumbprints = set(thumbprints)
        self._lock = threading.Lock()

    def revoke(self, thumbprint: str) -> None:
        with self._lock:
            self._thumbprints.add(thumbprint)

    def restore(self, thumbprint: str) -> None:
        with self._lock:
            self._thumbprints.discard(thumbprint)

    def is_revoked(self, thumbprint: str) -> bool:
        with self._lock:
            return thumbprint in self._thumbprints

    def as_list(self) -> list[str]:
        with self._lock:
            return sorted(self._thumbprints)


class RevocationHandler(JsonHandler):
    def do_GET(self) -> None:
        if self.path == "/revoked":
            self.send_json(self.app.as_list())
        else:
            self.send_json({"error": "not_found"}, 404)


def make_revocation_server(
    revlist: RevocationList, host: str = "127.0.0.1", port: int = 0
) -> ServerHandle:
    return ServerHandle(AppServer((host, port), RevocationHandler, revlist))
