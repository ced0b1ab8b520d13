"""Canonical base64url (no padding) used for all wire fields.

Decoding is strict: non-alphabet characters, impossible lengths, and
non-canonical trailing bits are all rejected. Without the canonicality check,
two distinct encoded strings can decode to the same bytes (unused bits in the
final character), which would let a mutated-but-equivalent segment slip
through signature checks.
"""

from __future__ import annotations

import base64
import re

_B64URL = re.compile(r"^[A-Za-z0-9_-]*$")


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    """Decode canonical unpadded base64url; raises ValueError otherwise."""
    if not isinstance(text, str) or not _B64URL.fullmatch(text):
        raise ValueError("invalid base64url characters")
    if len(text) % 4 == 1:
        raise ValueError("invalid base64url length")
    raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    if b64url_encode(raw) != text:
        raise ValueError("non-canonical base64url")
    return raw
