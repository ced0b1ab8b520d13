"""Test helpers: an independent base64url decoder and byte mutators."""

from __future__ import annotations

import random

_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_"

# Characters a mutation may substitute: the token alphabet plus some noise.
_MUTATION_CHARS = _ALPHABET + "=.!{}\" "


def independent_b64url_decode(text: str) -> bytes:
    """From-scratch base64url decode (bit twiddling, no stdlib base64)."""
    bits = "".join(format(_ALPHABET.index(ch), "06b") for ch in text)
    usable = len(bits) - (len(bits) % 8)
    return bytes(int(bits[i:i + 8], 2) for i in range(0, usable, 8))


def mutate_str(text: str, rng: random.Random) -> str:
    """Replace one character with a different one."""
    pos = rng.randrange(len(text))
    old = text[pos]
    new = old
    while new == old:
        new = rng.choice(_MUTATION_CHARS)
    return text[:pos] + new + text[pos + 1:]


def mutate_bytes(data: bytes, rng: random.Random) -> bytes:
    """Flip one random bit of one random byte."""
    if not data:
        return b"\x01"
    pos = rng.randrange(len(data))
    flipped = data[pos] ^ (1 << rng.randrange(8))
    return data[:pos] + bytes([flipped]) + data[pos + 1:]
