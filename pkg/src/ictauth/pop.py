"""Proof of possession for the client key in a token request.

The client picks a 128-bit nonce, concatenates it with a unix timestamp as
``nonce "." timestamp``, and signs that string with its private key. The
server accepts only proofs whose timestamp deviates at most 15 seconds from
its own time and whose nonce it has not seen within the last 30 seconds, then
caches the nonce. Check-and-insert is a single atomic step so two concurrent
requests can never both spend the same nonce.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from typing import Optional

from .clock import Clock
from .encoding import b64url_decode, b64url_encode
from .errors import UnsupportedAlgorithm
from .keys import KeyPairDescriptor, verify_with_jwk

NONCE_BYTES = 16
DEFAULT_NONCE_TTL_SECONDS = 30.0
DEFAULT_MAX_SKEW_SECONDS = 15.0

# Distinguishing verdict codes; each maps to its own protocol error.
STALE_TIMESTAMP = "stale-timestamp"
REPLAYED_NONCE = "replayed-nonce"
BAD_SIGNATURE = "bad-signature"
MALFORMED_POP = "malformed-pop"


@dataclass(frozen=True)
class ProofOfPossession:
    nonce: str          # base64url of 16 random bytes
    timestamp: int      # unix seconds
    signature: bytes    # over pop_signing_input(nonce, timestamp)

    def to_wire(self) -> dict:
        return {"nonce": self.nonce, "ts": self.timestamp, "sig": b64url_encode(self.signature)}

    @classmethod
    def from_wire(cls, obj: dict) -> "ProofOfPossession":
        if not isinstance(obj, dict):
            raise ValueError("pop must be a JSON object")
        nonce = obj.get("nonce")
        ts = obj.get("ts")
        sig = obj.get("sig")
        if not isinstance(nonce, str) or not isinstance(sig, str):
            raise ValueError("pop fields have wrong types")
        if isinstance(ts, bool) or not isinstance(ts, int):
            raise ValueError("pop timestamp must be an integer")
        return cls(nonce=nonce, timestamp=ts, signature=b64url_decode(sig))


@dataclass(frozen=True)
class PopVerdict:
    accepted: bool
    error: Optional[str] = None


def pop_signing_input(nonce: str, timestamp: int) -> bytes:
    return f"{nonce}.{timestamp}".encode("ascii")


class NonceCache:
    """Remembers nonces for ``ttl_seconds``; safe for concurrent handlers.

    An entry is live through insertion time + ttl and expired strictly after
    (inserted at t, still present at t+30, gone at t+31 with the default ttl).
    """

    def __init__(self, ttl_seconds: float = DEFAULT_NONCE_TTL_SECONDS) -> None:
        self.ttl_seconds = float(ttl_seconds)
        self._entries: dict[str, float] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def _live(self, inserted_at: float, now: float) -> bool:
        return now - inserted_at <= self.ttl_seconds

    def contains(self, nonce: str, now: float) -> bool:
        with self._lock:
            inserted_at = self._entries.get(nonce)
            return inserted_at is not None and self._live(inserted_at, now)

    def check_and_insert(self, nonce: str, now: float) -> bool:
        """Atomically insert; False if the nonce is already live (replay)."""
        with self._lock:
            inserted_at = self._entries.get(nonce)
            if inserted_at is not None and self._live(inserted_at, now):
                return False
            self._entries[nonce] = now
            return True

    def purge(self, now: float) -> int:
        with self._lock:
            dead = [n for n, t in self._entries.items() if not self._live(t, now)]
            for n in dead:
                del self._entries[n]
            return len(dead)


def create_pop(client_key: KeyPairDescriptor, clock: Clock) -> ProofOfPossession:
    """Build a fresh proof with a random nonce and the clock's current time."""
    nonce = b64url_encode(secrets.token_bytes(NONCE_BYTES))
    timestamp = int(clock.now())
    signature = client_key.sign(pop_signing_input(nonce, timestamp))
    return ProofOfPossession(nonce=nonce, timestamp=timestamp, signature=signature)


def verify_pop(
    pop: ProofOfPossession,
    client_public_key: dict,
    cache: NonceCache,
    clock: Clock,
    max_skew_seconds: float = DEFAULT_MAX_SKEW_SECONDS,
) -> PopVerdict:
    """Check a proof against the submitted public key and the replay cache.

    Rejections never touch the cache; the nonce is inserted atomically with
    the replay check, and only once everything else has passed.
    """
    try:
        nonce_raw = b64url_decode(pop.nonce)
    except (ValueError, TypeError):
        return PopVerdict(False, MALFORMED_POP)
    if len(nonce_raw) != NONCE_BYTES:
        return PopVerdict(False, MALFORMED_POP)
    if isinstance(pop.timestamp, bool) or not isinstance(pop.timestamp, int):
        return PopVerdict(False, MALFORMED_POP)
    if not isinstance(pop.signature, (bytes, bytearray)) or not pop.signature:
        return PopVerdict(False, MALFORMED_POP)

    now = clock.now()
    if abs(now - pop.timestamp) > max_skew_seconds:
        return PopVerdict(False, STALE_TIMESTAMP)

    try:
        ok = verify_with_jwk(
            client_public_key, pop_signing_input(pop.nonce, pop.timestamp), bytes(pop.signature)
        )
    except UnsupportedAlgorithm:
        ok = False
    if not ok:
        return PopVerdict(False, BAD_SIGNATURE)

    if not cache.check_and_insert(pop.nonce, now):
        return PopVerdict(False, REPLAYED_NONCE)
    return PopVerdict(True)


def purge_expired(cache: NonceCache, clock: Clock) -> int:
    """Drop entries past their ttl; returns how many were removed."""
    return cache.purge(clock.now())
