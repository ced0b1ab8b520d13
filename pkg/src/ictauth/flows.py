"""Transport-agnostic application flows built on certification tokens.

Three patterns, distinguished by how possession of the client key is proven:

* videoconference: mutual handshake where each side signs its token together
  with a session identifier unique to this handshake, so a message relayed
  from another session can never complete it;
* instant messaging: a token for the key that already authenticates an
  established secure channel; using the channel is the possession proof, and
  the token only has to be valid at the moment it was received;
* email: the whole message (body, attachments, timestamp, token) is signed,
  so the signed message itself is the possession proof and any mutation or
  token swap breaks it.

Flows consume and produce messages only; they never assume the transport
preserves integrity or ordering.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from .clock import Clock, ManualClock, SYSTEM_CLOCK
from .encoding import b64url_decode, b64url_encode
from .errors import KeyIctMismatch, MalformedToken, WrongContext
from .keys import KeyPairDescriptor, jwk_thumbprint, verify_with_jwk
from .tokens import decode_unverified
from .verifier import (
    AuthenticationResult,
    KeyLookup,
    TrustPolicy,
    verify_ict,
)

CONTEXT_VC = "vc"
CONTEXT_IM = "im"
CONTEXT_EMAIL = "email"

# Recommended token lifetimes per context; callers may override at request time.
RECOMMENDED_VALIDITY_SECONDS = {CONTEXT_VC: 300, CONTEXT_IM: 300, CONTEXT_EMAIL: 3600}


@dataclass(frozen=True)
class SessionId:
    """Unique handshake identifier: both party ids, a timestamp, randomness."""

    value: str

    @classmethod
    def generate(cls, initiator_id: str, responder_id: str, clock: Clock) -> "SessionId":
        millis = int(clock.now() * 1000)
        return cls(f"{initiator_id}|{responder_id}|{millis}|{secrets.token_hex(8)}")


@dataclass(frozen=True)
class HandshakeMessage:
    ict: str
    session_id: str
    signature: bytes  # over session_id "." ict, by the sender's client key

    def to_wire(self) -> dict:
        return {
            "ict": self.ict,
            "session_id": self.session_id,
            "sig": b64url_encode(self.signature),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "HandshakeMessage":
        return cls(
            ict=obj["ict"],
            session_id=obj["session_id"],
            signature=b64url_decode(obj["sig"]),
        )


@dataclass(frozen=True)
class VcPending:
    """Initiator-side state awaiting the peer's response."""

    session_id: str
    peer_id: str
    own_ict: str


@dataclass(frozen=True)
class SignedMessage:
    body: bytes
    attachments: tuple[bytes, ...]
    sent_at: int
    ict: str
    signature: bytes

    def to_wire(self) -> dict:
        return {
            "body": b64url_encode(self.body),
            "attachments": [b64url_encode(a) for a in self.attachments],
            "sent_at": self.sent_at,
            "ict": self.ict,
            "sig": b64url_encode(self.signature),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "SignedMessage":
        return cls(
            body=b64url_decode(obj["body"]),
            attachments=tuple(b64url_decode(a) for a in obj["attachments"]),
            sent_at=int(obj["sent_at"]),
            ict=obj["ict"],
            signature=b64url_decode(obj["sig"]),
        )


def _rejected(reason: str) -> AuthenticationResult:
    return AuthenticationResult(verdict="rejected", rejection_reason=reason)


def _own_token_checks(own_key: KeyPairDescriptor, own_ict: str, context: str) -> None:
    """The local token must confirm the local key and cover the context."""
    try:
        _, payload = decode_unverified(own_ict)
        cnf = payload["cnf"]["jwk"]
        contexts = payload["ctx"]
    except (MalformedToken, KeyError, TypeError) as exc:
        raise KeyIctMismatch(f"own token unreadable: {exc}") from exc
    if jwk_thumbprint(cnf) != own_key.thumbprint:
        raise KeyIctMismatch("token does not certify this key")
    if context not in contexts:
        raise WrongContext(f"token contexts {contexts} lack {context!r}")


def _handshake_signing_input(session_id: str, ict: str) -> bytes:
    return session_id.encode("utf-8") + b"." + ict.encode("ascii")


def _handshake_signature_ok(message: HandshakeMessage) -> bool:
    try:
        _, payload = decode_unverified(message.ict)
        cnf = payload["cnf"]["jwk"]
        return verify_with_jwk(
            cnf, _handshake_signing_input(message.session_id, message.ict), message.signature
        )
    except Exception:
        return False


# -- videoconference ----------------------------------------------------------

def vc_initiate(
    own_key: KeyPairDescriptor,
    own_ict: str,
    peer_id: str,
    clock: Clock,
) -> tuple[HandshakeMessage, VcPending]:
    """Open a handshake: sign our token together with a fresh session id."""
    _own_token_checks(own_key, own_ict, CONTEXT_VC)
    _, payload = decode_unverified(own_ict)
    session = SessionId.generate(str(payload.get("sub", "")), peer_id, clock)
    signature = own_key.sign(_handshake_signing_input(session.value, own_ict))
    message = HandshakeMessage(ict=own_ict, session_id=session.value, signature=signature)
    return message, VcPending(session_id=session.value, peer_id=peer_id, own_ict=own_ict)


def vc_respond(
    incoming: HandshakeMessage,
    own_key: KeyPairDescriptor,
    own_ict: str,
    policy: TrustPolicy,
    op_keys: KeyLookup,
    clock: Clock,
) -> tuple[Optional[HandshakeMessage], AuthenticationResult]:
    """Verify the initiator and, if trusted, answer within the same session.

    The response echoes the incoming session id; a rejection produces no
    response message at all.
    """
    if not _handshake_signature_ok(incoming):
        return None, _rejected("bad-handshake-signature")
    result = verify_ict(incoming.ict, op_keys, policy, CONTEXT_VC, clock)
    if not result.accepted:
        return None, result
    _own_token_checks(own_key, own_ict, CONTEXT_VC)
    signature = own_key.sign(_handshake_signing_input(incoming.session_id, own_ict))
    response = HandshakeMessage(
        ict=own_ict, session_id=incoming.session_id, signature=signature
    )
    return response, result


def vc_complete(
    pending: VcPending,
    response: HandshakeMessage,
    policy: TrustPolicy,
    op_keys: KeyLookup,
    clock: Clock,
) -> AuthenticationResult:
    """Initiator side: accept the response only for our own session.

    On acceptance the peer's confirmed key is in the result; together with
    our own key these are the channel-establishment keys. The channel itself
    is the caller's business, and once established it stays valid even after
    the tokens expire.
    """
    if response.session_id != pending.session_id:
        return _rejected("session-mismatch")
    if not _handshake_signature_ok(response):
        return _rejected("bad-handshake-signature")
    return verify_ict(response.ict, op_keys, policy, CONTEXT_VC, clock)


# -- instant messaging ----------------------------------------------------------

def im_bind_channel(
    channel_public_key: dict,
    ict: str,
    policy: TrustPolicy,
    op_keys: KeyLookup,
    receipt_time: float,
) -> AuthenticationResult:
    """Bind a token to the key already authenticating a secure channel.

    The token is evaluated at the time it was received, not now, so the
    verdict can be (re)computed later. Possession is implicit in channel use;
    what matters is that the certified key is byte-identical to the channel
    key, otherwise someone sits in the middle.
    """
    result = verify_ict(ict, op_keys, policy, CONTEXT_IM, ManualClock(receipt_time))
    if not result.accepted:
        if result.rejection_reason == "token-expired":
            return _rejected("receipt-after-expiry")
        return result
    if jwk_thumbprint(result.confirmation_key) != jwk_thumbprint(channel_public_key):
        return _rejected("key-mismatch")
    return result


# -- email ---------------------------------------------------------------------

def _message_signing_input(
    body: bytes, attachments: Sequence[bytes], sent_at: int, ict: str
) -> bytes:
    """Length-prefixed canonical encoding; prefixes rule out boundary games."""
    parts = [struct.pack(">Q", len(body)), body, struct.pack(">I", len(attachments))]
    for attachment in attachments:
        parts.append(struct.pack(">Q", len(attachment)))
        parts.append(attachment)
    parts.append(struct.pack(">q", sent_at))
    ict_bytes = ict.encode("ascii")
    parts.append(struct.pack(">Q", len(ict_bytes)))
    parts.append(ict_bytes)
    return b"".join(parts)


def email_sign(
    body: bytes,
    attachments: Sequence[bytes],
    own_key: KeyPairDescriptor,
    own_ict: str,
    clock: Clock,
) -> SignedMessage:
    """Sign the entire message, token included, with the certified key."""
    _own_token_checks(own_key, own_ict, CONTEXT_EMAIL)
    sent_at = int(clock.now())
    attachments = tuple(bytes(a) for a in attachments)
    signature = own_key.sign(_message_signing_input(body, attachments, sent_at, own_ict))
    return SignedMessage(
        body=bytes(body),
        attachments=attachments,
        sent_at=sent_at,
        ict=own_ict,
        signature=signature,
    )


def email_verify(
    msg: SignedMessage,
    policy: TrustPolicy,
    op_keys: KeyLookup,
    inbox_timestamp: float,
    trust_inbox_time: bool,
    clock: Clock = SYSTEM_CLOCK,
) -> AuthenticationResult:
    """Verify a signed message against the token it carries.

    The token is evaluated at the inbox timestamp when the receiving server
    is trusted, otherwise at the current time; so with a trusted inbox a
    message may be read long after the token expired. Long-term confirmation
    keys are exempt from the expiry bound entirely and rely on the revocation
    list instead.
    """
    try:
        _, payload = decode_unverified(msg.ict)
        cnf = payload["cnf"]["jwk"]
    except (MalformedToken, KeyError, TypeError):
        return _rejected("malformed-token")
    signing_input = _message_signing_input(msg.body, msg.attachments, msg.sent_at, msg.ict)
    try:
        if not verify_with_jwk(cnf, signing_input, msg.signature):
            return _rejected("bad-signature")
    except Exception:
        return _rejected("bad-signature")

    reference_time = inbox_timestamp if trust_inbox_time else clock.now()
    long_term = payload.get("rev_srv") is not None
    result = verify_ict(
        msg.ict,
        op_keys,
        policy,
        CONTEXT_EMAIL,
        ManualClock(reference_time),
        ignore_expiry=long_term,
    )
    if not result.accepted and result.rejection_reason == "token-expired":
        return _rejected("ict-expired")
    return result
