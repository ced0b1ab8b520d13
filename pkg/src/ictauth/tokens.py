"""Identity certification tokens: claims model, compact wire form, signing.

An identity certification token (ICT) is a short-lived signed JSON token that
binds a user's identity claims to a client-held public key (the confirmation
key). It uses the typ header ``ict+jwt`` so it can never be confused with a
provider's ID Tokens (typ ``JWT``), and its lifetime is capped at one hour.
"""

from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .clock import Clock
from .encoding import b64url_decode, b64url_encode
from .errors import (
    EmptyContexts,
    MalformedToken,
    SignatureInvalid,
    TokenExpired,
    TokenNotYetValid,
    ValidityTooLong,
    WrongTokenType,
)
from .keys import (
    KIND_EPHEMERAL,
    KIND_LONG_TERM,
    KeyPairDescriptor,
    jwk_algorithm,
    require_public_jwk,
    verify_with_jwk,
)

ICT_TYP = "ict+jwt"
MAX_VALIDITY_SECONDS = 3600

# Claim names with fixed meaning in the payload; anything else is an identity
# claim and passes through opaquely.
RESERVED_CLAIMS = frozenset({"iss", "sub", "iat", "nbf", "exp", "jti", "ctx", "cnf", "rev_srv"})


@dataclass(frozen=True)
class IctClaims:
    """Payload of an identity certification token."""

    issuer: str
    subject: str
    issued_at: int
    not_before: int
    expires_at: int
    token_id: str
    contexts: tuple[str, ...]
    confirmation_key: dict
    key_kind: str = KIND_EPHEMERAL
    revocation_server: Optional[str] = None
    identity_claims: Mapping[str, object] = field(default_factory=dict)

    def to_payload(self) -> dict:
        payload: dict = {
            "iss": self.issuer,
            "sub": self.subject,
            "iat": self.issued_at,
            "nbf": self.not_before,
            "exp": self.expires_at,
            "jti": self.token_id,
            "ctx": list(self.contexts),
            "cnf": {"jwk": self.confirmation_key},
        }
        if self.revocation_server is not None:
            payload["rev_srv"] = self.revocation_server
        for name in sorted(self.identity_claims):
            if name not in RESERVED_CLAIMS:
                payload[name] = self.identity_claims[name]
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "IctClaims":
        """Parse a decoded payload; raises MalformedToken on structural problems."""
        if not isinstance(payload, dict):
            raise MalformedToken("payload is not a JSON object")
        try:
            contexts = payload["ctx"]
            cnf = payload["cnf"]
            if not isinstance(contexts, list) or not all(isinstance(c, str) for c in contexts):
                raise MalformedToken("ctx must be a list of strings")
            if not isinstance(cnf, dict) or not isinstance(cnf.get("jwk"), dict):
                raise MalformedToken("cnf.jwk missing")
            rev_srv = payload.get("rev_srv")
            claims = cls(
                issuer=str(payload["iss"]),
                subject=str(payload["sub"]),
                issued_at=int(payload["iat"]),
                not_before=int(payload.get("nbf", payload["iat"])),
                expires_at=int(payload["exp"]),
                token_id=str(payload["jti"]),
                contexts=tuple(contexts),
                confirmation_key=cnf["jwk"],
                key_kind=KIND_LONG_TERM if rev_srv is not None else KIND_EPHEMERAL,
                revocation_server=rev_srv,
                identity_claims={
                    k: v for k, v in payload.items() if k not in RESERVED_CLAIMS
                },
            )
        except MalformedToken:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedToken(f"missing or invalid claim: {exc}") from exc
        return claims


@dataclass(frozen=True)
class CompactToken:
    """A signed token plus its canonical serialized form.

    ``serialized`` is the authoritative representation; the segments are
    opaque byte strings and are never re-derived from the parsed fields.
    """

    header: dict
    claims: IctClaims
    signature: bytes
    serialized: str

    def __str__(self) -> str:
        return self.serialized


def build_ict_claims(
    user_info: Mapping[str, object],
    subject: str,
    issuer: str,
    confirmation_key: dict,
    contexts,
    validity_seconds: int,
    clock: Clock,
    key_kind: str = KIND_EPHEMERAL,
    revocation_server: Optional[str] = None,
) -> IctClaims:
    """Assemble claims for a fresh token.

    ``user_info`` is the verified claim map from the provider; the subject is
    stored in its own field and reserved claim names are dropped so they can
    never shadow protocol fields.
    """
    validity = int(validity_seconds)
    if validity <= 0:
        raise ValueError("validity must be positive")
    if validity > MAX_VALIDITY_SECONDS:
        raise ValidityTooLong(f"validity {validity}s exceeds {MAX_VALIDITY_SECONDS}s cap")
    contexts = tuple(contexts)
    if not contexts:
        raise EmptyContexts("at least one context is required")
    require_public_jwk(confirmation_key)
    if key_kind == KIND_LONG_TERM and not revocation_server:
        raise ValueError("long-term confirmation keys require a revocation server")
    if key_kind == KIND_EPHEMERAL and revocation_server:
        raise ValueError("ephemeral confirmation keys must not name a revocation server")
    now = int(clock.now())
    return IctClaims(
        issuer=issuer,
        subject=subject,
        issued_at=now,
        not_before=now,
        expires_at=now + validity,
        token_id=secrets.token_urlsafe(16),
        contexts=contexts,
        confirmation_key=confirmation_key,
        key_kind=key_kind,
        revocation_server=revocation_server,
        identity_claims={
            k: v for k, v in user_info.items() if k not in RESERVED_CLAIMS
        },
    )


def _json_segment(obj: dict) -> str:
    return b64url_encode(json.dumps(obj, separators=(",", ":")).encode("utf-8"))


def sign_compact(header: dict, payload: dict, key: KeyPairDescriptor) -> str:
    """Sign arbitrary header/payload objects into compact three-segment form."""
    signing_input = _json_segment(header) + "." + _json_segment(payload)
    signature = key.sign(signing_input.encode("ascii"))
    return signing_input + "." + b64url_encode(signature)


def sign_token(claims: IctClaims, op_key: KeyPairDescriptor, key_id: str) -> CompactToken:
    """Sign claims with the provider key, producing the compact token."""
    header = {"typ": ICT_TYP, "alg": op_key.algorithm, "kid": key_id}
    serialized = sign_compact(header, claims.to_payload(), op_key)
    signature = b64url_decode(serialized.rsplit(".", 1)[1])
    return CompactToken(header=header, claims=claims, signature=signature, serialized=serialized)


def _split_segments(serialized: str) -> tuple[str, str, str]:
    if not isinstance(serialized, str):
        raise MalformedToken("token must be a string")
    parts = serialized.split(".")
    if len(parts) != 3:
        raise MalformedToken(f"expected 3 segments, got {len(parts)}")
    return parts[0], parts[1], parts[2]


def _decode_json_segment(segment: str, what: str) -> dict:
    try:
        obj = json.loads(b64url_decode(segment))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedToken(f"undecodable {what}: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedToken(f"{what} is not a JSON object")
    return obj


def decode_unverified(serialized: str) -> tuple[dict, dict]:
    """Decode header and payload WITHOUT any signature or validity check.

    Callers must treat the result as untrusted; its only legitimate use is
    discovering the issuer and key id before looking up the right key.
    """
    h, p, _ = _split_segments(serialized)
    return _decode_json_segment(h, "header"), _decode_json_segment(p, "payload")


def verify_signature_only(serialized: str, op_public_key: dict) -> IctClaims:
    """Type, algorithm, and signature checks; no validity-window check."""
    h, p, s = _split_segments(serialized)
    header = _decode_json_segment(h, "header")
    if header.get("typ") != ICT_TYP:
        raise WrongTokenType(f"typ {header.get('typ')!r}, expected {ICT_TYP!r}")
    expected_alg = jwk_algorithm(op_public_key)
    if header.get("alg") != expected_alg:
        raise SignatureInvalid(
            f"header alg {header.get('alg')!r} does not match key ({expected_alg})"
        )
    try:
        signature = b64url_decode(s)
    except ValueError as exc:
        raise MalformedToken(f"undecodable signature: {exc}") from exc
    if not verify_with_jwk(op_public_key, (h + "." + p).encode("ascii"), signature):
        raise SignatureInvalid("signature does not verify under the given key")
    return IctClaims.from_payload(_decode_json_segment(p, "payload"))


def check_validity_window(claims: IctClaims, now: float) -> None:
    if now < claims.not_before:
        raise TokenNotYetValid(f"valid from {claims.not_before}, now {now:.0f}")
    if now > claims.expires_at:
        raise TokenExpired(f"expired at {claims.expires_at}, now {now:.0f}")


def verify_token_signature(token, op_public_key: dict, clock: Clock) -> IctClaims:
    """Full token check: type, signature, and validity window.

    Accepts a CompactToken or its serialized string. Returns the claims only
    if the signature verifies under ``op_public_key``, the typ header marks an
    identity certification token, and the clock falls inside the validity
    window (bounds inclusive).
    """
    serialized = token.serialized if isinstance(token, CompactToken) else token
    claims = verify_signature_only(serialized, op_public_key)
    check_validity_window(claims, clock.now())
    return claims
