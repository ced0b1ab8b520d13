"""Authenticating-party side: trust policy, token verification, key lookup.

Issuers fall into three classes. ``insecure`` issuers are never accepted.
``authoritative`` issuers are an authority for specific claims (an email
provider for addresses in its own domain, and always for the subject
identifier it mints). ``verifying`` issuers are trusted to have checked
claims they are not the origin of (a bank that saw a passport vouching for a
name). One issuer can hold both claim sets at once. Every verified claim in a
result is annotated with its provenance so applications never present an
uncertified claim as certified.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import requests

from .clock import Clock, SYSTEM_CLOCK
from .errors import (
    IctAuthError,
    MalformedToken,
    PolicyError,
    RevocationUnreachable,
    SignatureInvalid,
    TokenExpired,
    TokenNotYetValid,
    WrongTokenType,
)
from .keys import KIND_EPHEMERAL, KIND_LONG_TERM, jwk_thumbprint
from .tokens import IctClaims, check_validity_window, decode_unverified, verify_signature_only

CLASS_INSECURE = "insecure"
CLASS_AUTHORITATIVE = "authoritative"
CLASS_VERIFYING = "verifying"

PROVENANCE_AUTHORITATIVE = "authoritative"
PROVENANCE_VERIFIED = "verified"
PROVENANCE_UNCERTIFIED = "uncertified"

# Accepted spellings in policy files.
_CLASS_ALIASES = {
    "insecure": CLASS_INSECURE,
    "aop": CLASS_AUTHORITATIVE,
    "authoritative": CLASS_AUTHORITATIVE,
    "vop": CLASS_VERIFYING,
    "verifying": CLASS_VERIFYING,
}

# (issuer, kid) -> public JWK or None
KeyLookup = Callable[[str, Optional[str]], Optional[dict]]

JWKS_CACHE_TTL_SECONDS = 300.0
HTTP_TIMEOUT_SECONDS = 5.0


@dataclass(frozen=True)
class TrustEntry:
    klass: str
    authoritative_claims: frozenset[str] = frozenset()
    verified_claims: frozenset[str] = frozenset()
    rank: int = 0

    def __post_init__(self) -> None:
        if self.klass not in (CLASS_INSECURE, CLASS_AUTHORITATIVE, CLASS_VERIFYING):
            raise PolicyError(f"unknown trust class: {self.klass}")
        if self.klass == CLASS_INSECURE:
            if self.authoritative_claims or self.verified_claims:
                raise PolicyError("insecure entries must not list any claims")
        else:
            # Every issuer is the origin of its own subject identifiers.
            object.__setattr__(
                self, "authoritative_claims", self.authoritative_claims | {"sub"}
            )

    @property
    def trusted(self) -> bool:
        return self.klass != CLASS_INSECURE


INSECURE_ENTRY = TrustEntry(klass=CLASS_INSECURE)


@dataclass
class TrustPolicy:
    """Per-issuer classification; unknown issuers default to insecure.

    ``unknown_issuer_hook``, when set, is consulted for issuers absent from
    the table (an embedding application may ask its user); it returns an
    entry to use for this call only, or None to keep the insecure default.
    """

    entries: dict[str, TrustEntry] = field(default_factory=dict)
    default_class: str = CLASS_INSECURE
    unknown_issuer_hook: Optional[Callable[[str], Optional[TrustEntry]]] = None

    def classify(self, issuer: str) -> TrustEntry:
        entry = self.entries.get(issuer)
        if entry is not None:
            return entry
        if self.unknown_issuer_hook is not None:
            answer = self.unknown_issuer_hook(issuer)
            if answer is not None:
                return answer
        return INSECURE_ENTRY

    @classmethod
    def from_dict(cls, raw: dict) -> "TrustPolicy":
        if raw.get("default", CLASS_INSECURE) != CLASS_INSECURE:
            raise PolicyError("only an insecure default is supported")
        entries = {}
        for item in raw.get("issuers", []):
            klass = _CLASS_ALIASES.get(str(item.get("class", "")).lower())
            if klass is None:
                raise PolicyError(f"unknown class for {item.get('iss')}: {item.get('class')}")
            entries[item["iss"]] = TrustEntry(
                klass=klass,
                authoritative_claims=frozenset(item.get("authoritative_claims", [])),
                verified_claims=frozenset(item.get("verified_claims", [])),
                rank=int(item.get("rank", 0)),
            )
        return cls(entries=entries)

    @classmethod
    def from_file(cls, path: str) -> "TrustPolicy":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "default": self.default_class,
            "issuers": [
                {
                    "iss": iss,
                    "class": e.klass,
                    "authoritative_claims": sorted(e.authoritative_claims),
                    "verified_claims": sorted(e.verified_claims),
                    "rank": e.rank,
                }
                for iss, e in sorted(self.entries.items())
            ],
        }


@dataclass(frozen=True)
class AuthenticationResult:
    verdict: str                      # "accepted" | "rejected"
    issuer: Optional[str] = None
    subject: Optional[str] = None
    claims: dict = field(default_factory=dict)  # name -> (value, provenance)
    confirmation_key: Optional[dict] = None
    key_kind: str = KIND_EPHEMERAL
    rejection_reason: Optional[str] = None
    expires_at: Optional[int] = None

    @property
    def accepted(self) -> bool:
        return self.verdict == "accepted"


def _rejected(reason: str, issuer: Optional[str] = None) -> AuthenticationResult:
    return AuthenticationResult(verdict="rejected", issuer=issuer, rejection_reason=reason)


def classify_op(issuer: str, policy: TrustPolicy) -> TrustEntry:
    """Trust entry for an issuer; insecure when the policy has no opinion."""
    return policy.classify(issuer)


def _annotate(claims: IctClaims, entry: TrustEntry) -> dict:
    annotated = {}
    items = dict(claims.identity_claims)
    items["sub"] = claims.subject
    for name, value in items.items():
        if name in entry.authoritative_claims:
            provenance = PROVENANCE_AUTHORITATIVE
        elif name in entry.verified_claims:
            provenance = PROVENANCE_VERIFIED
        else:
            provenance = PROVENANCE_UNCERTIFIED
        annotated[name] = (value, provenance)
    return annotated


def check_revocation(
    revocation_server: str,
    key_thumbprint: str,
    timeout: float = HTTP_TIMEOUT_SECONDS,
    session: Optional[requests.Session] = None,
) -> str:
    """Returns "good" or "revoked"; raises RevocationUnreachable otherwise."""
    http = session or requests
    url = revocation_server.rstrip("/") + "/revoked"
    try:
        response = http.get(url, timeout=timeout)
    except requests.RequestException as exc:
        raise RevocationUnreachable(f"{url}: {exc}") from exc
    if response.status_code != 200:
        raise RevocationUnreachable(f"{url} returned {response.status_code}")
    try:
        revoked = response.json()
    except ValueError as exc:
        raise RevocationUnreachable(f"{url}: body is not JSON") from exc
    if not isinstance(revoked, list):
        raise RevocationUnreachable(f"{url}: expected a JSON array")
    return "revoked" if key_thumbprint in revoked else "good"


def verify_ict(
    token: str,
    op_keys: KeyLookup,
    policy: TrustPolicy,
    expected_context: str,
    clock: Clock,
    *,
    ignore_expiry: bool = False,
    session: Optional[requests.Session] = None,
) -> AuthenticationResult:
    """End-to-end verification of one serialized token.

    Trust in the issuer is established first (an untrusted issuer's token is
    never cryptographically inspected further), then the signature, type, and
    validity window are checked, then the context scoping, and finally the
    revocation list for long-term confirmation keys (failing closed when the
    revocation server cannot be reached). ``ignore_expiry`` skips only the
    expiry bound; long-term-key workflows that rely on revocation use it.
    """
    try:
        header, payload = decode_unverified(token)
    except MalformedToken as exc:
        return _rejected(exc.code)
    issuer = payload.get("iss")
    if not isinstance(issuer, str):
        return _rejected("malformed-token")

    entry = classify_op(issuer, policy)
    if not entry.trusted:
        return _rejected("untrusted-issuer", issuer)

    try:
        key = op_keys(issuer, header.get("kid"))
    except IctAuthError:
        key = None
    except requests.RequestException:
        key = None
    if key is None:
        return _rejected("unknown-key-id", issuer)

    try:
        claims = verify_signature_only(token, key)
        if ignore_expiry:
            if clock.now() < claims.not_before:
                raise TokenNotYetValid()
        else:
            check_validity_window(claims, clock.now())
    except (SignatureInvalid, TokenExpired, TokenNotYetValid, WrongTokenType, MalformedToken) as exc:
        return _rejected(exc.code, issuer)

    if expected_context not in claims.contexts:
        return _rejected("context-mismatch", issuer)

    if claims.key_kind == KIND_LONG_TERM:
        try:
            status = check_revocation(
                claims.revocation_server, jwk_thumbprint(claims.confirmation_key),
                session=session,
            )
        except RevocationUnreachable:
            return _rejected("revocation-unreachable", issuer)
        if status == "revoked":
            return _rejected("key-revoked", issuer)

    return AuthenticationResult(
        verdict="accepted",
        issuer=issuer,
        subject=claims.subject,
        claims=_annotate(claims, entry),
        confirmation_key=claims.confirmation_key,
        key_kind=claims.key_kind,
        expires_at=claims.expires_at,
    )


@dataclass(frozen=True)
class MultiIctSelection:
    result: AuthenticationResult
    chosen_index: Optional[int] = None
    reasons: tuple[Optional[str], ...] = ()

    @property
    def accepted(self) -> bool:
        return self.result.accepted


def select_from_multiple(
    tokens: list[str],
    op_keys: KeyLookup,
    policy: TrustPolicy,
    expected_context: str,
    clock: Clock,
    **verify_kwargs,
) -> MultiIctSelection:
    """Pick the most trusted among several certifications of one client key.

    All tokens must confirm the same key (one possession proof covers them
    all); mixed keys reject outright. Among individually acceptable tokens
    the highest policy rank wins, ties broken by earliest expiry (the
    freshest certification), then by token bytes so the choice is total and
    independent of input order.
    """
    if not tokens:
        return MultiIctSelection(_rejected("all-rejected"), reasons=())

    thumbprints = []
    for token in tokens:
        try:
            _, payload = decode_unverified(token)
            thumbprints.append(jwk_thumbprint(payload["cnf"]["jwk"]))
        except (MalformedToken, IctAuthError, KeyError, TypeError):
            thumbprints.append(None)
    known = [t for t in thumbprints if t is not None]
    if known and len(set(known)) > 1:
        return MultiIctSelection(
            _rejected("key-mismatch"), reasons=tuple("key-mismatch" for _ in tokens)
        )

    results = [
        verify_ict(token, op_keys, policy, expected_context, clock, **verify_kwargs)
        for token in tokens
    ]
    reasons = tuple(r.rejection_reason for r in results)

    candidates = [
        (i, results[i]) for i in range(len(tokens)) if results[i].accepted
    ]
    if not candidates:
        return MultiIctSelection(_rejected("all-rejected"), reasons=reasons)

    def preference(item):
        index, result = item
        rank = policy.classify(result.issuer).rank
        return (-rank, result.expires_at, tokens[index])

    chosen_index, chosen = min(candidates, key=preference)
    return MultiIctSelection(result=chosen, chosen_index=chosen_index, reasons=reasons)


class StaticKeyLookup:
    """Fixed (issuer -> kid -> JWK) table; handy for tests and offline use."""

    def __init__(self, table: dict[str, dict[str, dict]]) -> None:
        self._table = table

    def __call__(self, issuer: str, kid: Optional[str]) -> Optional[dict]:
        keys = self._table.get(issuer, {})
        if kid is not None:
            return keys.get(kid)
        return next(iter(keys.values()), None)


class JwksKeyLookup:
    """Fetches issuer keys from JWKS endpoints with a 300 s in-memory cache.

    By default an issuer's JWKS lives at ``{issuer}/.well-known/jwks.json``;
    explicit URLs can be supplied per issuer. Refreshes are serialized so a
    burst of verifications causes at most one fetch.
    """

    def __init__(
        self,
        jwks_urls: Optional[dict[str, str]] = None,
        ttl_seconds: float = JWKS_CACHE_TTL_SECONDS,
        clock: Optional[Clock] = None,
        session: Optional[requests.Session] = None,
        timeout: float = HTTP_TIMEOUT_SECONDS,
    ) -> None:
        self._urls = dict(jwks_urls or {})
        self._ttl = ttl_seconds
        self._clock = clock or SYSTEM_CLOCK
        self._session = session or requests.Session()
        self._timeout = timeout
        self._cache: dict[str, tuple[float, dict[str, dict]]] = {}
        self._lock = threading.Lock()

    def _jwks_url(self, issuer: str) -> str:
        return self._urls.get(issuer, issuer.rstrip("/") + "/.well-known/jwks.json")

    def _fetch(self, issuer: str) -> dict[str, dict]:
        response = self._session.get(self._jwks_url(issuer), timeout=self._timeout)
        response.raise_for_status()
        keys = {}
        for jwk in response.json().get("keys", []):
            if isinstance(jwk, dict) and "kid" in jwk:
                keys[jwk["kid"]] = jwk
        return keys

    def __call__(self, issuer: str, kid: Optional[str]) -> Optional[dict]:
        now = self._clock.now()
        with self._lock:
            cached = self._cache.get(issuer)
            if cached is None or now - cached[0] > self._ttl:
                keys = self._fetch(issuer)
                self._cache[issuer] = (now, keys)
            else:
                keys = cached[1]
        if kid is not None:
            return keys.get(kid)
        return next(iter(keys.values()), None)
