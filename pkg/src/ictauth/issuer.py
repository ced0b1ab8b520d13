"""Token issuance service: the ``/ict`` endpoint.

Deployable beside any OIDC server: it authenticates requests purely by
relaying the caller's access token to the provider's userinfo endpoint (no
introspection), verifies the proof of possession for the submitted public
key, and signs a certification token with the provider's private key. Holding
that key directly makes this a test-grade deployment, which is all it is
meant to be.

Request processing order: requested contexts are checked against the
configured allow-list, then userinfo is fetched (which transitively validates
the access token and yields the granted scopes), then the e2e scopes are
enforced, then the proof of possession is verified, and only then is a token
assembled and signed. A failed proof therefore never causes more than the one
userinfo fetch and never yields a token.
"""

from __future__ import annotations

import http.client
import json
import os
import threading
from dataclasses import dataclass, field
from typing import NamedTuple, Optional
from urllib.parse import urlsplit

import requests

from .clock import Clock, SYSTEM_CLOCK
from .errors import (
    InsufficientScopeError,
    InvalidRequestError,
    InvalidTokenError,
    MalformedUpstreamResponse,
    PopRejectedError,
    PrivateMaterialInKey,
    ProtocolError,
    UnknownContextError,
    UpstreamUnavailableError,
)
from .httpbase import AppServer, JsonHandler, ServerHandle
from .keys import (
    KIND_EPHEMERAL,
    KIND_LONG_TERM,
    KeyPairDescriptor,
    jwk_to_public_key,
    load_private_pem,
    require_public_jwk,
)
from .opstub import SCOPES_HEADER
from .pop import NonceCache, ProofOfPossession, verify_pop
from .tokens import CompactToken, MAX_VALIDITY_SECONDS, build_ict_claims, sign_token

CONFIG_ENV_VAR = "ICTAUTH_ISSUER_CONFIG"
E2E_SCOPE_PREFIX = "e2e_auth_"

# At least one of these must be granted so the token can carry verified
# identity claims at all.
IDENTITY_SCOPES = frozenset({"profile", "email", "address", "phone"})

DEFAULT_ALLOWED_CONTEXTS = {"email": 3600, "vc": 300, "im": 300}
DEFAULT_VALIDITY_SECONDS = 300
HTTP_TIMEOUT_SECONDS = 5.0


@dataclass(frozen=True)
class IctRequest:
    access_token: str
    public_key: dict
    pop: ProofOfPossession
    contexts: tuple[str, ...]
    requested_validity: Optional[int] = None
    key_kind: str = KIND_EPHEMERAL
    revocation_server: Optional[str] = None


@dataclass
class IssuerConfig:
    issuer_url: str
    op_signing_key: KeyPairDescriptor
    key_id: str
    userinfo_url: str
    allowed_contexts: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_ALLOWED_CONTEXTS)
    )
    default_validity_seconds: int = DEFAULT_VALIDITY_SECONDS
    max_skew_seconds: float = 15.0
    nonce_ttl_seconds: float = 30.0

    def __post_init__(self) -> None:
        for ctx, cap in self.allowed_contexts.items():
            if cap > MAX_VALIDITY_SECONDS:
                raise ValueError(f"context {ctx} cap {cap}s exceeds {MAX_VALIDITY_SECONDS}s")
        if self.allowed_contexts:
            floor = min(self.allowed_contexts.values())
            if self.default_validity_seconds > floor:
                raise ValueError(
                    f"default validity {self.default_validity_seconds}s exceeds the "
                    f"smallest context cap ({floor}s)"
                )


class UserinfoResult(NamedTuple):
    claims: dict
    scopes: frozenset[str]


class _Headers(dict):
    """Case-insensitive header lookup over http.client's header pairs."""

    def __init__(self, pairs) -> None:
        super().__init__((k.lower(), v) for k, v in pairs)

    def get(self, key, default=None):
        return super().get(key.lower(), default)


class KeepAliveHttpClient:
    """Minimal GET client over one pinned http.client connection per thread.

    The issuance path relays every single request to userinfo; the
    general-purpose client's per-call overhead (about a millisecond of pure
    Python) would dominate the measured service time, so this hot path talks
    plain HTTP/1.1 keep-alive directly. Failures surface as
    requests.ConnectionError so callers handle one exception family.
    """

    class _Response:
        def __init__(self, status: int, headers: _Headers, body: bytes) -> None:
            self.status_code = status
            self.headers = headers
            self._body = body

        def json(self):
            return json.loads(self._body)

    def __init__(self, timeout: float = HTTP_TIMEOUT_SECONDS) -> None:
        self._timeout = timeout
        self._local = threading.local()

    def _connection(self, scheme: str, netloc: str) -> http.client.HTTPConnection:
        key = (scheme, netloc)
        if getattr(self._local, "key", None) != key or self._local.conn is None:
            cls = http.client.HTTPSConnection if scheme == "https" else http.client.HTTPConnection
            self._local.conn = cls(netloc, timeout=self._timeout)
            self._local.key = key
        return self._local.conn

    def get(self, url: str, headers: Optional[dict] = None, timeout: Optional[float] = None):
        parsed = urlsplit(url)
        path = parsed.path or "/"
        if parsed.query:
            path += "?" + parsed.query
        last_error: Exception | None = None
        for attempt in (0, 1):  # one reconnect on a dropped connection
            conn = self._connection(parsed.scheme, parsed.netloc)
            try:
                conn.request("GET", path, headers=headers or {})
                response = conn.getresponse()
                body = response.read()
                return self._Response(response.status, _Headers(response.getheaders()), body)
            except (http.client.HTTPException, OSError) as exc:
                conn.close()
                self._local.conn = None
                last_error = exc
        raise requests.ConnectionError(f"GET {url}: {last_error}")


def load_issuer_config(path: Optional[str] = None, **overrides) -> tuple[IssuerConfig, dict]:
    """Read the JSON config file (path argument or $ICTAUTH_ISSUER_CONFIG).

    Returns the config plus leftover server settings (host, port). Keyword
    overrides win over file values.
    """
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        raise ValueError(f"no config path given and {CONFIG_ENV_VAR} is not set")
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    key = load_private_pem(raw["signing_key_pem"])
    config = IssuerConfig(
        issuer_url=raw["issuer_url"],
        op_signing_key=key,
        key_id=raw.get("key_id", "op-signing-key"),
        userinfo_url=raw["userinfo_url"],
        allowed_contexts=dict(raw.get("allowed_contexts", DEFAULT_ALLOWED_CONTEXTS)),
        default_validity_seconds=raw.get("default_validity_seconds", DEFAULT_VALIDITY_SECONDS),
        max_skew_seconds=raw.get("max_skew_seconds", 15.0),
        nonce_ttl_seconds=raw.get("nonce_ttl_seconds", 30.0),
    )
    server = {"host": raw.get("host", "127.0.0.1"), "port": raw.get("port", 0)}
    return config, server


def fetch_userinfo(
    access_token: str,
    userinfo_url: str,
    session=None,
    timeout: float = HTTP_TIMEOUT_SECONDS,
) -> UserinfoResult:
    """Relay the access token to userinfo; validates it transitively.

    The provider reports the token's granted scopes in the X-OAuth-Scopes
    response header; they come back alongside the claim map. ``session`` is
    anything with a requests-style ``get`` (a requests.Session or the
    KeepAliveHttpClient the service itself uses).
    """
    client = session or requests
    try:
        response = client.get(
            userinfo_url,
            headers={"Authorization": f"Bearer {access_token}"},
            timeout=timeout,
        )
    except requests.RequestException as exc:
        raise UpstreamUnavailableError(f"userinfo unreachable: {exc}") from exc
    if response.status_code == 401:
        raise InvalidTokenError("userinfo rejected the access token")
    if response.status_code != 200:
        raise UpstreamUnavailableError(f"userinfo returned {response.status_code}")
    try:
        claims = response.json()
    except ValueError as exc:
        raise MalformedUpstreamResponse("userinfo body is not JSON") from exc
    if not isinstance(claims, dict) or "sub" not in claims:
        raise MalformedUpstreamResponse("userinfo response lacks a sub claim")
    scopes = frozenset(response.headers.get(SCOPES_HEADER, "").split())
    return UserinfoResult(claims=claims, scopes=scopes)


def check_e2e_scope(token_scopes, requested_contexts) -> frozenset[str]:
    """Grant all requested contexts or fail; no partial grants.

    A context c needs the scope ``e2e_auth_c``, and at least one identity
    scope must be present so there are claims worth certifying.
    """
    scopes = frozenset(token_scopes)
    requested = frozenset(requested_contexts)
    missing = [E2E_SCOPE_PREFIX + c for c in sorted(requested) if E2E_SCOPE_PREFIX + c not in scopes]
    if not scopes & IDENTITY_SCOPES:
        missing.append("profile")
    if missing:
        raise InsufficientScopeError(missing)
    return requested


def handle_ict_request(
    request: IctRequest,
    config: IssuerConfig,
    cache: NonceCache,
    clock: Clock,
    session=None,
) -> CompactToken:
    """Run one issuance; raises a ProtocolError subclass on any failure."""
    if not request.contexts:
        raise InvalidRequestError("contexts must be non-empty")
    unknown = [c for c in request.contexts if c not in config.allowed_contexts]
    if unknown:
        raise UnknownContextError("unknown contexts: " + " ".join(sorted(unknown)))

    userinfo = fetch_userinfo(request.access_token, config.userinfo_url, session=session)
    granted = check_e2e_scope(userinfo.scopes, request.contexts)

    verdict = verify_pop(
        request.pop, request.public_key, cache, clock, config.max_skew_seconds
    )
    if not verdict.accepted:
        raise PopRejectedError(verdict.error or "malformed-pop")

    requested_validity = request.requested_validity
    if requested_validity is None:
        requested_validity = config.default_validity_seconds
    if requested_validity <= 0:
        raise InvalidRequestError("validity must be positive")
    cap = min(config.allowed_contexts[c] for c in granted)
    validity = min(requested_validity, cap, MAX_VALIDITY_SECONDS)

    claims_in = {k: v for k, v in userinfo.claims.items() if k not in ("sub", "scope")}
    claims = build_ict_claims(
        user_info=claims_in,
        subject=str(userinfo.claims["sub"]),
        issuer=config.issuer_url,
        confirmation_key=request.public_key,
        contexts=tuple(sorted(granted)),
        validity_seconds=validity,
        clock=clock,
        key_kind=request.key_kind,
        revocation_server=request.revocation_server,
    )
    return sign_token(claims, config.op_signing_key, config.key_id)


def parse_ict_request(access_token: Optional[str], body) -> IctRequest:
    """Validate the wire body; raises InvalidRequestError on shape problems."""
    if not access_token:
        raise InvalidTokenError("missing bearer access token")
    if not isinstance(body, dict):
        raise InvalidRequestError("body must be a JSON object")
    public_key = body.get("public_key")
    try:
        require_public_jwk(public_key)
        jwk_to_public_key(public_key)
    except PrivateMaterialInKey as exc:
        raise InvalidRequestError(f"public_key: {exc.detail}") from exc
    except Exception as exc:  # unparseable JWK
        raise InvalidRequestError(f"public_key: {exc}") from exc
    try:
        pop = ProofOfPossession.from_wire(body.get("pop"))
    except ValueError as exc:
        raise InvalidRequestError(f"pop: {exc}") from exc
    contexts = body.get("contexts")
    if not isinstance(contexts, list) or not contexts or not all(
        isinstance(c, str) for c in contexts
    ):
        raise InvalidRequestError("contexts must be a non-empty list of strings")
    validity = body.get("validity")
    if validity is not None and (isinstance(validity, bool) or not isinstance(validity, int)):
        raise InvalidRequestError("validity must be an integer")
    wire_kind = body.get("key_kind", "ephemeral")
    if wire_kind not in ("ephemeral", "long_term"):
        raise InvalidRequestError(f"unknown key_kind: {wire_kind}")
    key_kind = KIND_LONG_TERM if wire_kind == "long_term" else KIND_EPHEMERAL
    rev_srv = body.get("rev_srv")
    if key_kind == KIND_LONG_TERM and not rev_srv:
        raise InvalidRequestError("long_term keys require rev_srv")
    if key_kind == KIND_EPHEMERAL and rev_srv:
        raise InvalidRequestError("rev_srv is only valid for long_term keys")
    return IctRequest(
        access_token=access_token,
        public_key=public_key,
        pop=pop,
        contexts=tuple(contexts),
        requested_validity=validity,
        key_kind=key_kind,
        revocation_server=rev_srv,
    )


class IssuerApp:
    """Shared state behind the HTTP handler."""

    def __init__(self, config: IssuerConfig, clock: Clock = SYSTEM_CLOCK) -> None:
        self.config = config
        self.clock = clock
        self.cache = NonceCache(ttl_seconds=config.nonce_ttl_seconds)
        self.session = KeepAliveHttpClient()


class IssuerHandler(JsonHandler):
    def do_GET(self) -> None:
        if self.path == "/health":
            self.send_json({"status": "ok"})
        else:
            self.send_json({"error": "not_found"}, 404)

    def do_POST(self) -> None:
        if self.path != "/ict":
            self.send_json({"error": "not_found"}, 404)
            return
        app = self.app
        try:
            request = parse_ict_request(self.bearer_token(), self.read_json_body())
            token = handle_ict_request(
                request, app.config, app.cache, app.clock, session=app.session
            )
        except ProtocolError as exc:
            self.send_json({"error": exc.code, "detail": exc.detail}, exc.http_status)
            return
        self.send_json({"ict": token.serialized})


def make_issuer_server(
    config: IssuerConfig,
    host: str = "127.0.0.1",
    port: int = 0,
    clock: Clock = SYSTEM_CLOCK,
) -> ServerHandle:
    return ServerHandle(AppServer((host, port), IssuerHandler, IssuerApp(config, clock)))


def request_ict(
    issuer_base_url: str,
    access_token: str,
    client_key: KeyPairDescriptor,
    contexts,
    validity: Optional[int] = None,
    pop: Optional[ProofOfPossession] = None,
    clock: Clock = SYSTEM_CLOCK,
    session: Optional[requests.Session] = None,
    timeout: float = HTTP_TIMEOUT_SECONDS,
) -> str:
    """Client side of the endpoint: one issuance round trip.

    Returns the serialized token; raises a ProtocolError carrying the wire
    error code otherwise. A caller-supplied ``pop`` overrides the fresh one
    (used to demonstrate replay rejection).
    """
    from .pop import create_pop  # local import to keep module load light

    if pop is None:
        pop = create_pop(client_key, clock)
    body: dict = {
        "public_key": client_key.public_part,
        "pop": pop.to_wire(),
        "contexts": list(contexts),
    }
    if validity is not None:
        body["validity"] = validity
    if client_key.kind == KIND_LONG_TERM:
        body["key_kind"] = "long_term"
        body["rev_srv"] = client_key.revocation_server
    http = session or requests
    try:
        response = http.post(
            issuer_base_url.rstrip("/") + "/ict",
            json=body,
            headers={"Authorization": f"Bearer {access_token}"},
            timeout=timeout,
        )
    except requests.RequestException as exc:
        raise UpstreamUnavailableError(f"issuer unreachable: {exc}") from exc
    try:
        payload = response.json()
    except ValueError as exc:
        raise MalformedUpstreamResponse("issuer response is not JSON") from exc
    if response.status_code == 200 and "ict" in payload:
        return payload["ict"]
    error = ProtocolError(payload.get("detail", ""))
    error.code = payload.get("error", "protocol-error")
    error.http_status = response.status_code
    raise error
