"""Minimal mock OpenID Provider for self-contained runs.

Exposes a password-grant token endpoint (the browser consent flow is out of
scope here), a userinfo endpoint, and a JWKS endpoint, so the whole protocol
and the benchmark can run on one machine with no external infrastructure.

Access tokens live exactly 300 seconds. Refresh tokens rotate on every use;
concurrent refreshes of the same token yield exactly one winner. The userinfo
response carries the token's granted scopes in an ``X-OAuth-Scopes`` header so
a downstream service that validates tokens through userinfo can enforce
scope requirements without token introspection.
"""

from __future__ import annotations

import hmac
import json
import secrets
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .clock import Clock, SYSTEM_CLOCK
from .errors import BadCredentials, InvalidRefreshToken, ScopeNotGranted
from .httpbase import AppServer, JsonHandler, ServerHandle
from .keys import ALG_RS256, KeyPairDescriptor, generate_signing_keypair
from .tokens import sign_compact

ACCESS_TOKEN_LIFETIME = 300
SCOPES_HEADER = "X-OAuth-Scopes"

# Identity claims released per scope, following the usual OIDC groupings.
SCOPE_CLAIMS = {
    "profile": ("name", "preferred_username", "picture"),
    "email": ("email", "email_verified"),
    "address": ("address",),
    "phone": ("phone_number", "phone_number_verified"),
}

DEFAULT_USERS = [
    {
        "username": "alice",
        "password": "wonderland",
        "sub": "alice-sub-1",
        "claims": {
            "name": "Alice Example",
            "preferred_username": "alice",
            "email": "alice@example.org",
            "email_verified": True,
            "picture": "https://img.example.org/alice.png",
        },
        "granted_scopes": [
            "profile", "email", "e2e_auth_email", "e2e_auth_vc", "e2e_auth_im",
        ],
    },
    {
        "username": "bob",
        "password": "builder",
        "sub": "bob-sub-1",
        "claims": {
            "name": "Bob Example",
            "preferred_username": "bob",
            "email": "bob@example.org",
            "email_verified": True,
        },
        "granted_scopes": [
            "profile", "email", "e2e_auth_email", "e2e_auth_vc", "e2e_auth_im",
        ],
    },
    {
        "username": "carol",
        "password": "garden",
        "sub": "carol-sub-1",
        "claims": {"name": "Carol Example", "email": "carol@example.org"},
        "granted_scopes": ["profile"],
    },
]


@dataclass(frozen=True)
class StubUser:
    username: str
    password: str
    sub: str
    claims: dict
    granted_scopes: frozenset[str]


@dataclass
class IssuedTokenRecord:
    access_token: str
    refresh_token: str
    sub: str
    scopes: frozenset[str]
    expires_at: float


def _parse_users(raw: Iterable[dict]) -> dict[str, StubUser]:
    users = {}
    subs = set()
    for entry in raw:
        user = StubUser(
            username=entry["username"],
            password=entry["password"],
            sub=entry["sub"],
            claims=dict(entry.get("claims", {})),
            granted_scopes=frozenset(entry.get("granted_scopes", [])),
        )
        if user.sub in subs:
            raise ValueError(f"duplicate sub in user table: {user.sub}")
        subs.add(user.sub)
        users[user.username] = user
    return users


def load_users(path: str) -> dict[str, StubUser]:
    """Load seed users from a JSON fixture file (list of user objects)."""
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_users(json.load(fh))


class OpStub:
    """In-memory provider state; the HTTP handler below is a thin wrapper."""

    def __init__(
        self,
        op_key: Optional[KeyPairDescriptor] = None,
        key_id: str = "op-signing-key",
        users: Optional[dict[str, StubUser]] = None,
        clock: Clock = SYSTEM_CLOCK,
        issuer_url: str = "",
        access_token_lifetime: int = ACCESS_TOKEN_LIFETIME,
    ) -> None:
        self.op_key = op_key or generate_signing_keypair(ALG_RS256)
        self.key_id = key_id
        self.users = users if users is not None else _parse_users(DEFAULT_USERS)
        self.clock = clock
        self.issuer_url = issuer_url
        self.access_token_lifetime = access_token_lifetime
        self._by_access: dict[str, IssuedTokenRecord] = {}
        self._by_refresh: dict[str, IssuedTokenRecord] = {}
        self._lock = threading.Lock()

    # -- token issuance -------------------------------------------------------

    def _mint(self, sub: str, scopes: frozenset[str]) -> IssuedTokenRecord:
        record = IssuedTokenRecord(
            access_token=secrets.token_urlsafe(32),
            refresh_token=secrets.token_urlsafe(32),
            sub=sub,
            scopes=scopes,
            expires_at=self.clock.now() + self.access_token_lifetime,
        )
        self._by_access[record.access_token] = record
        self._by_refresh[record.refresh_token] = record
        return record

    def _id_token(self, sub: str) -> str:
        now = int(self.clock.now())
        payload = {
            "iss": self.issuer_url,
            "sub": sub,
            "aud": "ictauth-client",
            "iat": now,
            "exp": now + self.access_token_lifetime,
            "jti": secrets.token_urlsafe(8),
        }
        header = {"typ": "JWT", "alg": self.op_key.algorithm, "kid": self.key_id}
        return sign_compact(header, payload, self.op_key)

    def issue_tokens(self, username: str, password: str, scopes) -> tuple[str, str, str]:
        """Password grant: returns (access_token, refresh_token, id_token)."""
        user = self.users.get(username)
        if user is None or not hmac.compare_digest(user.password, password):
            raise BadCredentials("unknown user or wrong password")
        requested = frozenset(scopes)
        if not requested <= user.granted_scopes:
            missing = sorted(requested - user.granted_scopes)
            raise ScopeNotGranted("not granted: " + " ".join(missing))
        with self._lock:
            record = self._mint(user.sub, requested)
        return record.access_token, record.refresh_token, self._id_token(user.sub)

    def refresh(self, refresh_token: str) -> tuple[str, str, str]:
        """Rotate: the old refresh token is spent even under concurrent use."""
        with self._lock:
            record = self._by_refresh.pop(refresh_token, None)
            if record is None:
                raise InvalidRefreshToken("unknown or already-rotated refresh token")
            fresh = self._mint(record.sub, record.scopes)
        return fresh.access_token, fresh.refresh_token, self._id_token(record.sub)

    # -- resource access ------------------------------------------------------

    def lookup_access(self, access_token: str) -> Optional[IssuedTokenRecord]:
        with self._lock:
            record = self._by_access.get(access_token)
        if record is None or self.clock.now() >= record.expires_at:
            return None
        return record

    def handle_userinfo(self, access_token: str) -> dict:
        """Claims for a live access token, filtered by its granted scopes."""
        record = self.lookup_access(access_token)
        if record is None:
            raise BadCredentials("invalid or expired access token")
        user = next(u for u in self.users.values() if u.sub == record.sub)
        claims: dict = {"sub": user.sub}
        for scope in record.scopes:
            for name in SCOPE_CLAIMS.get(scope, ()):
                if name in user.claims:
                    claims[name] = user.claims[name]
        return claims

    def serve_jwks(self) -> dict:
        jwk = dict(self.op_key.public_part)
        jwk["kid"] = self.key_id
        return {"keys": [jwk]}

    # -- optional single-file snapshot -----------------------------------------

    def snapshot(self, path: str) -> None:
        with self._lock:
            state = [
                {
                    "access_token": r.access_token,
                    "refresh_token": r.refresh_token,
                    "sub": r.sub,
                    "scopes": sorted(r.scopes),
                    "expires_at": r.expires_at,
                }
                for r in self._by_access.values()
            ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(state, fh)

    def restore(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            state = json.load(fh)
        with self._lock:
            for entry in state:
                record = IssuedTokenRecord(
                    access_token=entry["access_token"],
                    refresh_token=entry["refresh_token"],
                    sub=entry["sub"],
                    scopes=frozenset(entry["scopes"]),
                    expires_at=entry["expires_at"],
                )
                self._by_access[record.access_token] = record
                self._by_refresh[record.refresh_token] = record


class OpStubHandler(JsonHandler):
    def do_POST(self) -> None:
        if self.path == "/token":
            self._handle_token()
        else:
            self.send_json({"error": "not_found"}, 404)

    def do_GET(self) -> None:
        if self.path == "/userinfo":
            self._handle_userinfo()
        elif self.path == "/.well-known/jwks.json":
            self.send_json(self.app.serve_jwks())
        else:
            self.send_json({"error": "not_found"}, 404)

    def _handle_token(self) -> None:
        form = self.read_form_body()
        grant_type = form.get("grant_type")
        try:
            if grant_type == "password":
                scopes = form.get("scope", "").split()
                at, rt, idt = self.app.issue_tokens(
                    form.get("username", ""), form.get("password", ""), scopes
                )
            elif grant_type == "refresh_token":
                at, rt, idt = self.app.refresh(form.get("refresh_token", ""))
            else:
                self.send_json({"error": "unsupported_grant_type"}, 400)
                return
        except BadCredentials as exc:
            self.send_json({"error": "invalid_grant", "error_description": exc.detail}, 400)
            return
        except InvalidRefreshToken as exc:
            self.send_json({"error": "invalid_grant", "error_description": exc.detail}, 400)
            return
        except ScopeNotGranted as exc:
            self.send_json({"error": "invalid_scope", "error_description": exc.detail}, 400)
            return
        record = self.app.lookup_access(at)
        self.send_json(
            {
                "access_token": at,
                "refresh_token": rt,
                "id_token": idt,
                "token_type": "Bearer",
                "expires_in": self.app.access_token_lifetime,
                "scope": " ".join(sorted(record.scopes)) if record else "",
            }
        )

    def _handle_userinfo(self) -> None:
        token = self.bearer_token()
        record = self.app.lookup_access(token) if token else None
        if record is None:
            self.send_json(
                {"error": "invalid_token"},
                401,
                headers={"WWW-Authenticate": 'Bearer error="invalid_token"'},
            )
            return
        claims = self.app.handle_userinfo(token)
        self.send_json(claims, headers={SCOPES_HEADER: " ".join(sorted(record.scopes))})


def make_stub_server(stub: OpStub, host: str = "127.0.0.1", port: int = 0) -> ServerHandle:
    """Bind the stub to an HTTP server; fills in issuer_url from the bound port."""
    server = AppServer((host, port), OpStubHandler, stub)
    handle = ServerHandle(server)
    if not stub.issuer_url:
        stub.issuer_url = handle.base_url
    return handle
