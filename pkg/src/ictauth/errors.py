"""Exception types shared across the package.

Every error carries a stable machine-readable ``code`` so CLI and HTTP layers
can map failures without string-matching messages.
"""

from __future__ import annotations


class IctAuthError(Exception):
    """Base class; ``code`` is a stable kebab-case identifier."""

    code = "error"

    def __init__(self, detail: str = "") -> None:
        super().__init__(detail or self.code)
        self.detail = detail or self.code


# -- key material ------------------------------------------------------------

class UnsupportedAlgorithm(IctAuthError):
    code = "unsupported-algorithm"


class PrivateMaterialInKey(IctAuthError):
    code = "private-material-in-key"


class MissingPrivateKey(IctAuthError):
    code = "missing-private-key"


# -- token construction and verification -------------------------------------

class ValidityTooLong(IctAuthError):
    code = "validity-too-long"


class EmptyContexts(IctAuthError):
    code = "empty-contexts"


class MalformedToken(IctAuthError):
    code = "malformed-token"


class SignatureInvalid(IctAuthError):
    code = "signature-invalid"


class TokenExpired(IctAuthError):
    code = "token-expired"


class TokenNotYetValid(IctAuthError):
    code = "token-not-yet-valid"


class WrongTokenType(IctAuthError):
    code = "wrong-token-type"


# -- issuer service protocol errors (carry an HTTP status) -------------------

class ProtocolError(IctAuthError):
    """Request-level failure mapped onto the issuance endpoint's wire format."""

    code = "protocol-error"
    http_status = 400


class InvalidRequestError(ProtocolError):
    code = "invalid-request"
    http_status = 400


class InvalidTokenError(ProtocolError):
    code = "invalid-token"
    http_status = 401


class InsufficientScopeError(ProtocolError):
    code = "insufficient-scope"
    http_status = 403

    def __init__(self, missing: list[str], detail: str = "") -> None:
        super().__init__(detail or "missing scopes: " + " ".join(sorted(missing)))
        self.missing = sorted(missing)


class UnknownContextError(ProtocolError):
    code = "unknown-context"
    http_status = 400


class PopRejectedError(ProtocolError):
    """PoP verification failed; ``code`` is the verdict's distinguishing code."""

    http_status = 400

    def __init__(self, verdict_code: str, detail: str = "") -> None:
        super().__init__(detail or "proof of possession rejected")
        self.code = verdict_code


class UpstreamUnavailableError(ProtocolError):
    code = "upstream-unavailable"
    http_status = 502


class MalformedUpstreamResponse(ProtocolError):
    code = "malformed-upstream-response"
    http_status = 502


# -- mock provider -----------------------------------------------------------

class BadCredentials(IctAuthError):
    code = "bad-credentials"


class ScopeNotGranted(IctAuthError):
    code = "scope-not-granted"


class InvalidRefreshToken(IctAuthError):
    code = "invalid-refresh-token"


# -- verification side -------------------------------------------------------

class RevocationUnreachable(IctAuthError):
    code = "revocation-unreachable"


class PolicyError(IctAuthError):
    code = "policy-error"


# -- application flows -------------------------------------------------------

class KeyIctMismatch(IctAuthError):
    code = "key-ict-mismatch"


class WrongContext(IctAuthError):
    code = "wrong-context"


# -- benchmark ---------------------------------------------------------------

class InsufficientSamples(IctAuthError):
    code = "insufficient-samples"


class BenchSetupError(IctAuthError):
    code = "auth-setup-failed"


class EndpointUnreachable(IctAuthError):
    code = "endpoint-unreachable"
