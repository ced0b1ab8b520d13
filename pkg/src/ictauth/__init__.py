"""End-to-end user authentication with OpenID Connect identity certification tokens.

A provider-signed, short-lived token binds a user's verified identity claims
to a public key held by their client. Whoever trusts the issuing provider can
authenticate the user by checking the token and a proof of possession of the
matching private key; no long-term certificates, no revocation lists for the
everyday case.
"""

from .clock import ManualClock, SYSTEM_CLOCK, SystemClock
from .keys import (
    ALG_ES256,
    ALG_RS256,
    KIND_EPHEMERAL,
    KIND_LONG_TERM,
    KeyPairDescriptor,
    generate_signing_keypair,
    jwk_thumbprint,
    load_private_pem,
    save_private_pem,
)
from .pop import NonceCache, PopVerdict, ProofOfPossession, create_pop, purge_expired, verify_pop
from .tokens import (
    CompactToken,
    ICT_TYP,
    IctClaims,
    MAX_VALIDITY_SECONDS,
    build_ict_claims,
    decode_unverified,
    sign_token,
    verify_token_signature,
)
from .verifier import (
    AuthenticationResult,
    JwksKeyLookup,
    StaticKeyLookup,
    TrustEntry,
    TrustPolicy,
    check_revocation,
    classify_op,
    select_from_multiple,
    verify_ict,
)

__version__ = "0.1.0"

__all__ = [
    "ALG_ES256",
    "ALG_RS256",
    "AuthenticationResult",
    "CompactToken",
    "ICT_TYP",
    "IctClaims",
    "JwksKeyLookup",
    "KIND_EPHEMERAL",
    "KIND_LONG_TERM",
    "KeyPairDescriptor",
    "ManualClock",
    "MAX_VALIDITY_SECONDS",
    "NonceCache",
    "PopVerdict",
    "ProofOfPossession",
    "SYSTEM_CLOCK",
    "StaticKeyLookup",
    "SystemClock",
    "TrustEntry",
    "TrustPolicy",
    "build_ict_claims",
    "check_revocation",
    "classify_op",
    "create_pop",
    "decode_unverified",
    "generate_signing_keypair",
    "jwk_thumbprint",
    "load_private_pem",
    "purge_expired",
    "save_private_pem",
    "select_from_multiple",
    "sign_token",
    "verify_ict",
    "verify_pop",
    "verify_token_signature",
]
