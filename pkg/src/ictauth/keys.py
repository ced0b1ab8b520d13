"""Asymmetric signing keys: generation, JWK encoding, PEM I/O, signatures.

Only RS256 (RSASSA-PKCS1-v1_5, 2048-bit minimum) and ES256 (ECDSA over P-256)
are supported. Symmetric algorithms are rejected outright: a shared secret
cannot demonstrate possession of a key to a third party.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

from .encoding import b64url_decode, b64url_encode
from .errors import MissingPrivateKey, PrivateMaterialInKey, UnsupportedAlgorithm

ALG_RS256 = "RS256"
ALG_ES256 = "ES256"
SUPPORTED_ALGORITHMS = (ALG_RS256, ALG_ES256)

KIND_EPHEMERAL = "ephemeral"
KIND_LONG_TERM = "long-term"

RSA_MIN_MODULUS_BITS = 2048

# JWK members that carry private key material, per RFC 7517/7518.
_PRIVATE_JWK_MEMBERS = frozenset({"d", "p", "q", "dp", "dq", "qi", "oth", "k"})

_EC_COORD_BYTES = 32  # P-256


def _int_to_b64url(value: int, length: int | None = None) -> str:
    if length is None:
        length = max(1, (value.bit_length() + 7) // 8)
    return b64url_encode(value.to_bytes(length, "big"))


def _b64url_to_int(text: str) -> int:
    return int.from_bytes(b64url_decode(text), "big")


@dataclass(frozen=True)
class KeyPairDescriptor:
    """A signing key pair. ``private_part`` never leaves the process."""

    algorithm: str
    public_part: dict          # public JWK
    private_part: Any          # cryptography private key object, or None
    kind: str = KIND_EPHEMERAL
    revocation_server: Optional[str] = None

    def sign(self, data: bytes) -> bytes:
        if self.private_part is None:
            raise MissingPrivateKey("descriptor holds no private key")
        return sign_bytes(self.private_part, self.algorithm, data)

    @property
    def thumbprint(self) -> str:
        return jwk_thumbprint(self.public_part)


def generate_signing_keypair(
    algorithm: str,
    kind: str = KIND_EPHEMERAL,
    revocation_server: Optional[str] = None,
) -> KeyPairDescriptor:
    """Generate a fresh key pair for the given signature algorithm.

    ``revocation_server`` must be given exactly when ``kind`` is long-term:
    long-term keys outlive the tokens that certify them and stay valid until
    revoked, so verifiers need somewhere to check.
    """
    alg = str(algorithm).upper()
    if alg not in SUPPORTED_ALGORITHMS:
        raise UnsupportedAlgorithm(f"unsupported algorithm: {algorithm}")
    _check_kind(kind, revocation_server)
    if alg == ALG_RS256:
        private = rsa.generate_private_key(public_exponent=65537, key_size=RSA_MIN_MODULUS_BITS)
    else:
        private = ec.generate_private_key(ec.SECP256R1())
    jwk = public_jwk_from_key(private.public_key())
    return KeyPairDescriptor(
        algorithm=alg,
        public_part=jwk,
        private_part=private,
        kind=kind,
        revocation_server=revocation_server,
    )


def _check_kind(kind: str, revocation_server: Optional[str]) -> None:
    if kind not in (KIND_EPHEMERAL, KIND_LONG_TERM):
        raise ValueError(f"unknown key kind: {kind}")
    if kind == KIND_LONG_TERM and not revocation_server:
        raise ValueError("long-term keys require a revocation server URL")
    if kind == KIND_EPHEMERAL and revocation_server:
        raise ValueError("ephemeral keys must not name a revocation server")


# -- JWK conversion -----------------------------------------------------------

def public_jwk_from_key(public_key: Any) -> dict:
    """Encode a cryptography public key as a public JWK."""
    if isinstance(public_key, rsa.RSAPublicKey):
        numbers = public_key.public_numbers()
        return {
            "kty": "RSA",
            "n": _int_to_b64url(numbers.n),
            "e": _int_to_b64url(numbers.e),
            "alg": ALG_RS256,
            "use": "sig",
        }
    if isinstance(public_key, ec.EllipticCurvePublicKey):
        if not isinstance(public_key.curve, ec.SECP256R1):
            raise UnsupportedAlgorithm(f"unsupported curve: {public_key.curve.name}")
        numbers = public_key.public_numbers()
        return {
            "kty": "EC",
            "crv": "P-256",
            "x": _int_to_b64url(numbers.x, _EC_COORD_BYTES),
            "y": _int_to_b64url(numbers.y, _EC_COORD_BYTES),
            "alg": ALG_ES256,
            "use": "sig",
        }
    raise UnsupportedAlgorithm(f"unsupported key type: {type(public_key).__name__}")


def jwk_to_public_key(jwk: dict) -> Any:
    """Load a public JWK into a cryptography public key object."""
    if not isinstance(jwk, dict):
        raise UnsupportedAlgorithm("JWK must be a JSON object")
    kty = jwk.get("kty")
    try:
        if kty == "RSA":
            numbers = rsa.RSAPublicNumbers(
                e=_b64url_to_int(jwk["e"]), n=_b64url_to_int(jwk["n"])
            )
            return numbers.public_key()
        if kty == "EC":
            if jwk.get("crv") != "P-256":
                raise UnsupportedAlgorithm(f"unsupported curve: {jwk.get('crv')}")
            numbers = ec.EllipticCurvePublicNumbers(
                x=_b64url_to_int(jwk["x"]),
                y=_b64url_to_int(jwk["y"]),
                curve=ec.SECP256R1(),
            )
            return numbers.public_key()
    except UnsupportedAlgorithm:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise UnsupportedAlgorithm(f"malformed JWK: {exc}") from exc
    raise UnsupportedAlgorithm(f"unsupported kty: {kty}")


def jwk_algorithm(jwk: dict) -> str:
    """Signature algorithm implied by a JWK's key type."""
    kty = jwk.get("kty") if isinstance(jwk, dict) else None
    if kty == "RSA":
        return ALG_RS256
    if kty == "EC" and jwk.get("crv") == "P-256":
        return ALG_ES256
    raise UnsupportedAlgorithm(f"unsupported kty: {kty}")


def jwk_is_public(jwk: dict) -> bool:
    return isinstance(jwk, dict) and not (_PRIVATE_JWK_MEMBERS & jwk.keys())


def require_public_jwk(jwk: dict) -> dict:
    if not isinstance(jwk, dict) or "kty" not in jwk:
        raise PrivateMaterialInKey("not a JWK object")
    if not jwk_is_public(jwk):
        raise PrivateMaterialInKey("JWK contains private key members")
    return jwk


def jwk_thumbprint(jwk: dict) -> str:
    """RFC 7638 thumbprint: SHA-256 over the required members, base64url."""
    kty = jwk.get("kty")
    if kty == "RSA":
        members = {"e": jwk["e"], "kty": "RSA", "n": jwk["n"]}
    elif kty == "EC":
        members = {"crv": jwk["crv"], "kty": "EC", "x": jwk["x"], "y": jwk["y"]}
    else:
        raise UnsupportedAlgorithm(f"unsupported kty: {kty}")
    canonical = json.dumps(members, sort_keys=True, separators=(",", ":"))
    return b64url_encode(hashlib.sha256(canonical.encode("utf-8")).digest())


# -- raw signatures -----------------------------------------------------------

def sign_bytes(private_key: Any, algorithm: str, data: bytes) -> bytes:
    if algorithm == ALG_RS256:
        return private_key.sign(data, padding.PKCS1v15(), hashes.SHA256())
    if algorithm == ALG_ES256:
        der = private_key.sign(data, ec.ECDSA(hashes.SHA256()))
        r, s = decode_dss_signature(der)
        return r.to_bytes(_EC_COORD_BYTES, "big") + s.to_bytes(_EC_COORD_BYTES, "big")
    raise UnsupportedAlgorithm(f"unsupported algorithm: {algorithm}")


def verify_bytes(public_key: Any, algorithm: str, data: bytes, signature: bytes) -> bool:
    try:
        if algorithm == ALG_RS256:
            public_key.verify(signature, data, padding.PKCS1v15(), hashes.SHA256())
            return True
        if algorithm == ALG_ES256:
            if len(signature) != 2 * _EC_COORD_BYTES:
                return False
            r = int.from_bytes(signature[:_EC_COORD_BYTES], "big")
            s = int.from_bytes(signature[_EC_COORD_BYTES:], "big")
            public_key.verify(encode_dss_signature(r, s), data, ec.ECDSA(hashes.SHA256()))
            return True
    except InvalidSignature:
        return False
    except ValueError:
        return False
    raise UnsupportedAlgorithm(f"unsupported algorithm: {algorithm}")


def verify_with_jwk(jwk: dict, data: bytes, signature: bytes) -> bool:
    """Verify a raw signature under a public JWK; algorithm read from the key."""
    return verify_bytes(jwk_to_public_key(jwk), jwk_algorithm(jwk), data, signature)


# -- PEM persistence ----------------------------------------------------------

def private_pem_bytes(keypair: KeyPairDescriptor) -> bytes:
    if keypair.private_part is None:
        raise MissingPrivateKey("nothing to serialize")
    return keypair.private_part.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


def keypair_from_pem_bytes(
    data: bytes,
    kind: str = KIND_EPHEMERAL,
    revocation_server: Optional[str] = None,
) -> KeyPairDescriptor:
    """Load a PKCS#8 PEM private key; the algorithm follows the key type."""
    private = serialization.load_pem_private_key(data, password=None)
    if isinstance(private, rsa.RSAPrivateKey):
        if private.key_size < RSA_MIN_MODULUS_BITS:
            raise UnsupportedAlgorithm(
                f"RSA modulus too small: {private.key_size} bits"
            )
        alg = ALG_RS256
    elif isinstance(private, ec.EllipticCurvePrivateKey) and isinstance(
        private.curve, ec.SECP256R1
    ):
        alg = ALG_ES256
    else:
        raise UnsupportedAlgorithm("unsupported key type in PEM data")
    _check_kind(kind, revocation_server)
    return KeyPairDescriptor(
        algorithm=alg,
        public_part=public_jwk_from_key(private.public_key()),
        private_part=private,
        kind=kind,
        revocation_server=revocation_server,
    )


def save_private_pem(keypair: KeyPairDescriptor, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(private_pem_bytes(keypair))


def load_private_pem(
    path: str,
    kind: str = KIND_EPHEMERAL,
    revocation_server: Optional[str] = None,
) -> KeyPairDescriptor:
    with open(path, "rb") as fh:
        return keypair_from_pem_bytes(fh.read(), kind, revocation_server)
