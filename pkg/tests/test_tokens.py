import json
import random

import pytest

from util import independent_b64url_decode, mutate_str

from ictauth.clock import ManualClock
from ictauth.encoding import b64url_decode, b64url_encode
from ictauth.errors import (
    EmptyContexts,
    MalformedToken,
    PrivateMaterialInKey,
    SignatureInvalid,
    TokenExpired,
    TokenNotYetValid,
    ValidityTooLong,
    WrongTokenType,
)
from ictauth.keys import ALG_ES256, KIND_LONG_TERM, generate_signing_keypair
from ictauth.tokens import (
    ICT_TYP,
    IctClaims,
    build_ict_claims,
    decode_unverified,
    sign_compact,
    sign_token,
    verify_token_signature,
)

T0 = 1_700_000_000


@pytest.fixture(scope="module")
def client_key():
    return generate_signing_keypair(ALG_ES256)


@pytest.fixture(scope="module")
def clock():
    return ManualClock(T0)


def make_claims(client_key, clock, validity=300, contexts=("email",), **kwargs):
    return build_ict_claims(
        user_info=kwargs.pop("user_info", {"name": "Alice Example", "email": "alice@example.org"}),
        subject="alice-sub-1",
        issuer="https://op.example",
        confirmation_key=client_key.public_part,
        contexts=contexts,
        validity_seconds=validity,
        clock=clock,
        **kwargs,
    )


class TestBuildClaims:
    def test_validity_300_gives_300s_window(self, client_key, clock):
        claims = make_claims(client_key, clock, validity=300)
        assert claims.expires_at - claims.issued_at == 300
        assert claims.not_before == claims.issued_at == T0

    def test_validity_over_one_hour_rejected(self, client_key, clock):
        with pytest.raises(ValidityTooLong):
            make_claims(client_key, clock, validity=3601)

    def test_validity_exactly_one_hour_allowed(self, client_key, clock):
        claims = make_claims(client_key, clock, validity=3600)
        assert claims.expires_at - claims.issued_at == 3600

    def test_nonpositive_validity_rejected(self, client_key, clock):
        for bad in (0, -5):
            with pytest.raises(ValueError):
                make_claims(client_key, clock, validity=bad)

    def test_token_ids_unique(self, client_key, clock):
        a = make_claims(client_key, clock)
        b = make_claims(client_key, clock)
        assert a.token_id != b.token_id

    def test_empty_contexts_rejected(self, client_key, clock):
        with pytest.raises(EmptyContexts):
            make_claims(client_key, clock, contexts=())

    def test_private_key_material_rejected(self, client_key, clock):
        leaky = dict(client_key.public_part, d="AAAA")
        with pytest.raises(PrivateMaterialInKey):
            build_ict_claims({}, "s", "https://op.example", leaky, ("email",), 300, clock)

    def test_reserved_names_stripped_from_identity_claims(self, client_key, clock):
        claims = make_claims(
            client_key, clock,
            user_info={"name": "A", "sub": "spoof", "iss": "spoof", "exp": 1, "cnf": {}},
        )
        assert dict(claims.identity_claims) == {"name": "A"}
        assert claims.subject == "alice-sub-1"

    def test_long_term_kind_carries_revocation_server(self, client_key, clock):
        claims = make_claims(
            client_key, clock, key_kind=KIND_LONG_TERM, revocation_server="https://rev.example"
        )
        assert claims.revocation_server == "https://rev.example"
        with pytest.raises(ValueError):
            make_claims(client_key, clock, key_kind=KIND_LONG_TERM)


class TestSignVerify:
    @pytest.mark.parametrize("alg", ["RS256", "ES256"])
    def test_round_trip(self, client_key, clock, alg):
        op = generate_signing_keypair(alg)
        token = sign_token(make_claims(client_key, clock), op, "kid-1")
        back = verify_token_signature(token, op.public_part, clock)
        assert back == token.claims
        assert token.header == {"typ": ICT_TYP, "alg": alg, "kid": "kid-1"}

    def test_wrong_key_rejected(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        other = generate_signing_keypair("ES256")
        token = sign_token(make_claims(client_key, clock), op, "kid-1")
        with pytest.raises(SignatureInvalid):
            verify_token_signature(token, other.public_part, clock)

    def test_header_typ_via_independent_decoder(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        token = sign_token(make_claims(client_key, clock), op, "kid-1")
        header_segment = token.serialized.split(".")[0]
        header = json.loads(independent_b64url_decode(header_segment))
        assert header["typ"] == "ict+jwt"

    def test_expiry_boundaries(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        token = sign_token(make_claims(client_key, clock, validity=300), op, "kid-1")
        assert verify_token_signature(token, op.public_part, ManualClock(T0 + 300))
        with pytest.raises(TokenExpired):
            verify_token_signature(token, op.public_part, ManualClock(T0 + 301))
        with pytest.raises(TokenNotYetValid):
            verify_token_signature(token, op.public_part, ManualClock(T0 - 1))

    def test_id_token_substitution_rejected(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        idt = sign_compact(
            {"typ": "JWT", "alg": "ES256", "kid": "kid-1"},
            {"iss": "https://op.example", "sub": "alice-sub-1", "iat": T0, "exp": T0 + 300},
            op,
        )
        with pytest.raises(WrongTokenType):
            verify_token_signature(idt, op.public_part, clock)

    def test_alg_mismatch_rejected(self, client_key, clock):
        # header claims "none" while the key is EC: never verified
        op = generate_signing_keypair("ES256")
        header = b64url_encode(json.dumps({"typ": ICT_TYP, "alg": "none"}).encode())
        payload = b64url_encode(json.dumps(make_claims(client_key, clock).to_payload()).encode())
        with pytest.raises(SignatureInvalid):
            verify_token_signature(header + "." + payload + ".", op.public_part, clock)

    def test_segments_are_opaque_not_reserialized(self, client_key, clock):
        # a payload whose JSON key order differs from ours still verifies
        op = generate_signing_keypair("ES256")
        payload = make_claims(client_key, clock).to_payload()
        scrambled = dict(reversed(list(payload.items())))
        token = sign_compact({"typ": ICT_TYP, "alg": "ES256", "kid": "k"}, scrambled, op)
        claims = verify_token_signature(token, op.public_part, clock)
        assert claims.subject == "alice-sub-1"
        for segment in token.split("."):
            assert b64url_encode(b64url_decode(segment)) == segment

    def test_tamper_detection_random_single_bytes(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        token = sign_token(make_claims(client_key, clock), op, "kid-1").serialized
        rng = random.Random(0xB0B)
        for _ in range(150):
            mutated = mutate_str(token, rng)
            assert mutated != token
            with pytest.raises((SignatureInvalid, MalformedToken, WrongTokenType, TokenExpired)):
                verify_token_signature(mutated, op.public_part, clock)

    def test_round_trip_random_claims(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        rng = random.Random(7)
        contexts_pool = ["email", "vc", "im", "chat"]
        for _ in range(20):
            user_info = {
                f"claim_{i}": rng.choice(["x", 7, True, None, [1, 2], {"k": "v"}])
                for i in range(rng.randrange(0, 5))
            }
            contexts = tuple(sorted(rng.sample(contexts_pool, rng.randrange(1, 4))))
            claims = make_claims(
                client_key, clock,
                validity=rng.randrange(1, 3601),
                contexts=contexts,
                user_info=user_info,
            )
            token = sign_token(claims, op, "kid-1")
            assert verify_token_signature(token, op.public_part, clock) == claims
            assert claims.expires_at - claims.issued_at <= 3600


class TestDecodeUnverified:
    def test_issuer_readable(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        token = sign_token(make_claims(client_key, clock), op, "kid-1")
        header, payload = decode_unverified(token.serialized)
        assert payload["iss"] == "https://op.example"
        assert header["kid"] == "kid-1"

    def test_payload_parses_back_to_claims(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        claims = make_claims(client_key, clock)
        _, payload = decode_unverified(sign_token(claims, op, "kid-1").serialized)
        assert IctClaims.from_payload(payload) == claims

    def test_two_segments_malformed(self):
        with pytest.raises(MalformedToken):
            decode_unverified("abc.def")

    def test_corrupted_signature_segment_still_decodes(self, client_key, clock):
        op = generate_signing_keypair("ES256")
        token = sign_token(make_claims(client_key, clock), op, "kid-1").serialized
        h, p, _ = token.split(".")
        header, payload = decode_unverified(h + "." + p + ".!!!not-base64!!!")
        assert payload["sub"] == "alice-sub-1"

    def test_garbage_segment_malformed(self):
        with pytest.raises(MalformedToken):
            decode_unverified("!!.??.##")


def test_independent_decoder_agrees_with_package_decoder():
    rng = random.Random(99)
    for _ in range(50):
        raw = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        encoded = b64url_encode(raw)
        assert independent_b64url_decode(encoded) == raw == b64url_decode(encoded)


def test_strict_decoder_rejects_noncanonical_trailing_bits():
    # "QR" decodes to the same byte as "QQ" under permissive decoders
    assert b64url_decode("QQ") == b"A"
    with pytest.raises(ValueError):
        b64url_decode("QR")
    with pytest.raises(ValueError):
        b64url_decode("ab=")
    with pytest.raises(ValueError):
        b64url_decode("a")
