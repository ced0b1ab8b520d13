import random

import pytest

from util import mutate_bytes, mutate_str

from ictauth.clock import ManualClock
from ictauth.errors import KeyIctMismatch, WrongContext
from ictauth.keys import ALG_ES256, KIND_LONG_TERM, generate_signing_keypair, jwk_thumbprint
from ictauth.flows import (
    HandshakeMessage,
    SignedMessage,
    email_sign,
    email_verify,
    im_bind_channel,
    vc_complete,
    vc_initiate,
    vc_respond,
)
from ictauth.revocation import RevocationList, make_revocation_server
from ictauth.tokens import build_ict_claims, sign_token
from ictauth.verifier import (
    CLASS_AUTHORITATIVE,
    StaticKeyLookup,
    TrustEntry,
    TrustPolicy,
)

T0 = 1_700_000_000
OP_A = "https://op-a.example"
OP_B = "https://op-b.example"
KID = "k1"


@pytest.fixture(scope="module")
def signer_a():
    return generate_signing_keypair(ALG_ES256)


@pytest.fixture(scope="module")
def signer_b():
    return generate_signing_keypair(ALG_ES256)


@pytest.fixture(scope="module")
def op_keys(signer_a, signer_b):
    return StaticKeyLookup({
        OP_A: {KID: signer_a.public_part},
        OP_B: {KID: signer_b.public_part},
    })


@pytest.fixture(scope="module")
def policy():
    return TrustPolicy(entries={
        OP_A: TrustEntry(klass=CLASS_AUTHORITATIVE, authoritative_claims=frozenset({"email"})),
        OP_B: TrustEntry(klass=CLASS_AUTHORITATIVE, authoritative_claims=frozenset({"email"})),
    })


def mint(signer, client_key, issuer, subject, contexts, validity=300, t0=T0,
         key_kind="ephemeral", revocation_server=None):
    claims = build_ict_claims(
        user_info={"name": subject.title(), "email": f"{subject}@example.org"},
        subject=subject,
        issuer=issuer,
        confirmation_key=client_key.public_part,
        contexts=contexts,
        validity_seconds=validity,
        clock=ManualClock(t0),
        key_kind=key_kind,
        revocation_server=revocation_server,
    )
    return sign_token(claims, signer, KID).serialized


@pytest.fixture()
def alice(signer_a):
    key = generate_signing_keypair(ALG_ES256)
    return key, mint(signer_a, key, OP_A, "alice", ("vc",))


@pytest.fixture()
def bob(signer_b):
    key = generate_signing_keypair(ALG_ES256)
    return key, mint(signer_b, key, OP_B, "bob", ("vc",))


class TestVcHandshake:
    def test_mutual_success(self, alice, bob, policy, op_keys):
        alice_key, alice_ict = alice
        bob_key, bob_ict = bob
        clock = ManualClock(T0)
        message, pending = vc_initiate(alice_key, alice_ict, "bob", clock)
        response, bob_view = vc_respond(message, bob_key, bob_ict, policy, op_keys, clock)
        assert bob_view.accepted and bob_view.subject == "alice"
        assert response.session_id == message.session_id
        alice_view = vc_complete(pending, response, policy, op_keys, clock)
        assert alice_view.accepted and alice_view.subject == "bob"
        assert alice_view.confirmation_key == bob_key.public_part

    def test_session_ids_unique(self, alice):
        alice_key, alice_ict = alice
        clock = ManualClock(T0)
        m1, _ = vc_initiate(alice_key, alice_ict, "bob", clock)
        m2, _ = vc_initiate(alice_key, alice_ict, "bob", clock)
        assert m1.session_id != m2.session_id
        assert "alice|bob|" in m1.session_id

    def test_wrong_context_rejected_at_initiate(self, signer_a):
        key = generate_signing_keypair(ALG_ES256)
        email_ict = mint(signer_a, key, OP_A, "alice", ("email",))
        with pytest.raises(WrongContext):
            vc_initiate(key, email_ict, "bob", ManualClock(T0))

    def test_key_ict_mismatch_at_initiate(self, alice):
        _, alice_ict = alice
        stranger = generate_signing_keypair(ALG_ES256)
        with pytest.raises(KeyIctMismatch):
            vc_initiate(stranger, alice_ict, "bob", ManualClock(T0))

    def test_altered_session_id_breaks_signature(self, alice, bob, policy, op_keys):
        alice_key, alice_ict = alice
        bob_key, bob_ict = bob
        clock = ManualClock(T0)
        message, _ = vc_initiate(alice_key, alice_ict, "bob", clock)
        tampered = HandshakeMessage(
            ict=message.ict, session_id=message.session_id + "x", signature=message.signature
        )
        response, verdict = vc_respond(tampered, bob_key, bob_ict, policy, op_keys, clock)
        assert response is None
        assert verdict.rejection_reason == "bad-handshake-signature"

    def test_response_replayed_across_sessions(self, alice, bob, policy, op_keys):
        alice_key, alice_ict = alice
        bob_key, bob_ict = bob
        clock = ManualClock(T0)
        m1, pending1 = vc_initiate(alice_key, alice_ict, "bob", clock)
        m2, pending2 = vc_initiate(alice_key, alice_ict, "bob", clock)
        response1, _ = vc_respond(m1, bob_key, bob_ict, policy, op_keys, clock)
        hijack = vc_complete(pending2, response1, policy, op_keys, clock)
        assert hijack.rejection_reason == "session-mismatch"
        assert vc_complete(pending1, response1, policy, op_keys, clock).accepted

    def test_untrusted_responder_op(self, alice, bob, op_keys):
        alice_key, alice_ict = alice
        bob_key, bob_ict = bob
        clock = ManualClock(T0)
        # bob trusts alice's OP and responds; alice's own policy does not
        # trust bob's OP, so her completion rejects him
        only_a = TrustPolicy(entries={OP_A: TrustEntry(klass=CLASS_AUTHORITATIVE)})
        message, pending = vc_initiate(alice_key, alice_ict, "bob", clock)
        response, _ = vc_respond(message, bob_key, bob_ict, only_a, op_keys, clock)
        verdict = vc_complete(pending, response, only_a, op_keys, clock)
        assert verdict.rejection_reason == "untrusted-issuer"

    def test_rejected_initiator_gets_no_response(self, alice, bob, op_keys):
        alice_key, alice_ict = alice
        bob_key, bob_ict = bob
        clock = ManualClock(T0)
        message, _ = vc_initiate(alice_key, alice_ict, "bob", clock)
        response, verdict = vc_respond(message, bob_key, bob_ict, TrustPolicy(), op_keys, clock)
        assert response is None
        assert verdict.rejection_reason == "untrusted-issuer"

    def test_completion_outlives_token_expiry(self, alice, bob, policy, op_keys):
        # an established session needs no revalidation when tokens expire later
        alice_key, alice_ict = alice
        bob_key, bob_ict = bob
        clock = ManualClock(T0)
        message, pending = vc_initiate(alice_key, alice_ict, "bob", clock)
        response, _ = vc_respond(message, bob_key, bob_ict, policy, op_keys, clock)
        verdict = vc_complete(pending, response, policy, op_keys, clock)
        assert verdict.accepted
        clock.advance(100_000)
        assert verdict.accepted

    def test_anti_relay_random_interleavings(self, signer_a, signer_b, policy, op_keys):
        # responses shuffled across concurrent handshakes only ever complete
        # their own session, regardless of delivery order or duplication
        rng = random.Random(404)
        clock = ManualClock(T0)
        for _ in range(10):
            a_key = generate_signing_keypair(ALG_ES256)
            a_ict = mint(signer_a, a_key, OP_A, "alice", ("vc",))
            b_key = generate_signing_keypair(ALG_ES256)
            b_ict = mint(signer_b, b_key, OP_B, "bob", ("vc",))
            handshakes = []
            for _ in range(3):
                message, pending = vc_initiate(a_key, a_ict, "bob", clock)
                response, _ = vc_respond(message, b_key, b_ict, policy, op_keys, clock)
                handshakes.append((pending, response))
            deliveries = [(i, response) for i, (_, response) in enumerate(handshakes)]
            deliveries = deliveries * 2  # duplication
            rng.shuffle(deliveries)      # reordering
            for origin, response in deliveries:
                for target, (pending, _) in enumerate(handshakes):
                    verdict = vc_complete(pending, response, policy, op_keys, clock)
                    if target == origin:
                        assert verdict.accepted
                    else:
                        assert verdict.rejection_reason == "session-mismatch"

    def test_wire_round_trip(self, alice):
        alice_key, alice_ict = alice
        message, _ = vc_initiate(alice_key, alice_ict, "bob", ManualClock(T0))
        assert HandshakeMessage.from_wire(message.to_wire()) == message


class TestImBinding:
    def test_accepted(self, signer_a, policy, op_keys):
        channel_key = generate_signing_keypair(ALG_ES256)
        ict = mint(signer_a, channel_key, OP_A, "alice", ("im",))
        result = im_bind_channel(channel_key.public_part, ict, policy, op_keys, T0 + 10)
        assert result.accepted

    def test_key_mismatch_detected(self, signer_a, policy, op_keys):
        channel_key = generate_signing_keypair(ALG_ES256)
        mitm_key = generate_signing_keypair(ALG_ES256)
        ict = mint(signer_a, channel_key, OP_A, "alice", ("im",))
        result = im_bind_channel(mitm_key.public_part, ict, policy, op_keys, T0 + 10)
        assert result.rejection_reason == "key-mismatch"

    def test_receipt_after_expiry(self, signer_a, policy, op_keys):
        channel_key = generate_signing_keypair(ALG_ES256)
        ict = mint(signer_a, channel_key, OP_A, "alice", ("im",), validity=300)
        result = im_bind_channel(channel_key.public_part, ict, policy, op_keys, T0 + 301)
        assert result.rejection_reason == "receipt-after-expiry"

    def test_late_reverification_uses_receipt_time(self, signer_a, policy, op_keys):
        # a verdict recomputed days later still holds: only receipt time counts
        channel_key = generate_signing_keypair(ALG_ES256)
        ict = mint(signer_a, channel_key, OP_A, "alice", ("im",), validity=300)
        result = im_bind_channel(channel_key.public_part, ict, policy, op_keys, T0 + 100)
        assert result.accepted

    def test_wrong_context(self, signer_a, policy, op_keys):
        channel_key = generate_signing_keypair(ALG_ES256)
        ict = mint(signer_a, channel_key, OP_A, "alice", ("email",))
        result = im_bind_channel(channel_key.public_part, ict, policy, op_keys, T0 + 10)
        assert result.rejection_reason == "context-mismatch"


@pytest.fixture()
def email_setup(signer_a):
    key = generate_signing_keypair(ALG_ES256)
    ict = mint(signer_a, key, OP_A, "alice", ("email",), validity=3600)
    return key, ict


class TestEmail:
    def test_round_trip(self, email_setup, policy, op_keys):
        key, ict = email_setup
        msg = email_sign(b"hello", [b"att-1", b"att-2"], key, ict, ManualClock(T0))
        result = email_verify(msg, policy, op_keys, inbox_timestamp=T0 + 600,
                              trust_inbox_time=True, clock=ManualClock(T0 + 600))
        assert result.accepted
        assert result.subject == "alice"

    def test_trusted_inbox_time_allows_late_reading(self, email_setup, policy, op_keys):
        key, ict = email_setup
        msg = email_sign(b"hello", [], key, ict, ManualClock(T0))
        two_days = ManualClock(T0 + 48 * 3600)
        ok = email_verify(msg, policy, op_keys, T0 + 600, True, clock=two_days)
        assert ok.accepted
        stale = email_verify(msg, policy, op_keys, T0 + 600, False, clock=two_days)
        assert stale.rejection_reason == "ict-expired"

    def test_attachment_mutation_detected(self, email_setup, policy, op_keys):
        key, ict = email_setup
        msg = email_sign(b"hello", [b"attachment"], key, ict, ManualClock(T0))
        tampered = SignedMessage(
            body=msg.body,
            attachments=(mutate_bytes(msg.attachments[0], random.Random(1)),),
            sent_at=msg.sent_at,
            ict=msg.ict,
            signature=msg.signature,
        )
        result = email_verify(tampered, policy, op_keys, T0 + 60, True)
        assert result.rejection_reason == "bad-signature"

    def test_ict_swap_detected(self, email_setup, signer_a, policy, op_keys):
        key, ict = email_setup
        msg = email_sign(b"hello", [], key, ict, ManualClock(T0))
        other_ict = mint(signer_a, key, OP_A, "alice", ("email",), validity=3600)
        swapped = SignedMessage(msg.body, msg.attachments, msg.sent_at, other_ict, msg.signature)
        result = email_verify(swapped, policy, op_keys, T0 + 60, True)
        assert result.rejection_reason == "bad-signature"

    def test_single_byte_mutations_all_rejected(self, email_setup, policy, op_keys):
        key, ict = email_setup
        msg = email_sign(b"body bytes", [b"first", b"second"], key, ict, ManualClock(T0))
        rng = random.Random(0xE44)
        for _ in range(100):
            field = rng.randrange(4)
            if field == 0:
                mutated = SignedMessage(mutate_bytes(msg.body, rng), msg.attachments,
                                        msg.sent_at, msg.ict, msg.signature)
            elif field == 1:
                idx = rng.randrange(len(msg.attachments))
                attachments = list(msg.attachments)
                attachments[idx] = mutate_bytes(attachments[idx], rng)
                mutated = SignedMessage(msg.body, tuple(attachments),
                                        msg.sent_at, msg.ict, msg.signature)
            elif field == 2:
                mutated = SignedMessage(msg.body, msg.attachments,
                                        msg.sent_at + rng.choice([-1, 1, 3600]),
                                        msg.ict, msg.signature)
            else:
                mutated = SignedMessage(msg.body, msg.attachments, msg.sent_at,
                                        mutate_str(msg.ict, rng), msg.signature)
            result = email_verify(mutated, policy, op_keys, T0 + 60, True)
            assert not result.accepted

    def test_long_term_key_revocation_paths(self, signer_a, policy, op_keys):
        revlist = RevocationList()
        with make_revocation_server(revlist) as server:
            key = generate_signing_keypair(ALG_ES256, KIND_LONG_TERM, server.base_url)
            ict = mint(signer_a, key, OP_A, "alice", ("email",), validity=3600,
                       key_kind=KIND_LONG_TERM, revocation_server=server.base_url)
            msg = email_sign(b"signed", [], key, ict, ManualClock(T0))
            much_later = ManualClock(T0 + 7 * 24 * 3600)
            ok = email_verify(msg, policy, op_keys, T0 + 60, False, clock=much_later)
            assert ok.accepted  # long-term: expiry replaced by revocation checking
            revlist.revoke(jwk_thumbprint(key.public_part))
            revoked = email_verify(msg, policy, op_keys, T0 + 60, True)
            assert revoked.rejection_reason == "key-revoked"

    def test_long_term_fail_closed(self, signer_a, policy, op_keys):
        key = generate_signing_keypair(ALG_ES256, KIND_LONG_TERM, "http://127.0.0.1:1")
        ict = mint(signer_a, key, OP_A, "alice", ("email",), validity=3600,
                   key_kind=KIND_LONG_TERM, revocation_server="http://127.0.0.1:1")
        msg = email_sign(b"signed", [], key, ict, ManualClock(T0))
        result = email_verify(msg, policy, op_keys, T0 + 60, True)
        assert result.rejection_reason == "revocation-unreachable"

    def test_wrong_context_at_sign(self, signer_a):
        key = generate_signing_keypair(ALG_ES256)
        vc_ict = mint(signer_a, key, OP_A, "alice", ("vc",))
        with pytest.raises(WrongContext):
            email_sign(b"x", [], key, vc_ict, ManualClock(T0))

    def test_wire_round_trip(self, email_setup):
        key, ict = email_setup
        msg = email_sign(b"hello", [b"a"], key, ict, ManualClock(T0))
        assert SignedMessage.from_wire(msg.to_wire()) == msg
