"""Command-line front end.

Subcommands: keygen, request-ict, verify, demo-vc, demo-im, demo-email,
bench, stub (mock provider), serve (issuance service).

Exit codes: 0 success, 1 protocol or verification failure, 2 usage error.
With ``--format json`` errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Optional

import requests

from . import bench as bench_mod
from .clock import ManualClock, SYSTEM_CLOCK
from .errors import IctAuthError, ProtocolError
from .flows import (
    CONTEXT_EMAIL,
    CONTEXT_IM,
    CONTEXT_VC,
    email_sign,
    email_verify,
    im_bind_channel,
    vc_complete,
    vc_initiate,
    vc_respond,
)
from .issuer import (
    CONFIG_ENV_VAR,
    IssuerConfig,
    load_issuer_config,
    make_issuer_server,
    request_ict,
)
from .keys import (
    ALG_ES256,
    KIND_EPHEMERAL,
    KIND_LONG_TERM,
    generate_signing_keypair,
    jwk_thumbprint,
    keypair_from_pem_bytes,
    load_private_pem,
    private_pem_bytes,
    save_private_pem,
)
from .opstub import OpStub, load_users, make_stub_server
from .pop import ProofOfPossession, create_pop
from .revocation import RevocationList, make_revocation_server
from .verifier import (
    CLASS_AUTHORITATIVE,
    JwksKeyLookup,
    TrustEntry,
    TrustPolicy,
    verify_ict,
)

EXIT_OK = 0
EXIT_PROTOCOL = 1
EXIT_USAGE = 2


def _fail(fmt: str, code: str, detail: str, exit_code: int) -> int:
    if fmt == "json":
        print(json.dumps({"error": code, "detail": detail}), file=sys.stderr)
    else:
        print(f"error: {code}: {detail}", file=sys.stderr)
    return exit_code


def _load_policy(path: Optional[str]) -> TrustPolicy:
    if path and os.path.exists(path):
        return TrustPolicy.from_file(path)
    return TrustPolicy()


# -- keygen --------------------------------------------------------------------

def cmd_keygen(args) -> int:
    alg = args.alg.upper()
    if alg not in ("RS256", "ES256"):
        return _fail(args.format, "unsupported-algorithm", f"unsupported algorithm: {args.alg}", EXIT_USAGE)
    kind = KIND_LONG_TERM if args.kind == "long-term" else KIND_EPHEMERAL
    if kind == KIND_LONG_TERM and not args.rev_srv:
        return _fail(args.format, "invalid-arguments", "--kind long-term requires --rev-srv", EXIT_USAGE)
    if kind == KIND_EPHEMERAL and args.rev_srv:
        return _fail(args.format, "invalid-arguments", "--rev-srv is only valid with --kind long-term", EXIT_USAGE)
    keypair = generate_signing_keypair(alg, kind, args.rev_srv)
    pem_path = args.out + ".pem"
    jwk_path = args.out + ".jwk.json"
    try:
        save_private_pem(keypair, pem_path)
        with open(jwk_path, "w", encoding="utf-8") as fh:
            json.dump(keypair.public_part, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        return _fail(args.format, "io-error", str(exc), EXIT_PROTOCOL)
    if args.format == "json":
        print(json.dumps({"private_pem": pem_path, "public_jwk": jwk_path, "alg": alg}))
    else:
        print(f"wrote {pem_path} (private) and {jwk_path} (public, {alg})")
    return EXIT_OK


# -- request-ict -----------------------------------------------------------------

def _obtain_access_token(args) -> str:
    if args.access_token:
        return args.access_token
    if not (args.op_url and args.username and args.password):
        raise ProtocolError("need --access-token or --op-url/--username/--password")
    response = requests.post(
        args.op_url.rstrip("/") + "/token",
        data={
            "grant_type": "password",
            "username": args.username,
            "password": args.password,
            "scope": args.scopes,
        },
        timeout=10.0,
    )
    body = response.json()
    if response.status_code != 200:
        error = ProtocolError(body.get("error_description", ""))
        error.code = body.get("error", "token-request-failed")
        raise error
    return body["access_token"]


def _client_key_from_args(args):
    if args.key:
        kind = KIND_LONG_TERM if args.key_kind == "long-term" else KIND_EPHEMERAL
        return load_private_pem(args.key, kind, args.rev_srv)
    if args.key_kind == "long-term":
        if not args.rev_srv:
            raise ValueError("long-term keys require --rev-srv")
        return generate_signing_keypair(args.alg.upper(), KIND_LONG_TERM, args.rev_srv)
    return generate_signing_keypair(args.alg.upper())


def cmd_request_ict(args) -> int:
    try:
        pop = None
        if args.reuse_pop and os.path.exists(args.reuse_pop):
            # replay demonstration: re-send a cached proof with its key
            with open(args.reuse_pop, "r", encoding="utf-8") as fh:
                cached = json.load(fh)
            pop = ProofOfPossession.from_wire(cached["pop"])
            client_key = keypair_from_pem_bytes(cached["private_pem"].encode("ascii"))
        else:
            client_key = _client_key_from_args(args)
            if args.reuse_pop:
                pop = create_pop(client_key, SYSTEM_CLOCK)
                with open(args.reuse_pop, "w", encoding="utf-8") as fh:
                    json.dump({
                        "pop": pop.to_wire(),
                        "private_pem": private_pem_bytes(client_key).decode("ascii"),
                    }, fh)

        access_token = _obtain_access_token(args)
        token = request_ict(
            args.issuer_url,
            access_token,
            client_key,
            args.contexts,
            validity=args.validity,
            pop=pop,
        )
    except ProtocolError as exc:
        return _fail(args.format, exc.code, exc.detail, EXIT_PROTOCOL)
    except (IctAuthError, OSError, ValueError) as exc:
        code = getattr(exc, "code", "error")
        return _fail(args.format, code, str(exc), EXIT_PROTOCOL)
    if args.format == "json":
        print(json.dumps({"ict": token}))
    else:
        print(token)
    return EXIT_OK


# -- verify ----------------------------------------------------------------------

def _read_token(path: str) -> str:
    if path == "-":
        return sys.stdin.read().strip()
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().strip()


def _format_result(result, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(
            {
                "verdict": result.verdict,
                "issuer": result.issuer,
                "subject": result.subject,
                "claims": {k: {"value": v, "provenance": p} for k, (v, p) in result.claims.items()},
                "key_kind": result.key_kind,
                "rejection_reason": result.rejection_reason,
            }
        )
    if not result.accepted:
        return f"rejected: {result.rejection_reason}"
    lines = [f"accepted: {result.subject} (issuer {result.issuer})"]
    width = max((len(k) for k in result.claims), default=5)
    lines.append(f"  {'claim'.ljust(width)}  provenance     value")
    for name in sorted(result.claims):
        value, provenance = result.claims[name]
        lines.append(f"  {name.ljust(width)}  {provenance.ljust(13)}  {value}")
    return "\n".join(lines)


def cmd_verify(args) -> int:
    try:
        token = _read_token(args.ict)
    except OSError as exc:
        return _fail(args.format, "io-error", str(exc), EXIT_USAGE)
    policy = _load_policy(args.policy)

    decided: dict[str, TrustEntry] = {}
    if args.interactive:
        def ask(issuer: str) -> Optional[TrustEntry]:
            answer = input(f"Issuer {issuer} is not in the policy. Trust it? [y/N] ")
            if answer.strip().lower().startswith("y"):
                entry = TrustEntry(klass=CLASS_AUTHORITATIVE)
                decided[issuer] = entry
                return entry
            return None

        policy.unknown_issuer_hook = ask

    jwks_urls = dict(kv.split("=", 1) for kv in args.jwks or [])
    op_keys = JwksKeyLookup(jwks_urls=jwks_urls)
    result = verify_ict(token, op_keys, policy, args.context, SYSTEM_CLOCK)

    if args.save and decided and args.policy:
        policy.entries.update(decided)
        policy.unknown_issuer_hook = None
        with open(args.policy, "w", encoding="utf-8") as fh:
            json.dump(policy.to_dict(), fh, indent=2)

    print(_format_result(result, args.format))
    return EXIT_OK if result.accepted else EXIT_PROTOCOL


# -- demos -----------------------------------------------------------------------

class _DemoStack:
    """Self-contained provider + issuance service for the demo subcommands."""

    def __init__(self) -> None:
        self.stub = OpStub()
        self.stub_server = make_stub_server(self.stub)
        self.stub_server.start()
        config = IssuerConfig(
            issuer_url=self.stub.issuer_url,
            op_signing_key=self.stub.op_key,
            key_id=self.stub.key_id,
            userinfo_url=self.stub.issuer_url + "/userinfo",
        )
        self.issuer_server = make_issuer_server(config).start()
        self.policy = TrustPolicy(
            entries={
                self.stub.issuer_url: TrustEntry(
                    klass=CLASS_AUTHORITATIVE,
                    authoritative_claims=frozenset({"email", "email_verified"}),
                    rank=5,
                )
            }
        )
        self.op_keys = JwksKeyLookup()

    def issue(self, username: str, password: str, context: str, client_key, validity=None):
        scopes = f"profile email e2e_auth_{context}"
        response = requests.post(
            self.stub.issuer_url + "/token",
            data={"grant_type": "password", "username": username,
                  "password": password, "scope": scopes},
            timeout=5.0,
        )
        access_token = response.json()["access_token"]
        return request_ict(
            self.issuer_server.base_url, access_token, client_key, [context], validity=validity
        )

    def close(self) -> None:
        self.issuer_server.stop()
        self.stub_server.stop()


def cmd_demo_vc(args) -> int:
    stack = _DemoStack()
    try:
        alice_key = generate_signing_keypair(ALG_ES256)
        bob_key = generate_signing_keypair(ALG_ES256)
        alice_ict = stack.issue("alice", "wonderland", CONTEXT_VC, alice_key)
        bob_ict = stack.issue("bob", "builder", CONTEXT_VC, bob_key)
        print("issued call tokens for alice and bob")

        message, pending = vc_initiate(alice_key, alice_ict, "bob-sub-1", SYSTEM_CLOCK)
        print(f"alice -> bob: handshake for session {message.session_id}")
        response, bob_view = vc_respond(
            message, bob_key, bob_ict, stack.policy, stack.op_keys, SYSTEM_CLOCK
        )
        print(f"bob verified alice: {bob_view.verdict} (subject {bob_view.subject})")
        alice_view = vc_complete(pending, response, stack.policy, stack.op_keys, SYSTEM_CLOCK)
        print(f"alice verified bob: {alice_view.verdict} (subject {alice_view.subject})")

        # a response captured from another session must not complete this one
        message2, pending2 = vc_initiate(alice_key, alice_ict, "bob-sub-1", SYSTEM_CLOCK)
        replayed = vc_complete(pending2, response, stack.policy, stack.op_keys, SYSTEM_CLOCK)
        print(f"replayed response across sessions: {replayed.rejection_reason}")
        ok = alice_view.accepted and bob_view.accepted and replayed.rejection_reason == "session-mismatch"
        return EXIT_OK if ok else EXIT_PROTOCOL
    finally:
        stack.close()


def cmd_demo_im(args) -> int:
    stack = _DemoStack()
    try:
        channel_key = generate_signing_keypair(ALG_ES256)
        ict = stack.issue("alice", "wonderland", CONTEXT_IM, channel_key)
        now = time.time()
        bound = im_bind_channel(
            channel_key.public_part, ict, stack.policy, stack.op_keys, receipt_time=now
        )
        print(f"binding token to the channel key: {bound.verdict}")

        mitm_key = generate_signing_keypair(ALG_ES256)
        mismatch = im_bind_channel(
            mitm_key.public_part, ict, stack.policy, stack.op_keys, receipt_time=now
        )
        print(f"binding against a different channel key: {mismatch.rejection_reason}")
        late = im_bind_channel(
            channel_key.public_part, ict, stack.policy, stack.op_keys, receipt_time=now + 301
        )
        print(f"received after expiry: {late.rejection_reason}")
        ok = (
            bound.accepted
            and mismatch.rejection_reason == "key-mismatch"
            and late.rejection_reason == "receipt-after-expiry"
        )
        return EXIT_OK if ok else EXIT_PROTOCOL
    finally:
        stack.close()


def cmd_demo_email(args) -> int:
    stack = _DemoStack()
    revlist = RevocationList()
    rev_server = make_revocation_server(revlist).start()
    try:
        key = generate_signing_keypair(ALG_ES256)
        ict = stack.issue("alice", "wonderland", CONTEXT_EMAIL, key, validity=3600)
        msg = email_sign(b"hello bob", [b"attachment-1"], key, ict, SYSTEM_CLOCK)
        inbox_time = time.time()

        later = ManualClock(inbox_time + 48 * 3600)
        verdict = email_verify(
            msg, stack.policy, stack.op_keys, inbox_time, trust_inbox_time=True, clock=later
        )
        print(f"verified 48h later with trusted inbox time: {verdict.verdict}")
        untrusted = email_verify(
            msg, stack.policy, stack.op_keys, inbox_time, trust_inbox_time=False, clock=later
        )
        print(f"without inbox-time trust: {untrusted.rejection_reason}")

        lt_key = generate_signing_keypair(
            ALG_ES256, KIND_LONG_TERM, rev_server.base_url
        )
        lt_ict = stack.issue("alice", "wonderland", CONTEXT_EMAIL, lt_key, validity=3600)
        lt_msg = email_sign(b"signed with my long-term key", [], lt_key, lt_ict, SYSTEM_CLOCK)
        good = email_verify(lt_msg, stack.policy, stack.op_keys, inbox_time, True)
        print(f"long-term key, not revoked: {good.verdict}")
        revlist.revoke(jwk_thumbprint(lt_key.public_part))
        revoked = email_verify(lt_msg, stack.policy, stack.op_keys, inbox_time, True)
        print(f"long-term key, revoked: {revoked.rejection_reason}")
        ok = (
            verdict.accepted
            and untrusted.rejection_reason == "ict-expired"
            and good.accepted
            and revoked.rejection_reason == "key-revoked"
        )
        return EXIT_OK if ok else EXIT_PROTOCOL
    finally:
        rev_server.stop()
        stack.close()


# -- services ----------------------------------------------------------------------

def cmd_stub(args) -> int:
    try:
        users = load_users(args.users) if args.users else None
        op_key = load_private_pem(args.key) if args.key else None
        stub = OpStub(op_key=op_key, key_id=args.key_id, users=users,
                      issuer_url=args.issuer_url or "")
        if args.snapshot and os.path.exists(args.snapshot):
            stub.restore(args.snapshot)
        server = make_stub_server(stub, args.host, args.port)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(args.format, "startup-error", str(exc), EXIT_PROTOCOL)
    print(f"mock provider at {server.base_url}")
    print(f"  token:    POST {server.base_url}/token")
    print(f"  userinfo: GET  {server.base_url}/userinfo")
    print(f"  jwks:     GET  {server.base_url}/.well-known/jwks.json")
    server.start()
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        if args.snapshot:
            stub.snapshot(args.snapshot)
        server.stop()
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        config, server_opts = load_issuer_config(args.config, host=args.host, port=args.port)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(args.format, "config-error", str(exc), EXIT_USAGE)
    try:
        server = make_issuer_server(config, server_opts["host"], server_opts["port"])
    except OSError as exc:
        return _fail(args.format, "startup-error", str(exc), EXIT_PROTOCOL)
    print(f"issuance service at {server.base_url}")
    print(f"  issue:  POST {server.base_url}/ict")
    print(f"  health: GET  {server.base_url}/health")
    server.start()
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


# -- bench --------------------------------------------------------------------------

def cmd_bench(args) -> int:
    creds = bench_mod.BenchCredentials(
        op_url=args.op_url,
        username=args.username,
        password=args.password,
        scopes=tuple(args.scopes.split()),
        algorithm=args.alg.upper(),
    )
    endpoint = args.op_url if args.experiment == "a" else (args.issuer_url or args.op_url)
    try:
        report = bench_mod.run_experiment(
            args.experiment,
            endpoint,
            creds,
            run_duration_seconds=args.duration,
            run_count=args.runs,
        )
    except IctAuthError as exc:
        return _fail(args.format, exc.code, exc.detail, EXIT_PROTOCOL)
    report.save(args.out)
    stem = args.out[:-5] if args.out.endswith(".json") else args.out
    written = [args.out]
    if args.csv:
        bench_mod.write_report_csv(report, stem + ".csv")
        written.append(stem + ".csv")
    if args.plot:
        bench_mod.render_report_plot(report, stem + ".png")
        written.append(stem + ".png")
    summary = {
        "experiment": report.experiment,
        "mean_per_minute": round(report.mean_per_minute, 2),
        "ci95": [round(report.ci95[0], 2), round(report.ci95[1], 2)],
        "files": written,
    }
    if args.format == "json":
        print(json.dumps(summary))
    else:
        print(
            f"{report.experiment}: {report.mean_per_minute:.2f} requests/min "
            f"(95% CI [{report.ci95[0]:.2f}; {report.ci95[1]:.2f}]) over "
            f"{report.run_count} x {report.run_duration_seconds:.0f}s runs"
        )
        print("wrote " + ", ".join(written))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ictauth",
        description="End-to-end user authentication with identity certification tokens",
    )
    parser.add_argument("--format", choices=("text", "json"), default="text")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a client signing key pair")
    p.add_argument("--alg", default="rs256", help="rs256 or es256")
    p.add_argument("--kind", choices=("ephemeral", "long-term"), default="ephemeral")
    p.add_argument("--rev-srv", help="revocation server URL (long-term keys)")
    p.add_argument("--out", default="client_key", help="output path prefix")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("request-ict", help="request a certification token")
    p.add_argument("--issuer-url", required=True, help="issuance service base URL")
    p.add_argument("--access-token", help="bearer token (skips the password grant)")
    p.add_argument("--op-url", help="provider base URL for the password grant")
    p.add_argument("--username")
    p.add_argument("--password")
    p.add_argument("--scopes", default="profile email e2e_auth_email")
    p.add_argument("--key", help="client private key PEM (default: fresh ephemeral key)")
    p.add_argument("--alg", default="es256", help="algorithm for a fresh key")
    p.add_argument("--key-kind", choices=("ephemeral", "long-term"), default="ephemeral")
    p.add_argument("--rev-srv")
    p.add_argument("--contexts", nargs="+", default=["email"])
    p.add_argument("--validity", type=int)
    p.add_argument("--reuse-pop", metavar="PATH",
                   help="cache the possession proof in PATH and reuse it (testing)")
    p.set_defaults(func=cmd_request_ict)

    p = sub.add_parser("verify", help="verify a certification token")
    p.add_argument("ict", help="token file, or - for stdin")
    p.add_argument("--context", required=True)
    p.add_argument("--policy", help="trust policy JSON file")
    p.add_argument("--jwks", action="append", metavar="ISSUER=URL",
                   help="explicit JWKS URL override (repeatable)")
    p.add_argument("--interactive", action="store_true",
                   help="ask about unknown issuers")
    p.add_argument("--save", action="store_true",
                   help="persist interactive decisions into the policy file")
    p.set_defaults(func=cmd_verify)

    for name, func in (
        ("demo-vc", cmd_demo_vc),
        ("demo-im", cmd_demo_im),
        ("demo-email", cmd_demo_email),
    ):
        p = sub.add_parser(name, help=f"run the {name[5:]} flow against a local stack")
        p.set_defaults(func=func)

    p = sub.add_parser("stub", help="run the mock provider")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9400)
    p.add_argument("--users", help="seed users JSON file")
    p.add_argument("--key", help="provider signing key PEM")
    p.add_argument("--key-id", default="op-signing-key")
    p.add_argument("--issuer-url", help="issuer URL to embed in tokens")
    p.add_argument("--snapshot", help="token-table snapshot file")
    p.set_defaults(func=cmd_stub)

    p = sub.add_parser("serve", help="run the issuance service")
    p.add_argument("--config", help=f"config JSON (default: ${CONFIG_ENV_VAR})")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="measure endpoint throughput")
    p.add_argument("--experiment", choices=("a", "b"), required=True)
    p.add_argument("--op-url", required=True, help="provider base URL")
    p.add_argument("--issuer-url", help="issuance service base URL (experiment b)")
    p.add_argument("--username", default="alice")
    p.add_argument("--password", default="wonderland")
    p.add_argument("--scopes", default="profile email e2e_auth_email")
    p.add_argument("--alg", default="es256")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--out", default="bench_report.json")
    p.add_argument("--csv", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
