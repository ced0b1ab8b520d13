"""Shared fixtures: one provider key pair and a live stub + issuer stack."""

from __future__ import annotations

from types import SimpleNamespace

import pytest
import requests

from ictauth.issuer import IssuerConfig, make_issuer_server
from ictauth.keys import ALG_RS256, generate_signing_keypair
from ictauth.opstub import OpStub, make_stub_server

OP_KEY_ID = "op-key-1"


@pytest.fixture(scope="session")
def op_key():
    return generate_signing_keypair(ALG_RS256)


@pytest.fixture(scope="session")
def live_stack(op_key):
    """Mock provider plus issuance service on real localhost ports.

    The issuance service signs with the provider's key and names the provider
    as issuer, so tokens verify against the provider's JWKS endpoint.
    """
    stub = OpStub(op_key=op_key, key_id=OP_KEY_ID)
    stub_server = make_stub_server(stub).start()
    config = IssuerConfig(
        issuer_url=stub.issuer_url,
        op_signing_key=op_key,
        key_id=OP_KEY_ID,
        userinfo_url=stub.issuer_url + "/userinfo",
    )
    issuer_server = make_issuer_server(config).start()
    stack = SimpleNamespace(
        stub=stub,
        stub_url=stub.issuer_url,
        issuer_url=issuer_server.base_url,
        config=config,
    )
    yield stack
    issuer_server.stop()
    stub_server.stop()


@pytest.fixture(scope="session")
def grant(live_stack):
    """Password-grant helper returning the /token response body."""

    def _grant(username="alice", password="wonderland",
               scopes="profile email e2e_auth_email"):
        response = requests.post(
            live_stack.stub_url + "/token",
            data={
                "grant_type": "password",
                "username": username,
                "password": password,
                "scope": scopes,
            },
            timeout=5.0,
        )
        assert response.status_code == 200, response.text
        return response.json()

    return _grant
