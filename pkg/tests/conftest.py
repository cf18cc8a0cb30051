"""Shared test helpers: tiny keys, quick chains, full session drivers."""

import random

import pytest

from authcoin import records as rec
from authcoin.chain import Chain, mine_block
from authcoin.crypto import ToyProvider
from authcoin.protocol import (
    ChallengeSpec,
    evaluate,
    fulfil_challenge,
    issue_challenge,
    post_session_records,
    start_session,
)

TEST_BITS = 128


@pytest.fixture
def provider():
    return ToyProvider()


def make_key(provider, seed, bits=TEST_BITS, email=None, name=None, created=0, expires=365):
    """A toy key pair plus its sealed registration record."""
    key = provider.generate_keypair(seed, bits)
    owner = rec.EntityDescriptor(
        display_name=name or f"User {seed}",
        identifier=email or f"user{seed}@example.org",
        identifier_kind="email",
    )
    record = rec.seal(
        rec.PublicKeyRecord(
            key_id=b"\x00" * 32,
            owner=owner,
            public_bytes=key.public_bytes,
            key_length_bits=key.key_length_bits,
            created_at=created,
            expires_at=expires,
        )
    )
    return key, record


def mine(chain, records, timestamp, provider):
    block = mine_block(chain, records, timestamp, provider)
    chain._append_unchecked(block)
    return block


def fresh_chain(provider, n_keys=2, difficulty=4, seed0=100, bits=TEST_BITS):
    """Genesis chain with n_keys registered at height 1 (timestamp 1)."""
    chain = Chain.genesis(difficulty, timestamp=0)
    keys = []
    records = []
    for i in range(n_keys):
        key, record = make_key(provider, seed0 + i, bits=bits)
        keys.append((key, record))
        records.append(record)
    mine(chain, records, 1, provider)
    return chain, keys


def run_full_session(
    chain,
    provider,
    initiator,
    responder,
    *,
    kind="validation",
    visibility="open",
    verdict=None,
    seed=0,
    now=2,
    min_bits=TEST_BITS,
    fulfil_outcome="correct",
):
    """Drive both directions of a session; returns the session object."""
    initiator_key, initiator_record = initiator
    responder_key, responder_record = responder
    rng = random.Random(seed)
    session = start_session(
        chain,
        initiator_record.key_id,
        responder_record.key_id,
        ChallengeSpec(kind=kind, visibility=visibility),
        now,
        provider=provider,
        rng=rng,
        min_bits=min_bits,
    )
    for direction in ("forward", "backward"):
        challenge = issue_challenge(session, direction, rng, now)
        target_key = responder_key if direction == "forward" else initiator_key
        verifier_key = initiator_key if direction == "forward" else responder_key
        response = (
            None
            if fulfil_outcome == "none"
            else fulfil_challenge(
                target_key,
                challenge,
                fulfil_outcome,
                provider=provider,
                opaque_secret=session.opaque_secret,
                now=now,
            )
        )
        evaluate(session, direction, response, now, verifier_keys=verifier_key, verdict=verdict)
        if session.state == "failed":
            break
    return session


def post_all(session):
    return post_session_records(session, "initiator") + post_session_records(
        session, "responder"
    )
