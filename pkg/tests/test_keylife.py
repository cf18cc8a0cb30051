import pytest

from conftest import fresh_chain, make_key, mine, run_full_session, post_all

from authcoin import records as rec
from authcoin.chain import Chain
from authcoin.errors import NotAuthorized, UnknownKey, UnknownSignature
from authcoin.keylife import (
    LookupQuery,
    formal_validate,
    history,
    key_status,
    lookup_key,
    revoke_key,
    revoke_signature,
    signature_active,
)


def test_formal_validate_all_pass(provider):
    chain, keys = fresh_chain(provider, n_keys=1)
    result = formal_validate(keys[0][1].key_id, chain, now=2, min_bits=128)
    assert result.passed
    assert all(result.checks.values())


def test_formal_validate_unknown_key(provider):
    chain, _ = fresh_chain(provider, n_keys=1)
    result = formal_validate(b"\xab" * 32, chain, now=2, min_bits=128)
    assert not result.passed
    assert not any(result.checks.values())


def test_formal_validate_length(provider):
    chain, keys = fresh_chain(provider, n_keys=1)
    result = formal_validate(keys[0][1].key_id, chain, now=2, min_bits=4096)
    assert not result.passed
    assert not result.checks["length_sufficient"]
    assert result.checks["not_expired"] and result.checks["not_revoked"]


def test_formal_validate_expiry(provider):
    chain, keys = fresh_chain(provider, n_keys=1)
    result = formal_validate(keys[0][1].key_id, chain, now=365, min_bits=128)
    assert not result.checks["not_expired"]


def test_key_status_transitions(provider):
    chain, keys = fresh_chain(provider, n_keys=1)
    key, record = keys[0]
    assert key_status(chain, record.key_id, 2) == "valid"
    assert key_status(chain, record.key_id, 364) == "valid"
    assert key_status(chain, record.key_id, 365) == "expired"
    assert key_status(chain, b"\x01" * 32, 2) == "unknown"
    revocation = revoke_key(chain, record.key_id, key, 10, provider)
    mine(chain, [revocation], 10, provider)
    assert key_status(chain, record.key_id, 9) == "valid"
    # monotone after revocation: revoked at every later time, even past expiry
    for now in (10, 100, 365, 1000):
        assert key_status(chain, record.key_id, now) == "revoked"


def test_revoke_key_requires_holder(provider):
    chain, keys = fresh_chain(provider, n_keys=2)
    with pytest.raises(NotAuthorized):
        revoke_key(chain, keys[0][1].key_id, keys[1][0], 5, provider)
    with pytest.raises(UnknownKey):
        revoke_key(chain, b"\x02" * 32, keys[0][0], 5, provider)


def test_revoke_signature_lifecycle(provider):
    chain, keys = fresh_chain(provider, n_keys=2)
    session = run_full_session(chain, provider, keys[0], keys[1])
    mine(chain, post_all(session), 2, provider)
    signature = session.directions["forward"].signature
    assert signature_active(chain, signature, 3)
    with pytest.raises(NotAuthorized):  # only the signer may revoke
        revoke_signature(chain, signature.signature_id, keys[1][1].key_id, keys[1][0], 4, provider)
    revocation = revoke_signature(
        chain, signature.signature_id, keys[0][1].key_id, keys[0][0], 4, provider
    )
    mine(chain, [revocation], 4, provider)
    assert not signature_active(chain, signature, 4)
    assert signature_active(chain, signature, 3)
    with pytest.raises(UnknownSignature):
        revoke_signature(chain, b"\x03" * 32, keys[0][1].key_id, keys[0][0], 4, provider)


def test_lookup_exact_match_and_status(provider):
    chain, keys = fresh_chain(provider, n_keys=3)
    record = keys[1][1]
    by_email = lookup_key(chain, LookupQuery(email=record.owner.identifier), now=2)
    assert [r.key_id for r, _ in by_email] == [record.key_id]
    assert by_email[0][1] == "valid"
    by_id = lookup_key(chain, LookupQuery(key_id=record.key_id), now=2)
    assert [r.key_id for r, _ in by_id] == [record.key_id]
    assert lookup_key(chain, LookupQuery(email="nobody@example.org"), now=2) == []
    with pytest.raises(ValueError):
        lookup_key(chain, LookupQuery(), now=2)


def test_lookup_window_excludes_old_and_future(provider):
    chain = Chain.genesis(4, timestamp=0)
    _, old = make_key(provider, 200, email="old@example.org")
    mine(chain, [old], 10, provider)
    _, fresh = make_key(provider, 201, email="fresh@example.org", created=400, expires=700)
    mine(chain, [fresh], 400, provider)
    # at day 500, the day-10 registration is outside the 365-day window
    assert lookup_key(chain, LookupQuery(email="old@example.org"), now=500) == []
    assert len(lookup_key(chain, LookupQuery(email="fresh@example.org"), now=500)) == 1
    # at day 5, the day-10 block is in the future and must not appear
    assert lookup_key(chain, LookupQuery(email="old@example.org"), now=5) == []


def test_history_covers_lifecycle(provider):
    chain, keys = fresh_chain(provider, n_keys=2)
    session = run_full_session(chain, provider, keys[0], keys[1])
    mine(chain, post_all(session), 2, provider)
    key, record = keys[0]
    revocation = revoke_key(chain, record.key_id, key, 3, provider)
    mine(chain, [revocation], 3, provider)
    events = history(chain, record.key_id)
    kinds = {type(r).__name__ for r, _ in events}
    assert {"PublicKeyRecord", "ChallengeRecord", "VAResultRecord",
            "SignatureRecord", "RevocationRecord"} <= kinds
    heights = [h for _, h in events]
    assert heights == sorted(heights)
