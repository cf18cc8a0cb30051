import math
import random

import pytest

from conftest import fresh_chain, make_key, mine, post_all

from authcoin import records as rec
from authcoin.chain import Chain
from authcoin.crypto import digest
from authcoin.errors import InvalidRecord, InvariantViolation, NotEligible, VarClosed
from authcoin.node import Node
from authcoin.protocol import evaluate, fulfil_challenge, issue_challenge
from authcoin.var import (
    SelectionParams,
    VAR_EXPIRY_BLOCKS,
    eligible,
    fulfil_var,
    generate_vars,
    var_statistics,
    var_status,
)


def test_selection_params_validated():
    SelectionParams(prefix_bits=16, prefix_pattern=65535, var_rate=1.0)
    with pytest.raises(InvariantViolation):
        SelectionParams(prefix_bits=0)
    with pytest.raises(InvariantViolation):
        SelectionParams(prefix_bits=2, prefix_pattern=4)
    with pytest.raises(InvariantViolation):
        SelectionParams(var_rate=0.0)


def test_generation_deterministic_from_block(provider):
    chain, _ = fresh_chain(provider, n_keys=10)
    params = SelectionParams(var_rate=0.3)
    a = generate_vars(chain, chain.tip, params)
    b = generate_vars(chain, chain.tip, params)
    assert a == b
    assert len(a) == math.ceil(0.3 * 10)
    assert all(v.created_at_block == 1 for v in a)
    targets = [v.target_key_id for v in a]
    assert len(set(targets)) == len(targets)  # no duplicate targets per batch
    with pytest.raises(InvariantViolation):  # only the tip generates
        generate_vars(chain, chain.blocks[0], params)


def test_generation_skips_invalid_keys(provider):
    chain = Chain.genesis(4, timestamp=0)
    _, live = make_key(provider, 400, expires=365)
    _, dying = make_key(provider, 401, expires=10)
    mine(chain, [live, dying], 1, provider)
    _, extra = make_key(provider, 402, created=11, expires=200)
    mine(chain, [extra], 11, provider)  # 'dying' is expired at ts=11
    vars_ = generate_vars(chain, chain.tip, SelectionParams(var_rate=1.0))
    assert {v.target_key_id for v in vars_} == {live.key_id, extra.key_id}


def test_eligibility_rules(provider):
    chain, keys = fresh_chain(provider, n_keys=6)
    params = SelectionParams(prefix_bits=1, prefix_pattern=0)
    # VARs generated for block 1 target keys registered in block 1, so no
    # key predates them; mine a second block and use its VARs instead
    _, late = make_key(provider, 500)
    mine(chain, [late], 2, provider)
    var = next(
        v for v in generate_vars(chain, chain.tip, SelectionParams(var_rate=1.0))
        if v.target_key_id != late.key_id
    )
    assert var.created_at_block == 2
    target = var.target_key_id
    # self-fulfilment always barred
    target_record = chain.key_records[target][0]
    assert not eligible(var, target_record, chain, params)
    # a key registered at the VAR's creation height or later is never eligible
    assert not eligible(var, late, chain, params)
    # hash-prefix rule matches an independent recomputation
    for _, record in keys:
        if record.key_id == target:
            continue
        combined = rec.canonical_serialize(var) + rec.canonical_serialize(record)
        expected = (digest(combined)[0] >> 7) == 0
        assert eligible(var, record, chain, params) == expected


def test_unregistered_key_not_eligible(provider):
    chain, _ = fresh_chain(provider, n_keys=3)
    params = SelectionParams()
    var = generate_vars(chain, chain.tip, params)[0]
    _, stranger = make_key(provider, 600)
    assert not eligible(var, stranger, chain, params)


def find_eligible_claimer(chain, var, keys, params):
    for key, record in keys:
        if record.key_id != var.target_key_id and eligible(var, record, chain, params):
            return key, record
    return None


def test_fulfil_var_lifecycle(provider):
    params = SelectionParams(prefix_bits=1, prefix_pattern=0, var_rate=1.0)
    rng = random.Random(0)
    claimer = var = None
    for attempt in range(10):  # try seeds until an eligible claimer exists
        chain, keys = fresh_chain(provider, n_keys=6, seed0=700 + attempt * 10)
        mine(chain, [make_key(provider, 800 + attempt)[1]], 2, provider)
        key_ids = {r.key_id for _, r in keys}
        for candidate in generate_vars(chain, chain.tip, params):
            if candidate.target_key_id not in key_ids:
                continue
            claimer = find_eligible_claimer(chain, candidate, keys, params)
            if claimer is not None:
                var = candidate
                break
        if claimer is not None:
            break
    assert claimer is not None and var is not None
    claimer_key, claimer_record = claimer
    target_key, target_record = next(
        (k, r) for k, r in keys if r.key_id == var.target_key_id
    )
    # the target itself may not claim
    with pytest.raises(NotEligible):
        fulfil_var(var, var.target_key_id, chain, params, 3,
                   provider=provider, rng=rng, min_bits=128)
    session = fulfil_var(var, claimer_record.key_id, chain, params, 3,
                         provider=provider, rng=rng, min_bits=128)
    assert session.var_ref == var.var_id
    for direction in ("forward", "backward"):
        challenge = issue_challenge(session, direction, rng, 3)
        actor = target_key if direction == "forward" else claimer_key
        verifier = claimer_key if direction == "forward" else target_key
        response = fulfil_challenge(actor, challenge, "correct", provider=provider, now=3)
        verdict = "accept" if session.kind == "authentication" else None
        evaluate(session, direction, response, 3, verifier_keys=verifier, verdict=verdict)
    assert session.state == "complete"
    mine(chain, [var] + post_all(session), 3, provider)
    assert var_status(chain, var) == "fulfilled"
    with pytest.raises(VarClosed):
        fulfil_var(var, claimer_record.key_id, chain, params, 4,
                   provider=provider, rng=rng, min_bits=128)
    stats = var_statistics(chain, 4)
    assert stats.fulfilled == 1
    assert stats.per_key_frequency[var.target_key_id] >= 1


def test_var_expires_after_window(provider):
    chain, keys = fresh_chain(provider, n_keys=4)
    params = SelectionParams(var_rate=0.5)
    var = generate_vars(chain, chain.tip, params)[0]
    mine(chain, [var], 2, provider)
    for i in range(VAR_EXPIRY_BLOCKS + 1):
        _, record = make_key(provider, 900 + i, created=3 + i, expires=300)
        mine(chain, [record], 3 + i, provider)
    assert var_status(chain, var) == "expired"


def test_node_rejects_manual_vars(provider):
    chain, keys = fresh_chain(provider, n_keys=2)
    node = Node(chain, provider, SelectionParams())
    forged = rec.seal(
        rec.VARecord(b"\x00" * 32, keys[0][1].key_id, "validation", 1, "open")
    )
    with pytest.raises(InvalidRecord, match="manually"):
        node.submit(forged)


def test_node_mines_generated_vars_into_next_block(provider):
    chain = Chain.genesis(4, timestamp=0)
    node = Node(chain, provider, SelectionParams(var_rate=1.0))
    for i in range(4):
        node.submit(make_key(provider, 950 + i)[1])
    node.mine(1)
    assert len(node.generated_vars) == 4
    assert not chain.var_records  # generated, not yet stored
    node.submit(make_key(provider, 960)[1])
    node.mine(2)
    assert len(chain.var_records) == 4  # carried into the next block
