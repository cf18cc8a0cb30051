import pytest

from conftest import fresh_chain, mine, run_full_session, post_all

from authcoin import records as rec
from authcoin.errors import InvalidConfig, UnknownKey
from authcoin.keylife import signature_active
from authcoin.sim import (
    CertObservation,
    Metrics,
    ScenarioConfig,
    World,
    config_to_text,
    exposure_set,
    monitor_certificates,
    parse_config,
    reachability_report,
    run_scenario,
    suspicion_closure,
)

SMALL = dict(min_bits=128, difficulty=5)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        ScenarioConfig(honest_count=-1).validate()
    with pytest.raises(InvalidConfig):
        ScenarioConfig(dead_fraction=1.5).validate()
    with pytest.raises(InvalidConfig):
        ScenarioConfig(blocks_to_run=0).validate()
    with pytest.raises(InvalidConfig):
        ScenarioConfig(key_lifetime_days=500).validate()
    ScenarioConfig().validate()


def test_config_file_roundtrip():
    config = ScenarioConfig(seed=9, honest_count=3, sybil_count=2, dead_fraction=0.5,
                            vantage_points=("eu", "us"))
    assert parse_config(config_to_text(config)) == config
    with pytest.raises(InvalidConfig):
        parse_config("nonsense_key=1")
    with pytest.raises(InvalidConfig):
        parse_config("no equals sign here")
    parsed = parse_config("seed=4 # trailing comment\n\n# full-line comment\n")
    assert parsed.seed == 4


def test_run_scenario_deterministic():
    config = ScenarioConfig(seed=5, honest_count=5, sybil_count=2, blocks_to_run=8, **SMALL)
    m1, c1 = run_scenario(config)
    m2, c2 = run_scenario(config)
    assert c1.tip.block_hash == c2.tip.block_hash
    assert m1 == m2
    m3, c3 = run_scenario(ScenarioConfig(seed=6, honest_count=5, sybil_count=2,
                                         blocks_to_run=8, **SMALL))
    assert c3.tip.block_hash != c1.tip.block_hash


def test_no_sybils_no_exposure():
    config = ScenarioConfig(seed=1, honest_count=8, sybil_count=0, blocks_to_run=12, **SMALL)
    metrics, _ = run_scenario(config)
    assert metrics.sybils_exposed == 0
    assert metrics.sybils_exposed_fraction == 0.0
    assert metrics.honest_falsely_flagged == 0
    assert metrics.signatures_validation + metrics.signatures_authentication > 0


def test_step_mines_at_most_one_block():
    world = World(ScenarioConfig(seed=2, honest_count=3, blocks_to_run=5, **SMALL))
    world.step()
    assert world.chain.height == 1
    world.step()
    assert world.chain.height <= 2


def test_dead_accounts_yield_no_response_failures():
    config = ScenarioConfig(seed=3, honest_count=10, dead_fraction=0.4,
                            blocks_to_run=30, deadline_days=5, var_rate=0.5, **SMALL)
    metrics, chain = run_scenario(config)
    reasons = {
        r.failure_reason
        for r, _, _ in chain.iter_records()
        if isinstance(r, rec.VAResultRecord) and r.outcome == "failure"
    }
    assert "no_response" in reasons
    assert metrics.dead_addresses_detected > 0
    assert metrics.honest_falsely_flagged == 0


def test_exposure_is_auditable_from_chain():
    config = ScenarioConfig(seed=4, honest_count=10, sybil_count=4, sybil_collectives=2,
                            blocks_to_run=25, var_rate=0.3, **SMALL)
    metrics, chain = run_scenario(config)
    world = World(config)
    sybil_keys = world.sybil_key_ids()
    recomputed = exposure_set(chain) & sybil_keys
    assert len(recomputed) == metrics.sybils_exposed
    assert metrics.sybils_exposed <= len(sybil_keys)


def test_isolated_collective_stays_unexposed():
    """Sybils who only interact among themselves are never exposed: no
    honest party ever judges them."""
    world = World(ScenarioConfig(seed=7, honest_count=6, sybil_count=3,
                                 sybil_collectives=1, blocks_to_run=10, **SMALL))
    # sybils only claim VARs inside their collective; suppress honest
    # claims of sybil-targeted VARs to model zero outside interaction
    original = world._may_claim

    def gated(actor, target):
        if target.role == "sybil" and actor.role != "sybil":
            return False
        return original(actor, target)

    world._may_claim = gated
    for _ in range(10):
        world.step()
    world.flush()
    assert not (exposure_set(world.chain) & world.sybil_key_ids())


def test_suspicion_closure_matches_brute_scan(provider):
    chain, keys = fresh_chain(provider, n_keys=5)
    exposed = keys[0]
    endorsers = keys[1:4]
    for i, endorser in enumerate(endorsers):
        session = run_full_session(chain, provider, endorser, exposed,
                                   kind="authentication", verdict="accept", seed=10 + i)
        mine(chain, post_all(session), 2, provider)
    questioned = suspicion_closure(chain, exposed[1].key_id, now=3)
    brute = {
        r.signer_key_id
        for r, _, _ in chain.iter_records()
        if isinstance(r, rec.SignatureRecord)
        and r.signee_key_id == exposed[1].key_id
        and signature_active(chain, r, 3)
        and r.signer_key_id != exposed[1].key_id
    }
    assert questioned == brute == {record.key_id for _, record in endorsers}
    # a key with no endorsers has an empty closure
    assert suspicion_closure(chain, keys[4][1].key_id, now=3) == set()
    with pytest.raises(UnknownKey):
        suspicion_closure(chain, b"\x00" * 32, now=3)


def test_monitor_certificates_clean_and_divergent():
    key_a, key_b = b"\xaa" * 32, b"\xbb" * 32
    clean = [
        CertObservation(v, "example.org", key_a, 5) for v in ("eu", "us", "ap")
    ]
    assert not monitor_certificates(clean)["example.org"].mismatch

    divergent = clean[:2] + [CertObservation("ap", "example.org", key_b, 5)]
    report = monitor_certificates(divergent)["example.org"]
    assert report.mismatch
    day, majority, minority = report.windows[0]
    assert (day, majority, minority) == (5, key_a, ["ap"])

    # different days never compared against each other
    split_days = [
        CertObservation("eu", "example.org", key_a, 5),
        CertObservation("us", "example.org", key_b, 6),
    ]
    assert not monitor_certificates(split_days)["example.org"].mismatch

    # one vantage point alone cannot flag anything
    solo = [
        CertObservation("eu", "example.org", key_a, 5),
        CertObservation("eu", "example.org", key_b, 5),
    ]
    assert not monitor_certificates(solo)["example.org"].mismatch


def test_reachability_report_rules(provider):
    chain, keys = fresh_chain(provider, n_keys=4)
    alive, peer, dead, untouched = keys
    session = run_full_session(chain, provider, peer, alive)
    mine(chain, post_all(session), 2, provider)

    def failure(target, verifier, day, salt):
        challenge = rec.seal(rec.ChallengeRecord(
            b"\x00" * 32, bytes([salt]) * 32, None, "validation", "open",
            verifier[1].key_id, target[1].key_id, b"x", day, verifier[1].key_id,
        ))
        result = rec.seal(rec.VAResultRecord(
            b"\x00" * 32, bytes([salt]) * 32, rec.challenge_core_id(challenge),
            verifier[1].key_id, target[1].key_id, "failure", "no_response", day,
        ))
        return [challenge, result]

    mine(chain, failure(dead, alive, 3, 1) + failure(dead, alive, 4, 2), 4, provider)
    report = reachability_report(chain, now=5)
    assert report[alive[1].owner.identifier] == "alive"
    assert report[dead[1].owner.identifier] == "dead"
    assert report[untouched[1].owner.identifier] == "unknown"


def test_metrics_lines_format():
    text = Metrics(sybils_exposed=3, sybils_exposed_fraction=0.75).to_lines()
    lines = dict(line.split("=") for line in text.strip().splitlines())
    assert lines["sybils_exposed"] == "3"
    assert lines["sybils_exposed_fraction"] == "0.750000"
    assert set(lines) == {f.name for f in Metrics.__dataclass_fields__.values()}
