"""Deterministic multi-actor scenario engine.

One tick = one logical day = at most one mined block.  The engine wires
the protocol, VAR, and chain modules together with an actor model:
honest users, sybil collectives (mutually endorsing fake identities that
cannot survive an authentication challenge from outside), unreliable
verifiers (who approve without evidence with some probability), and dead
accounts that never answer anything.

Everything is driven by a single seeded RNG, so a config fully
determines the resulting chain and metrics.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

from . import records as rec
from .chain import Chain
from .crypto import KeyMaterial, ToyProvider
from .errors import FormalValidationFailed, InvalidConfig, UnknownKey
from .keylife import signature_active
from .node import Node
from .protocol import (
    ChallengeSpec,
    VASession,
    detect_posting_mismatch,
    evaluate,
    fulfil_challenge,
    issue_challenge,
    post_session_records,
    start_session,
)
from .var import SelectionParams, VAR_EXPIRY_BLOCKS, eligible

EXPOSURE_REASONS = ("unsatisfactory", "bad_signature")


@dataclass
class ScenarioConfig:
    seed: int = 0
    honest_count: int = 10
    sybil_count: int = 0
    sybil_collectives: int = 1
    unreliable_count: int = 0
    dead_fraction: float = 0.0
    blocks_to_run: int = 20
    difficulty: int = 8
    prefix_bits: int = 1
    prefix_pattern: int = 0
    var_rate: float = 0.05
    deadline_days: int = 14
    min_bits: int = 256
    key_lifetime_days: int = 365
    unreliable_diligence: float = 0.2
    vantage_points: tuple = ()

    def validate(self):
        if self.honest_count < 0 or self.sybil_count < 0 or self.unreliable_count < 0:
            raise InvalidConfig("actor counts must be non-negative")
        if not 0.0 <= self.dead_fraction <= 1.0:
            raise InvalidConfig("dead_fraction must be in [0, 1]")
        if self.blocks_to_run < 1:
            raise InvalidConfig("blocks_to_run must be positive")
        if self.sybil_collectives < 1:
            raise InvalidConfig("sybil_collectives must be positive")
        if self.difficulty < 1:
            raise InvalidConfig("difficulty must be positive")
        if not 0 < self.key_lifetime_days <= rec.MAX_LIFETIME_DAYS:
            raise InvalidConfig("key_lifetime_days must be in (0, 365]")
        if not 0.0 <= self.unreliable_diligence <= 1.0:
            raise InvalidConfig("unreliable_diligence must be in [0, 1]")


_CONFIG_FIELDS = {f.name: f.type for f in dc_fields(ScenarioConfig)}


def parse_config(text: str) -> ScenarioConfig:
    """Flat key=value scenario file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_FIELDS:
            raise InvalidConfig(f"line {lineno}: unknown key {key!r}")
        if key == "vantage_points":
            values[key] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key in ("dead_fraction", "var_rate", "unreliable_diligence"):
            values[key] = float(value)
        else:
            values[key] = int(value)
    config = ScenarioConfig(**values)
    config.validate()
    return config


def config_to_text(config: ScenarioConfig) -> str:
    lines = []
    for f in dc_fields(ScenarioConfig):
        value = getattr(config, f.name)
        if f.name == "vantage_points":
            value = ",".join(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


@dataclass
class ActorProfile:
    actor_id: str
    role: str  # honest | sybil | unreliable_verifier
    collective_id: Optional[int]
    account_state: str  # reachable | dead
    can_authenticate_as_claimed: bool
    verification_diligence: float
    key: KeyMaterial = None
    key_record: rec.PublicKeyRecord = None


@dataclass
class Metrics:
    sybils_exposed: int = 0
    sybils_exposed_fraction: float = 0.0
    honest_falsely_flagged: int = 0
    questioned_keys: int = 0
    signatures_validation: int = 0
    signatures_authentication: int = 0
    vars_generated: int = 0
    vars_fulfilled: int = 0
    vars_failed: int = 0
    vars_expired: int = 0
    vars_open: int = 0
    dead_addresses_detected: int = 0
    mismatches_detected: int = 0

    def to_lines(self) -> str:
        out = []
        for f in dc_fields(Metrics):
            value = getattr(self, f.name)
            if isinstance(value, float):
                value = f"{value:.6f}"
            out.append(f"{f.name}={value}")
        return "\n".join(out) + "\n"


@dataclass
class CertObservation:
    vantage_id: str
    identifier: str
    observed_key_id: bytes
    observed_at: int


@dataclass
class CertMismatch:
    identifier: str
    mismatch: bool
    # (day, majority_key_id, minority vantage ids) per divergent window
    windows: list = field(default_factory=list)


@dataclass
class _OpenVar:
    var: rec.VARecord
    claimed: bool = False


@dataclass
class _PendingDirection:
    session: VASession
    direction: str
    verifier: ActorProfile
    target: ActorProfile
    lazy: bool
    deadline: int


class World:
    """Mutable scenario state; step() advances one tick."""

    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.rng = random.Random(config.seed)
        self.provider = ToyProvider()
        self.params = SelectionParams(config.prefix_bits, config.prefix_pattern, config.var_rate)
        self.chain = Chain.genesis(config.difficulty, timestamp=0)
        self.node = Node(self.chain, self.provider, self.params)
        self.now = 0
        self.actors: dict[str, ActorProfile] = {}
        self.actor_by_key: dict[bytes, ActorProfile] = {}
        self.open_vars: list[_OpenVar] = []
        self.waiting: list[_PendingDirection] = []
        self.exposed_sybil_keys: set[bytes] = set()
        self.honest_flagged: set[bytes] = set()
        self._vars_seen = 0
        self._ring_done = False
        self._populate()

    # -- setup ---------------------------------------------------------

    def _populate(self):
        cfg = self.config
        specs = []
        for i in range(cfg.honest_count):
            specs.append((f"honest-{i:03d}", "honest", None))
        for i in range(cfg.sybil_count):
            specs.append((f"sybil-{i:03d}", "sybil", i % cfg.sybil_collectives))
        for i in range(cfg.unreliable_count):
            specs.append((f"lazy-{i:03d}", "unreliable_verifier", None))
        honest_ids = [s[0] for s in specs if s[1] == "honest"]
        dead_count = round(cfg.dead_fraction * len(honest_ids))
        dead_ids = set(self.rng.sample(honest_ids, dead_count)) if dead_count else set()
        for actor_id, role, collective in specs:
            actor = ActorProfile(
                actor_id=actor_id,
                role=role,
                collective_id=collective,
                account_state="dead" if actor_id in dead_ids else "reachable",
                can_authenticate_as_claimed=(role != "sybil"),
                verification_diligence=(
                    cfg.unreliable_diligence if role == "unreliable_verifier" else 1.0
                ),
            )
            actor.key = self.provider.generate_keypair(self.rng.getrandbits(63), cfg.min_bits)
            owner = rec.EntityDescriptor(
                display_name=actor_id.replace("-", " ").title(),
                identifier=f"{actor_id}@example.org",
                identifier_kind="email",
            )
            actor.key_record = rec.seal(
                rec.PublicKeyRecord(
                    key_id=b"\x00" * 32,
                    owner=owner,
                    public_bytes=actor.key.public_bytes,
                    key_length_bits=actor.key.key_length_bits,
                    created_at=0,
                    expires_at=cfg.key_lifetime_days,
                )
            )
            self.actors[actor_id] = actor
            self.actor_by_key[actor.key_record.key_id] = actor
            self.node.submit(actor.key_record)

    # -- actor behavior ------------------------------------------------

    def _verdict(self, judge: ActorProfile, judged: ActorProfile, lazy: bool) -> str:
        if lazy or judge.role == "sybil":
            return "accept"
        return "accept" if judged.can_authenticate_as_claimed else "reject"

    def _may_claim(self, actor: ActorProfile, target: ActorProfile) -> bool:
        if actor.account_state == "dead":
            return False
        if actor.role == "sybil":
            # sybils shield their own collective and never expose
            # themselves to a backward authentication by outsiders
            return target.role == "sybil" and actor.collective_id == target.collective_id
        return True

    def _record_exposure(self, judged: ActorProfile, kind: str, reason: str):
        if kind != "authentication" or reason not in EXPOSURE_REASONS:
            return
        if judged.role == "sybil":
            self.exposed_sybil_keys.add(judged.key_record.key_id)
        elif judged.role == "honest" and judged.account_state == "reachable":
            self.honest_flagged.add(judged.key_record.key_id)

    # -- session machinery ---------------------------------------------

    def _run_direction(
        self, session: VASession, direction: str, verifier: ActorProfile, target: ActorProfile, lazy: bool
    ) -> bool:
        """Issue, fulfil, and evaluate one direction.  Returns True when
        the direction completed (successfully or not) this tick; False
        when it waits for a deadline."""
        challenge = issue_challenge(session, direction, self.rng, self.now)
        if target.account_state == "dead":
            self.waiting.append(
                _PendingDirection(
                    session, direction, verifier, target, lazy, self.now + self.config.deadline_days
                )
            )
            return False
        response = fulfil_challenge(
            target.key, challenge, "correct", provider=self.provider, now=self.now
        )
        verdict = self._verdict(verifier, target, lazy)
        result, _ = evaluate(
            session, direction, response, self.now, verifier_keys=verifier.key, verdict=verdict
        )
        if result.outcome == "failure":
            self._record_exposure(target, session.kind, result.failure_reason)
        return True

    def _post_session(self, session: VASession, initiator: ActorProfile, responder: ActorProfile):
        if initiator.account_state != "dead":
            self.node.submit_many(post_session_records(session, "initiator"))
        if responder.account_state != "dead":
            self.node.submit_many(post_session_records(session, "responder"))

    def _run_session(
        self, verifier: ActorProfile, target: ActorProfile, kind: str, var_ref: Optional[bytes]
    ) -> Optional[VASession]:
        try:
            session = start_session(
                self.chain,
                verifier.key_record.key_id,
                target.key_record.key_id,
                ChallengeSpec(kind=kind, deadline_days=self.config.deadline_days),
                self.now,
                provider=self.provider,
                rng=self.rng,
                min_bits=self.config.min_bits,
                var_ref=var_ref,
            )
        except FormalValidationFailed:
            return None
        lazy = (
            verifier.role == "unreliable_verifier"
            and self.rng.random() < 1.0 - verifier.verification_diligence
        )
        if not self._run_direction(session, "forward", verifier, target, lazy):
            return session  # waiting on a dead account's deadline
        if session.state == "forward_done":
            if self._run_direction(session, "backward", target, verifier, lazy=False):
                self._post_session(session, verifier, target)
        else:
            self._post_session(session, verifier, target)
        return session

    def _resolve_deadlines(self):
        still = []
        for item in self.waiting:
            if self.now <= item.deadline:
                still.append(item)
                continue
            if item.lazy:
                self._fabricate_success(item)
            else:
                result, _ = evaluate(
                    item.session,
                    item.direction,
                    None,
                    self.now,
                    verifier_keys=item.verifier.key,
                )
                self._record_exposure(item.target, item.session.kind, result.failure_reason)
            self._post_session(item.session, item.verifier, item.target)
        self.waiting = still

    def _fabricate_success(self, item: _PendingDirection):
        """An unreliable verifier documents success without any evidence:
        a success result plus a signature, never a response (it cannot
        forge the target's signature)."""
        session = item.session
        ds = session.directions[item.direction]
        result = rec.seal(
            rec.VAResultRecord(
                result_id=b"\x00" * 32,
                session_id=session.session_id,
                challenge_id=rec.challenge_core_id(ds.challenge),
                verifier_key_id=ds.verifier_key_id,
                target_key_id=ds.target_key_id,
                outcome="success",
                failure_reason=None,
                created_at=self.now,
            )
        )
        signer = session.key_record(ds.verifier_key_id)
        signee = session.key_record(ds.target_key_id)
        expires_at = min(self.now + rec.MAX_LIFETIME_DAYS, signer.expires_at, signee.expires_at)
        payload = rec.signature_signing_payload(
            ds.verifier_key_id, ds.target_key_id, session.kind, result.result_id, self.now, expires_at
        )
        signature = rec.seal(
            rec.SignatureRecord(
                signature_id=b"\x00" * 32,
                signer_key_id=ds.verifier_key_id,
                signee_key_id=ds.target_key_id,
                kind=session.kind,
                result_ref=result.result_id,
                created_at=self.now,
                expires_at=expires_at,
                signer_signature=self.provider.sign(item.verifier.key, payload),
            )
        )
        ds.result = result
        ds.signature = signature
        session.state = "failed"  # session cannot genuinely continue

    def _endorse_collectives(self):
        """Ring of bidirectional authentications inside each collective,
        producing the mutual signatures a sybil group relies on."""
        by_collective: dict[int, list[ActorProfile]] = {}
        for actor in self.actors.values():
            if actor.role == "sybil":
                by_collective.setdefault(actor.collective_id, []).append(actor)
        for members in by_collective.values():
            if len(members) < 2:
                continue
            for i, member in enumerate(members):
                peer = members[(i + 1) % len(members)]
                if member is peer:
                    continue
                self._run_session(member, peer, "authentication", None)

    # -- main loop -----------------------------------------------------

    def step(self):
        self.now += 1
        self._resolve_deadlines()
        block = self.node.mine(self.now)
        if block is not None:
            new_vars = self.node.generated_vars[self._vars_seen :]
            self._vars_seen = len(self.node.generated_vars)
            self.open_vars.extend(_OpenVar(v) for v in new_vars)
        if not self._ring_done and self.chain.height >= 1 and self.chain.key_records:
            self._endorse_collectives()
            self._ring_done = True
        for entry in self.open_vars:
            if entry.claimed:
                continue
            target = self.actor_by_key.get(entry.var.target_key_id)
            if target is None:
                continue
            claimers = [
                actor
                for actor in self.actors.values()
                if self._may_claim(actor, target)
                and eligible(entry.var, actor.key_record, self.chain, self.params)
            ]
            if not claimers:
                continue
            claimer = self.rng.choice(claimers)
            kind = "authentication" if entry.var.kind in ("authentication", "both") else "validation"
            entry.claimed = True
            self._run_session(claimer, target, kind, entry.var.var_id)
        self.open_vars = [
            e
            for e in self.open_vars
            if not e.claimed and self.chain.height - e.var.created_at_block <= VAR_EXPIRY_BLOCKS
        ]

    def flush(self):
        """Mine any leftover records so metrics derived from the chain
        see the final tick's sessions."""
        self.node.mine(self.now)

    # -- reporting -----------------------------------------------------

    def sybil_key_ids(self) -> set[bytes]:
        return {
            a.key_record.key_id for a in self.actors.values() if a.role == "sybil"
        }

    def metrics(self) -> Metrics:
        return compute_metrics(self)


def exposure_set(chain: Chain) -> set[bytes]:
    """Keys with an on-chain authentication failure that indicts the key
    holder's identity (as opposed to mere unreachability)."""
    out = set()
    for record, _, _ in chain.iter_records():
        if not isinstance(record, rec.VAResultRecord) or record.outcome != "failure":
            continue
        if record.failure_reason not in EXPOSURE_REASONS:
            continue
        entry = chain.challenge_records.get(record.challenge_id)
        if entry is not None and entry[0].kind == "authentication":
            out.add(record.target_key_id)
    return out


def _var_session_map(chain: Chain) -> dict[bytes, set[bytes]]:
    out: dict[bytes, set[bytes]] = {}
    for challenge, _ in chain.challenge_records.values():
        if challenge.var_ref is not None:
            out.setdefault(challenge.var_ref, set()).add(challenge.session_id)
    return out


def _var_counts(chain: Chain) -> dict[str, int]:
    sessions = _var_session_map(chain)
    counts = {"open": 0, "fulfilled": 0, "failed": 0, "expired": 0}
    for var, _ in chain.var_records.values():
        status = None
        any_failed = False
        for session_id in sessions.get(var.var_id, ()):
            results = [
                r
                for r, _ in chain.session_records.get(session_id, [])
                if isinstance(r, rec.VAResultRecord)
            ]
            if sum(1 for r in results if r.outcome == "success") >= 2:
                status = "fulfilled"
                break
            if any(r.outcome == "failure" for r in results):
                any_failed = True
        if status is None:
            if any_failed:
                status = "failed"
            elif chain.height - var.created_at_block > VAR_EXPIRY_BLOCKS:
                status = "expired"
            else:
                status = "open"
        counts[status] += 1
    return counts


def compute_metrics(world: World) -> Metrics:
    """All counts are recomputed from the chain so the report is
    auditable offline; world bookkeeping is only used to know who is a
    sybil or honest in the first place."""
    chain = world.chain
    m = Metrics()
    sybil_keys = world.sybil_key_ids()
    honest_reachable = {
        a.key_record.key_id
        for a in world.actors.values()
        if a.role == "honest" and a.account_state == "reachable"
    }
    exposed = exposure_set(chain)
    exposed_sybils = exposed & sybil_keys
    m.sybils_exposed = len(exposed_sybils)
    m.sybils_exposed_fraction = len(exposed_sybils) / len(sybil_keys) if sybil_keys else 0.0
    m.honest_falsely_flagged = len(exposed & honest_reachable)
    questioned = set()
    for key_id in exposed_sybils:
        questioned |= suspicion_closure(chain, key_id, world.now)
    m.questioned_keys = len(questioned)
    for signature, _ in chain.signature_records.values():
        if signature.kind == "validation":
            m.signatures_validation += 1
        else:
            m.signatures_authentication += 1
    counts = _var_counts(chain)
    m.vars_generated = len(chain.var_records)
    m.vars_fulfilled = counts["fulfilled"]
    m.vars_failed = counts["failed"]
    m.vars_expired = counts["expired"]
    m.vars_open = counts["open"]
    report = reachability_report(chain, world.now)
    m.dead_addresses_detected = sum(1 for status in report.values() if status == "dead")
    for session_id in chain.session_records:
        if detect_posting_mismatch(chain, session_id, world.provider).divergent_records:
            m.mismatches_detected += 1
    return m


def run_scenario(config: ScenarioConfig) -> tuple[Metrics, Chain]:
    world = World(config)
    for _ in range(config.blocks_to_run):
        world.step()
    world.flush()
    return world.metrics(), world.chain


def step(world: World) -> World:
    world.step()
    return world


def suspicion_closure(chain: Chain, exposed_key_id: bytes, now: Optional[int] = None) -> set[bytes]:
    """Keys holding an active success signature over the exposed key.
    One hop only: questioned endorsers are a report, not a cascade."""
    if exposed_key_id not in chain.key_records:
        raise UnknownKey(exposed_key_id.hex())
    if now is None:
        now = chain.tip.timestamp
    out = set()
    for signature, _ in chain.signatures_by_signee.get(exposed_key_id, ()):
        if signature.signer_key_id == exposed_key_id:
            continue
        if signature_active(chain, signature, now):
            out.add(signature.signer_key_id)
    return out


def monitor_certificates(observations: list[CertObservation]) -> dict[str, CertMismatch]:
    """Cross-vantage comparison: flag identifiers where, on the same
    logical day, at least two vantage points saw different keys."""
    by_identifier: dict[str, dict[int, list[CertObservation]]] = {}
    for obs in observations:
        by_identifier.setdefault(obs.identifier, {}).setdefault(obs.observed_at, []).append(obs)
    out = {}
    for identifier, days in sorted(by_identifier.items()):
        report = CertMismatch(identifier, False)
        for day in sorted(days):
            window = days[day]
            if len({o.vantage_id for o in window}) < 2:
                continue
            keys = {o.observed_key_id for o in window}
            if len(keys) < 2:
                continue
            tally: dict[bytes, int] = {}
            for o in window:
                tally[o.observed_key_id] = tally.get(o.observed_key_id, 0) + 1
            majority_key = max(sorted(tally), key=lambda k: tally[k])
            minority = sorted(
                o.vantage_id for o in window if o.observed_key_id != majority_key
            )
            report.mismatch = True
            report.windows.append((day, majority_key, minority))
        out[identifier] = report
    return out


def reachability_report(chain: Chain, now: int) -> dict[str, str]:
    """alive | dead | unknown per email identifier, judged from V&A
    results in the trailing 12-month window."""
    keys_by_identifier: dict[str, set[bytes]] = {}
    for record, _ in chain.key_records.values():
        if record.owner.identifier_kind == "email":
            keys_by_identifier.setdefault(record.owner.identifier, set()).add(record.key_id)
    results_by_key: dict[bytes, list[rec.VAResultRecord]] = {}
    cutoff = now - rec.MAX_LIFETIME_DAYS
    for block in chain.blocks:
        if block.timestamp < cutoff:
            continue
        for record in block.records:
            if isinstance(record, rec.VAResultRecord):
                results_by_key.setdefault(record.target_key_id, []).append(record)
    out = {}
    for identifier, key_ids in sorted(keys_by_identifier.items()):
        results = [r for key in key_ids for r in results_by_key.get(key, [])]
        if any(r.outcome == "success" for r in results):
            out[identifier] = "alive"
        elif len(results) >= 2 and all(
            r.outcome == "failure" and r.failure_reason == "no_response" for r in results[-2:]
        ):
            out[identifier] = "dead"
        else:
            out[identifier] = "unknown"
    return out
