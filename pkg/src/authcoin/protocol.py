"""Bidirectional challenge-response verification engine.

A session runs two directions in strict sequence: forward (initiator
verifies responder), then backward (roles swapped).  A failed forward
direction aborts the session.  Signatures are created only for a
successful direction of an open (non-opaque) session; failures are
documented as result records.  Both parties post their own copies of
every challenge and response, which is what makes unjustified failure
claims detectable afterwards.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Optional

from . import records as rec
from .chain import Chain
from .crypto import DIGEST_SIZE, KeyMaterial, digest, symmetric_open, symmetric_seal
from .errors import (
    DecryptionFailure,
    FormalValidationFailed,
    SelfVerification,
    UnsupportedCombination,
    WrongState,
)
from .keylife import DEFAULT_MIN_BITS, formal_validate

LOCALITIES = ("local_with_info", "global_with_info", "global_no_info")
DEFAULT_DEADLINE_DAYS = 14
NONCE_SIZE = 16


@dataclass(frozen=True)
class ChallengeSpec:
    kind: str  # validation | authentication
    visibility: str = "open"
    locality: str = "local_with_info"
    payload_template: bytes = b"prove control of this key"
    deadline_days: int = DEFAULT_DEADLINE_DAYS


@dataclass
class DirectionState:
    verifier_key_id: bytes
    target_key_id: bytes
    challenge: Optional[rec.ChallengeRecord] = None
    nonce: Optional[bytes] = None
    response: Optional[rec.ResponseRecord] = None
    result: Optional[rec.VAResultRecord] = None
    signature: Optional[rec.SignatureRecord] = None
    deadline: Optional[int] = None


@dataclass
class VASession:
    session_id: bytes
    initiator: rec.PublicKeyRecord
    responder: rec.PublicKeyRecord
    spec: ChallengeSpec
    provider: object
    state: str = "created"
    var_ref: Optional[bytes] = None
    opaque_secret: Optional[bytes] = None
    started_at: int = 0
    directions: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def visibility(self) -> str:
        return self.spec.visibility

    @property
    def initiator_key_id(self) -> bytes:
        return self.initiator.key_id

    @property
    def responder_key_id(self) -> bytes:
        return self.responder.key_id

    def key_record(self, key_id: bytes) -> rec.PublicKeyRecord:
        if key_id == self.initiator.key_id:
            return self.initiator
        if key_id == self.responder.key_id:
            return self.responder
        raise KeyError(key_id.hex())


def expected_answer(nonce: bytes, template: bytes) -> bytes:
    """Answer bytes any true key holder can derive from the decrypted
    challenge; anyone without the private key cannot recover the nonce."""
    return digest(b"answer" + nonce + template)[:16]


def start_session(
    chain: Chain,
    initiator_key_id: bytes,
    responder_key_id: bytes,
    spec: ChallengeSpec,
    now: int,
    *,
    provider,
    rng: random.Random,
    min_bits: int = DEFAULT_MIN_BITS,
    var_ref: Optional[bytes] = None,
) -> VASession:
    if initiator_key_id == responder_key_id:
        raise SelfVerification("a key cannot verify itself")
    if spec.kind == "authentication" and spec.locality == "global_no_info":
        raise UnsupportedCombination(
            "authentication is impossible without additional information or a side channel"
        )
    if spec.kind not in ("validation", "authentication"):
        raise UnsupportedCombination(f"bad session kind {spec.kind!r}")
    for key_id in (initiator_key_id, responder_key_id):
        result = formal_validate(key_id, chain, now, min_bits)
        if not result.passed:
            raise FormalValidationFailed(key_id, result.checks)
    initiator = chain.key_records[initiator_key_id][0]
    responder = chain.key_records[responder_key_id][0]
    session_id = digest(
        b"session" + initiator_key_id + responder_key_id + spec.kind.encode() + rng.randbytes(16)
    )
    session = VASession(
        session_id=session_id,
        initiator=initiator,
        responder=responder,
        spec=spec,
        provider=provider,
        var_ref=var_ref,
        started_at=now,
        opaque_secret=rng.randbytes(32) if spec.visibility == "opaque" else None,
    )
    session.directions = {
        "forward": DirectionState(initiator_key_id, responder_key_id),
        "backward": DirectionState(responder_key_id, initiator_key_id),
    }
    return session


def issue_challenge(
    session: VASession, direction: str, rng: random.Random, now: Optional[int] = None
) -> rec.ChallengeRecord:
    """Create a direction's challenge and advance the session state.

    The record returned is the verifier's copy; post_session_records
    derives the other party's copy.
    """
    if direction == "forward":
        if session.state != "created":
            raise WrongState(f"cannot issue forward challenge in state {session.state}")
        next_state = "forward_challenged"
    elif direction == "backward":
        if session.state != "forward_done":
            raise WrongState(f"cannot issue backward challenge in state {session.state}")
        next_state = "backward_challenged"
    else:
        raise WrongState(f"unknown direction {direction!r}")
    if now is None:
        now = session.started_at
    ds = session.directions[direction]
    target = session.key_record(ds.target_key_id)
    nonce = rng.randbytes(NONCE_SIZE)
    payload = session.provider.encrypt(
        target.public_bytes, nonce + session.spec.payload_template, rng
    )
    if session.opaque_secret is not None:
        payload = symmetric_seal(session.opaque_secret, payload)
    challenge = rec.seal(
        rec.ChallengeRecord(
            challenge_id=b"\x00" * DIGEST_SIZE,
            session_id=session.session_id,
            var_ref=session.var_ref,
            kind=session.kind,
            visibility=session.visibility,
            challenger_key_id=ds.verifier_key_id,
            target_key_id=ds.target_key_id,
            payload=payload,
            created_at=now,
            posted_by=ds.verifier_key_id,
        )
    )
    ds.challenge = challenge
    ds.nonce = nonce
    ds.deadline = now + session.spec.deadline_days
    session.state = next_state
    return challenge


def fulfil_challenge(
    actor_keys: KeyMaterial,
    challenge: rec.ChallengeRecord,
    fulfil_outcome: str,
    *,
    provider,
    opaque_secret: Optional[bytes] = None,
    now: Optional[int] = None,
) -> Optional[rec.ResponseRecord]:
    """Produce the target's response (or None when the account never
    answers).  Raises DecryptionFailure when the actor does not actually
    hold the challenged private key."""
    if fulfil_outcome == "none":
        return None
    if fulfil_outcome not in ("correct", "wrong"):
        raise ValueError(f"bad fulfil outcome {fulfil_outcome!r}")
    ciphertext = challenge.payload
    if challenge.visibility == "opaque":
        if opaque_secret is None:
            raise DecryptionFailure("opaque challenge requires the session secret")
        ciphertext = symmetric_open(opaque_secret, ciphertext)
    plaintext = provider.decrypt(actor_keys, ciphertext)
    if len(plaintext) < NONCE_SIZE:
        raise DecryptionFailure("challenge plaintext too short")
    nonce, template = plaintext[:NONCE_SIZE], plaintext[NONCE_SIZE:]
    if fulfil_outcome == "correct":
        answer = expected_answer(nonce, template)
    else:
        answer = digest(b"wrong" + nonce)[:16]
    payload = nonce + answer
    if challenge.visibility == "opaque":
        payload = symmetric_seal(opaque_secret, payload)
    core = rec.challenge_core_id(challenge)
    response = rec.ResponseRecord(
        response_id=b"\x00" * DIGEST_SIZE,
        challenge_id=core,
        responder_key_id=challenge.target_key_id,
        payload=payload,
        responder_signature=provider.sign(actor_keys, core + payload),
        created_at=challenge.created_at if now is None else now,
        posted_by=challenge.target_key_id,
    )
    return rec.seal(response)


def evaluate(
    session: VASession,
    direction: str,
    response: Optional[rec.ResponseRecord],
    now: int,
    *,
    verifier_keys: KeyMaterial,
    verdict: Optional[str] = None,
) -> tuple[rec.VAResultRecord, Optional[rec.SignatureRecord]]:
    """Judge a direction's response.

    Success requires: a response, a verifying responder signature, the
    decrypted nonce and answer bytes matching, and (for authentication)
    the verifier's accept verdict.  Success in an open session yields a
    signature record; opaque sessions never do.
    """
    expected_state = {"forward": "forward_challenged", "backward": "backward_challenged"}
    if direction not in expected_state:
        raise WrongState(f"unknown direction {direction!r}")
    if session.state != expected_state[direction]:
        raise WrongState(f"cannot evaluate {direction} in state {session.state}")
    ds = session.directions[direction]
    failure_reason = None
    if response is None:
        failure_reason = "no_response"
    elif ds.deadline is not None and response.created_at > ds.deadline:
        failure_reason = "timeout"
    else:
        payload = response.payload
        core = rec.challenge_core_id(ds.challenge)
        target = session.key_record(ds.target_key_id)
        if response.challenge_id != core or not session.provider.verify(
            target.public_bytes, core + payload, response.responder_signature
        ):
            failure_reason = "bad_signature"
        else:
            if session.opaque_secret is not None:
                try:
                    payload = symmetric_open(session.opaque_secret, payload)
                except DecryptionFailure:
                    payload = b""
            nonce, answer = payload[:NONCE_SIZE], payload[NONCE_SIZE:]
            if nonce != ds.nonce or answer != expected_answer(
                ds.nonce, session.spec.payload_template
            ):
                failure_reason = "unsatisfactory"
            elif session.kind == "authentication" and verdict != "accept":
                failure_reason = "unsatisfactory"
    outcome = "success" if failure_reason is None else "failure"
    result = rec.seal(
        rec.VAResultRecord(
            result_id=b"\x00" * DIGEST_SIZE,
            session_id=session.session_id,
            challenge_id=rec.challenge_core_id(ds.challenge),
            verifier_key_id=ds.verifier_key_id,
            target_key_id=ds.target_key_id,
            outcome=outcome,
            failure_reason=failure_reason,
            created_at=now,
        )
    )
    ds.response = response
    ds.result = result
    signature = None
    if outcome == "success" and session.visibility == "open":
        signer = session.key_record(ds.verifier_key_id)
        signee = session.key_record(ds.target_key_id)
        expires_at = min(now + rec.MAX_LIFETIME_DAYS, signer.expires_at, signee.expires_at)
        payload_to_sign = rec.signature_signing_payload(
            ds.verifier_key_id, ds.target_key_id, session.kind, result.result_id, now, expires_at
        )
        signature = rec.seal(
            rec.SignatureRecord(
                signature_id=b"\x00" * DIGEST_SIZE,
                signer_key_id=ds.verifier_key_id,
                signee_key_id=ds.target_key_id,
                kind=session.kind,
                result_ref=result.result_id,
                created_at=now,
                expires_at=expires_at,
                signer_signature=session.provider.sign(verifier_keys, payload_to_sign),
            )
        )
        ds.signature = signature
    if outcome == "failure":
        session.state = "failed"
    elif direction == "forward":
        session.state = "forward_done"
    else:
        session.state = "complete"
    return result, signature


def post_session_records(session: VASession, party: str) -> list[rec.Record]:
    """The given party's copies of the session's records, in an order
    safe for the pending pool (challenge before response before result)."""
    if party == "initiator":
        party_key = session.initiator.key_id
    elif party == "responder":
        party_key = session.responder.key_id
    else:
        raise ValueError(f"unknown party {party!r}")
    out: list[rec.Record] = []
    for direction in ("forward", "backward"):
        ds = session.directions[direction]
        if ds.challenge is not None:
            out.append(rec.seal(replace(ds.challenge, posted_by=party_key)))
        if ds.response is not None:
            out.append(rec.seal(replace(ds.response, posted_by=party_key)))
        if ds.verifier_key_id == party_key:
            if ds.result is not None:
                out.append(ds.result)
            if ds.signature is not None:
                out.append(ds.signature)
    return out


@dataclass
class MismatchReport:
    consistent: bool
    missing_sides: list
    divergent_records: list


def detect_posting_mismatch(chain: Chain, session_id: bytes, provider=None) -> MismatchReport:
    """Cross-check both parties' postings for one session.

    Consistent iff every challenge and response of the session was posted
    by both parties with identical payload bytes, and no failure result
    contradicts the posted evidence (a no_response claim with a posted
    response, or a bad_signature claim over a response that verifies).
    """
    entries = chain.session_records.get(session_id, [])
    challenges = [r for r, _ in entries if isinstance(r, rec.ChallengeRecord)]
    responses = [r for r, _ in entries if isinstance(r, rec.ResponseRecord)]
    results = [r for r, _ in entries if isinstance(r, rec.VAResultRecord)]

    missing = []
    divergent = []
    participants = set()
    for ch in challenges:
        participants.update((ch.challenger_key_id, ch.target_key_id))

    # group challenge copies per direction
    by_direction: dict[tuple, list[rec.ChallengeRecord]] = {}
    for ch in challenges:
        by_direction.setdefault((ch.challenger_key_id, ch.target_key_id), []).append(ch)
    core_by_direction = {}
    for (challenger, target), copies in by_direction.items():
        posted = {c.posted_by for c in copies}
        for side in (challenger, target):
            if side not in posted:
                missing.append(("challenge", challenger.hex()[:12], side.hex()[:12]))
        payloads = {c.payload for c in copies}
        if len(payloads) > 1:
            divergent.append(("challenge", challenger.hex()[:12], "payloads differ"))
        core_by_direction[(challenger, target)] = {rec.challenge_core_id(c) for c in copies}

    # group response copies per referenced challenge
    responses_by_core: dict[bytes, list[rec.ResponseRecord]] = {}
    for rp in responses:
        responses_by_core.setdefault(rp.challenge_id, []).append(rp)
    for (challenger, target), cores in core_by_direction.items():
        copies = [rp for core in cores for rp in responses_by_core.get(core, [])]
        if not copies:
            continue
        posted = {c.posted_by for c in copies}
        for side in (challenger, target):
            if side not in posted:
                missing.append(("response", challenger.hex()[:12], side.hex()[:12]))
        payloads = {c.payload for c in copies}
        if len(payloads) > 1:
            divergent.append(("response", challenger.hex()[:12], "payloads differ"))

    # failure claims contradicted by posted evidence
    for result in results:
        if result.outcome != "failure":
            continue
        copies = responses_by_core.get(result.challenge_id, [])
        responder_copies = [c for c in copies if c.responder_key_id == result.target_key_id]
        if result.failure_reason == "no_response" and responder_copies:
            divergent.append(
                ("result", result.result_id.hex()[:12], "no_response claim but response posted")
            )
        elif result.failure_reason == "bad_signature" and responder_copies and provider is not None:
            target_entry = chain.key_records.get(result.target_key_id)
            if target_entry is not None and any(
                provider.verify(
                    target_entry[0].public_bytes,
                    c.challenge_id + c.payload,
                    c.responder_signature,
                )
                for c in responder_copies
            ):
                divergent.append(
                    ("result", result.result_id.hex()[:12], "bad_signature claim but signature verifies")
                )
    return MismatchReport(not missing and not divergent, missing, divergent)
