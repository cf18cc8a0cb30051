"""Automated validation & authentication requests.

VARs are generated after each mined block, never by users.  Target
selection is drawn from the valid key population with an RNG seeded from
the block hash, so any node can re-derive and audit the generation.
Whether a given key may fulfil a VAR is decided by a hash-prefix check
over the concatenated canonical forms of the VAR and the key, plus the
rule that the fulfilling key must predate the VAR.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from . import records as rec
from .chain import Block, Chain
from .errors import InvariantViolation, NotEligible, VarClosed
from .keylife import DEFAULT_MIN_BITS, key_status
from .protocol import ChallengeSpec, VASession, start_session

VAR_EXPIRY_BLOCKS = 30
DEFAULT_VAR_RATE = 0.05


@dataclass(frozen=True)
class SelectionParams:
    prefix_bits: int = 1
    prefix_pattern: int = 0
    var_rate: float = DEFAULT_VAR_RATE

    def __post_init__(self):
        if not 1 <= self.prefix_bits <= 16:
            raise InvariantViolation("prefix_bits must be in [1, 16]")
        if not 0 <= self.prefix_pattern < (1 << self.prefix_bits):
            raise InvariantViolation("prefix_pattern does not fit in prefix_bits")
        if not 0 < self.var_rate <= 1:
            raise InvariantViolation("var_rate must be in (0, 1]")


def generate_vars(chain: Chain, new_block: Block, params: SelectionParams) -> list[rec.VARecord]:
    """VARs for the block just added to the chain tip.

    Deterministic per block: the selection RNG is seeded from the block
    hash, so re-running generation for the same chain yields the same
    list.
    """
    if new_block.block_hash != chain.tip.block_hash:
        raise InvariantViolation("VARs are generated only for the chain tip")
    ts = new_block.timestamp
    valid_keys = [
        key_id for key_id in chain.key_records if key_status(chain, key_id, ts) == "valid"
    ]
    if not valid_keys:
        return []
    count = min(math.ceil(params.var_rate * len(valid_keys)), len(valid_keys))
    rng = random.Random(int.from_bytes(new_block.block_hash, "big"))
    targets = rng.sample(valid_keys, count)
    out = []
    for target in targets:
        kind = rng.choice(("validation", "authentication"))
        out.append(
            rec.seal(
                rec.VARecord(
                    var_id=b"\x00" * 32,
                    target_key_id=target,
                    kind=kind,
                    created_at_block=new_block.height,
                    status="open",
                )
            )
        )
    return out


def eligible(
    var: rec.VARecord, verifier_key: rec.PublicKeyRecord, chain: Chain, params: SelectionParams
) -> bool:
    """May this key fulfil this VAR?  Pure function of its arguments."""
    if verifier_key.key_id == var.target_key_id:
        return False
    entry = chain.key_records.get(verifier_key.key_id)
    if entry is None or entry[1] >= var.created_at_block:
        return False
    combined = rec.canonical_serialize(var) + rec.canonical_serialize(verifier_key)
    d = rec.digest(combined)
    prefix = int.from_bytes(d[:2], "big") >> (16 - params.prefix_bits)
    if prefix != params.prefix_pattern:
        return False
    return key_status(chain, verifier_key.key_id, chain.tip.timestamp) == "valid"


def sessions_for_var(chain: Chain, var_id: bytes) -> set[bytes]:
    return {
        challenge.session_id
        for challenge, _ in chain.challenge_records.values()
        if challenge.var_ref == var_id
    }


def var_status(chain: Chain, var: rec.VARecord) -> str:
    """Derived current status: chain records are immutable, so the stored
    field stays 'open' and the live status is recomputed from linked
    session results and chain height."""
    session_ids = sessions_for_var(chain, var.var_id)
    any_failed = False
    for session_id in session_ids:
        results = [
            r
            for r, _ in chain.session_records.get(session_id, [])
            if isinstance(r, rec.VAResultRecord)
        ]
        successes = sum(1 for r in results if r.outcome == "success")
        if successes >= 2:
            return "fulfilled"
        if any(r.outcome == "failure" for r in results):
            any_failed = True
    if any_failed:
        return "failed"
    if chain.height - var.created_at_block > VAR_EXPIRY_BLOCKS:
        return "expired"
    return "open"


def fulfil_var(
    var: rec.VARecord,
    verifier_key_id: bytes,
    chain: Chain,
    params: SelectionParams,
    now: int,
    *,
    provider,
    rng: random.Random,
    min_bits: int = DEFAULT_MIN_BITS,
    deadline_days: int | None = None,
) -> VASession:
    """Open the verification session for a VAR claim (verifier initiates,
    VAR target responds, always an open session)."""
    if var_status(chain, var) != "open":
        raise VarClosed(f"VAR {var.var_id.hex()[:12]} is no longer open")
    entry = chain.key_records.get(verifier_key_id)
    if entry is None or not eligible(var, entry[0], chain, params):
        raise NotEligible(f"key {verifier_key_id.hex()[:12]} may not fulfil this VAR")
    kind = "authentication" if var.kind in ("authentication", "both") else "validation"
    spec = ChallengeSpec(kind=kind, visibility="open")
    if deadline_days is not None:
        spec = ChallengeSpec(kind=kind, visibility="open", deadline_days=deadline_days)
    return start_session(
        chain,
        verifier_key_id,
        var.target_key_id,
        spec,
        now,
        provider=provider,
        rng=rng,
        min_bits=min_bits,
        var_ref=var.var_id,
    )


@dataclass
class VarStatistics:
    open: int = 0
    fulfilled: int = 0
    failed: int = 0
    expired: int = 0
    per_key_frequency: dict = None

    @property
    def total(self) -> int:
        return self.open + self.fulfilled + self.failed + self.expired


def var_statistics(chain: Chain, now: int) -> VarStatistics:
    stats = VarStatistics(per_key_frequency={})
    for var, _ in chain.var_records.values():
        status = var_status(chain, var)
        setattr(stats, status, getattr(stats, status) + 1)
    for record, _, _ in chain.iter_records():
        if isinstance(record, rec.VAResultRecord):
            key = record.target_key_id
            stats.per_key_frequency[key] = stats.per_key_frequency.get(key, 0) + 1
    return stats
