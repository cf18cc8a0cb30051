"""Append-only proof-of-work chain of canonical records.

Single-node model: one writer mines and appends, readers work against the
chain snapshot.  Difficulty is a fixed number of leading zero bits in the
block hash.  The difficulty byte is mixed into the hashed block header so
that a tampered chain file cannot lower it unnoticed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import records as rec
from .crypto import DIGEST_SIZE, digest
from .errors import (
    BrokenLink,
    CorruptFile,
    EmptyPending,
    InsufficientWork,
    InvalidRecord,
    InvariantViolation,
)

GENESIS_PREV = b"\x00" * DIGEST_SIZE
DEFAULT_DIFFICULTY = 8
CHAIN_MAGIC = b"ACHN"
CHAIN_FORMAT_VERSION = 1


def merkle_root(record_ids) -> bytes:
    """Hash over the concatenated record ids, in order."""
    return digest(b"".join(record_ids))


def _header_prefix(difficulty: int, height: int, prev_hash: bytes, root: bytes, timestamp: int) -> bytes:
    return struct.pack(">B", difficulty) + struct.pack(">Q", height) + prev_hash + root + struct.pack(">Q", timestamp)


def compute_block_hash(
    difficulty: int, height: int, prev_hash: bytes, root: bytes, timestamp: int, nonce: int
) -> bytes:
    return hashlib.sha256(
        _header_prefix(difficulty, height, prev_hash, root, timestamp) + struct.pack(">Q", nonce)
    ).digest()


def leading_zero_bits_ok(d: bytes, bits: int) -> bool:
    full, rem = divmod(bits, 8)
    if any(d[:full]):
        return False
    if rem and d[full] >> (8 - rem):
        return False
    return True


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int  # logical day
    nonce: int
    records: tuple
    block_hash: bytes


@dataclass
class AuditReport:
    valid: bool
    first_bad_height: Optional[int] = None
    reasons: list = field(default_factory=list)


class Chain:
    """Ordered blocks plus derived indexes (record id -> location,
    key id -> registration, revocations by target, ...)."""

    def __init__(self, difficulty: int):
        if difficulty <= 0:
            raise InvariantViolation("difficulty must be positive")
        self.difficulty = difficulty
        self.blocks: list[Block] = []
        self.record_index: dict[bytes, tuple[int, int]] = {}  # id -> (height, pos)
        self.key_records: dict[bytes, tuple[rec.PublicKeyRecord, int]] = {}
        self.key_revocations: dict[bytes, list[tuple[rec.RevocationRecord, int]]] = {}
        self.sig_revocations: dict[bytes, list[tuple[rec.RevocationRecord, int]]] = {}
        self.signature_records: dict[bytes, tuple[rec.SignatureRecord, int]] = {}
        self.challenge_records: dict[bytes, tuple[rec.ChallengeRecord, int]] = {}
        self.result_records: dict[bytes, tuple[rec.VAResultRecord, int]] = {}
        self.var_records: dict[bytes, tuple[rec.VARecord, int]] = {}
        self.session_records: dict[bytes, list[tuple[rec.Record, int]]] = {}
        self.signatures_by_signee: dict[bytes, list[tuple[rec.SignatureRecord, int]]] = {}

    @classmethod
    def genesis(cls, difficulty: int = DEFAULT_DIFFICULTY, timestamp: int = 0) -> "Chain":
        chain = cls(difficulty)
        block = _mine(difficulty, 0, GENESIS_PREV, (), timestamp)
        chain._append_unchecked(block)
        return chain

    @classmethod
    def from_blocks(cls, difficulty: int, blocks) -> "Chain":
        """Rebuild a chain container without validation (used by load and
        by audits; run verify_chain before trusting it)."""
        chain = cls(difficulty)
        for block in blocks:
            chain._append_unchecked(block)
        return chain

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def _append_unchecked(self, block: Block):
        height = block.height
        for pos, record in enumerate(block.records):
            rid = rec.get_id(record)
            if rid not in self.record_index:
                self.record_index[rid] = (height, pos)
                self._index_record(record, rid, height)
        self.blocks.append(block)

    def _index_record(self, record, rid: bytes, height: int):
        if isinstance(record, rec.PublicKeyRecord):
            self.key_records.setdefault(rid, (record, height))
        elif isinstance(record, rec.ChallengeRecord):
            # keyed by the posting-independent core id; first copy wins
            self.challenge_records.setdefault(rec.challenge_core_id(record), (record, height))
            self.session_records.setdefault(record.session_id, []).append((record, height))
        elif isinstance(record, rec.ResponseRecord):
            challenge = self.challenge_records.get(record.challenge_id)
            if challenge is not None:
                self.session_records.setdefault(challenge[0].session_id, []).append(
                    (record, height)
                )
        elif isinstance(record, rec.VAResultRecord):
            self.result_records[rid] = (record, height)
            self.session_records.setdefault(record.session_id, []).append((record, height))
        elif isinstance(record, rec.SignatureRecord):
            self.signature_records[rid] = (record, height)
            self.signatures_by_signee.setdefault(record.signee_key_id, []).append(
                (record, height)
            )
        elif isinstance(record, rec.RevocationRecord):
            target = self.key_revocations if record.kind == "key" else self.sig_revocations
            target.setdefault(record.target_id, []).append((record, height))
        elif isinstance(record, rec.VARecord):
            self.var_records[rid] = (record, height)

    def iter_records(self):
        """All records in chain order as (record, height, pos)."""
        for block in self.blocks:
            for pos, record in enumerate(block.records):
                yield record, block.height, pos

    def get_record(self, rid: bytes):
        loc = self.record_index.get(rid)
        if loc is None:
            return None
        height, pos = loc
        return self.blocks[height].records[pos]


def _mine(difficulty: int, height: int, prev_hash: bytes, pending: tuple, timestamp: int) -> Block:
    ids = tuple(rec.get_id(r) for r in pending)
    root = merkle_root(ids)
    prefix = _header_prefix(difficulty, height, prev_hash, root, timestamp)
    nonce = 0
    while True:
        block_hash = hashlib.sha256(prefix + struct.pack(">Q", nonce)).digest()
        if leading_zero_bits_ok(block_hash, difficulty):
            return Block(height, prev_hash, root, timestamp, nonce, pending, block_hash)
        nonce += 1


class _StateView:
    """Chain state plus records earlier in the same pending list, for
    referential validation during mining.  Overlay dicts keep this O(new
    records), not O(chain), per mined block."""

    def __init__(self, chain: Chain):
        self.chain = chain
        self._keys: dict[bytes, tuple] = {}
        self._challenges: dict[bytes, rec.ChallengeRecord] = {}
        self._results: dict[bytes, rec.VAResultRecord] = {}
        self._signatures: dict[bytes, rec.SignatureRecord] = {}
        self._revoked_at: dict[bytes, int] = {}

    def key(self, key_id: bytes):
        entry = self._keys.get(key_id)
        return entry if entry is not None else self.chain.key_records.get(key_id)

    def challenge(self, core_id: bytes):
        challenge = self._challenges.get(core_id)
        if challenge is not None:
            return challenge
        entry = self.chain.challenge_records.get(core_id)
        return entry[0] if entry is not None else None

    def result(self, result_id: bytes):
        result = self._results.get(result_id)
        if result is not None:
            return result
        entry = self.chain.result_records.get(result_id)
        return entry[0] if entry is not None else None

    def signature(self, signature_id: bytes):
        signature = self._signatures.get(signature_id)
        if signature is not None:
            return signature
        entry = self.chain.signature_records.get(signature_id)
        return entry[0] if entry is not None else None

    def key_revoked_at(self, key_id: bytes):
        candidates = []
        if key_id in self._revoked_at:
            candidates.append(self._revoked_at[key_id])
        entries = self.chain.key_revocations.get(key_id)
        if entries:
            candidates.append(min(r.created_at for r, _ in entries))
        return min(candidates) if candidates else None

    def add(self, record, rid: bytes, height: int):
        if isinstance(record, rec.PublicKeyRecord):
            if self.key(rid) is None:
                self._keys[rid] = (record, height)
        elif isinstance(record, rec.ChallengeRecord):
            core = rec.challenge_core_id(record)
            if self.challenge(core) is None:
                self._challenges[core] = record
        elif isinstance(record, rec.VAResultRecord):
            self._results[rid] = record
        elif isinstance(record, rec.SignatureRecord):
            self._signatures[rid] = record
        elif isinstance(record, rec.RevocationRecord) and record.kind == "key":
            prev = self._revoked_at.get(record.target_id)
            if prev is None or record.created_at < prev:
                self._revoked_at[record.target_id] = record.created_at


def _validate_pending(chain: Chain, pending, new_height: int, timestamp: int, provider):
    view = _StateView(chain)
    for record in pending:
        rid = rec.get_id(record)
        try:
            record.check()
            if rid != rec.record_id(record):
                raise InvariantViolation("stored id does not match canonical bytes")
        except InvariantViolation as exc:
            raise InvalidRecord(rid, str(exc)) from exc
        _validate_one(view, record, rid, new_height, timestamp, provider)
        view.add(record, rid, new_height)


def _require_key(view: _StateView, key_id: bytes, rid: bytes, what: str) -> rec.PublicKeyRecord:
    entry = view.key(key_id)
    if entry is None:
        raise InvalidRecord(rid, f"{what} key {key_id.hex()[:12]} not registered")
    return entry[0]


def _validate_one(view: _StateView, record, rid: bytes, new_height: int, timestamp: int, provider):
    if isinstance(record, rec.PublicKeyRecord):
        return
    if isinstance(record, rec.ChallengeRecord):
        _require_key(view, record.challenger_key_id, rid, "challenger")
        _require_key(view, record.target_key_id, rid, "target")
        return
    if isinstance(record, rec.ResponseRecord):
        if view.challenge(record.challenge_id) is None:
            raise InvalidRecord(rid, "response references unknown challenge")
        responder = _require_key(view, record.responder_key_id, rid, "responder")
        if not provider.verify(
            responder.public_bytes, record.signed_message(), record.responder_signature
        ):
            raise InvalidRecord(rid, "responder signature does not verify")
        return
    if isinstance(record, rec.VAResultRecord):
        if view.challenge(record.challenge_id) is None:
            raise InvalidRecord(rid, "result references unknown challenge")
        _require_key(view, record.verifier_key_id, rid, "verifier")
        _require_key(view, record.target_key_id, rid, "target")
        return
    if isinstance(record, rec.SignatureRecord):
        result = view.result(record.result_ref)
        if result is None:
            raise InvalidRecord(rid, "signature references unknown result")
        if result.outcome != "success":
            raise InvalidRecord(rid, "signature must reference a success result")
        challenge = view.challenge(result.challenge_id)
        if challenge is None:
            raise InvalidRecord(rid, "signature's result references unknown challenge")
        if challenge.visibility == "opaque":
            raise InvalidRecord(rid, "no signatures for opaque sessions")
        signer = _require_key(view, record.signer_key_id, rid, "signer")
        signee = _require_key(view, record.signee_key_id, rid, "signee")
        cap = min(record.created_at + rec.MAX_LIFETIME_DAYS, signer.expires_at, signee.expires_at)
        if record.expires_at > cap:
            raise InvalidRecord(rid, "signature expiry exceeds key expiry or 365 days")
        if not provider.verify(
            signer.public_bytes, record.signed_message(), record.signer_signature
        ):
            raise InvalidRecord(rid, "signer signature does not verify")
        return
    if isinstance(record, rec.RevocationRecord):
        if record.kind == "key":
            target = _require_key(view, record.target_id, rid, "revoked")
            if record.issuer_key_id != record.target_id:
                raise InvalidRecord(rid, "key revocation must be self-signed")
            authority = target
        else:
            signature = view.signature(record.target_id)
            if signature is None:
                raise InvalidRecord(rid, "signature revocation targets unknown signature")
            if record.issuer_key_id != signature.signer_key_id:
                raise InvalidRecord(rid, "only the original signer may revoke a signature")
            authority = _require_key(view, record.issuer_key_id, rid, "issuer")
        if not provider.verify(
            authority.public_bytes, record.signed_message(), record.issuer_signature
        ):
            raise InvalidRecord(rid, "revocation signature does not verify")
        return
    if isinstance(record, rec.VARecord):
        target = _require_key(view, record.target_key_id, rid, "target")
        if record.created_at_block >= new_height:
            raise InvalidRecord(rid, "VAR creation block must precede its storage block")
        if timestamp >= target.expires_at:
            raise InvalidRecord(rid, "VAR targets an expired key")
        revoked_at = view.key_revoked_at(record.target_key_id)
        if revoked_at is not None and revoked_at <= timestamp:
            raise InvalidRecord(rid, "VAR targets a revoked key")
        return
    raise InvalidRecord(rid, f"unknown record type {type(record).__name__}")


def mine_block(chain: Chain, pending, timestamp: int, provider) -> Block:
    """Assemble and proof-of-work a new block from ``pending``.

    Records are validated against chain state (and earlier pending
    records); the nonce search is deterministic from 0 upward, so mining
    the same pending set on the same tip always yields the same block.
    """
    deduped = []
    seen_new = set()
    for record in pending:
        rid = rec.get_id(record)
        if rid in chain.record_index or rid in seen_new:
            continue
        seen_new.add(rid)
        deduped.append(record)
    if not deduped:
        raise EmptyPending("no records to mine")
    if timestamp < chain.tip.timestamp:
        raise BrokenLink("block timestamp before tip timestamp")
    new_height = chain.height + 1
    _validate_pending(chain, deduped, new_height, timestamp, provider)
    return _mine(chain.difficulty, new_height, chain.tip.block_hash, tuple(deduped), timestamp)


def append_block(chain: Chain, block: Block, provider) -> Chain:
    if block.prev_hash != chain.tip.block_hash or block.height != chain.height + 1:
        raise BrokenLink("block does not link to current tip")
    if block.timestamp < chain.tip.timestamp:
        raise BrokenLink("non-monotone timestamp")
    expected = compute_block_hash(
        chain.difficulty,
        block.height,
        block.prev_hash,
        block.merkle_root,
        block.timestamp,
        block.nonce,
    )
    if block.block_hash != expected or not leading_zero_bits_ok(block.block_hash, chain.difficulty):
        raise InsufficientWork("block hash invalid for chain difficulty")
    if block.merkle_root != merkle_root([rec.get_id(r) for r in block.records]):
        raise InsufficientWork("merkle root mismatch")
    if not block.records:
        raise InvalidRecord(None, "non-genesis block must carry records")
    _validate_pending(chain, block.records, block.height, block.timestamp, provider)
    chain._append_unchecked(block)
    return chain


def verify_chain(chain: Chain) -> AuditReport:
    """Structural audit: heights, links, proof-of-work, merkle roots,
    timestamp ordering.  Reports the first bad height; later blocks are
    unverifiable once a link is broken."""
    report = AuditReport(valid=True)
    prev: Optional[Block] = None
    for i, block in enumerate(chain.blocks):
        reasons = []
        if block.height != i:
            reasons.append(f"height {block.height} at position {i}")
        expected_prev = GENESIS_PREV if i == 0 else prev.block_hash
        if block.prev_hash != expected_prev:
            reasons.append("broken link to predecessor")
        if prev is not None and block.timestamp < prev.timestamp:
            reasons.append("non-monotone timestamp")
        if i > 0 and not block.records:
            reasons.append("empty non-genesis block")
        root = merkle_root([rec.record_id(r) for r in block.records])
        if block.merkle_root != root:
            reasons.append("merkle root mismatch")
        expected_hash = compute_block_hash(
            chain.difficulty, block.height, block.prev_hash, block.merkle_root, block.timestamp, block.nonce
        )
        if block.block_hash != expected_hash:
            reasons.append("stored block hash mismatch")
        if not leading_zero_bits_ok(block.block_hash, chain.difficulty):
            reasons.append("insufficient proof of work")
        if reasons:
            report.valid = False
            report.first_bad_height = i
            report.reasons = [f"height {i}: {r}" for r in reasons]
            if i + 1 < len(chain.blocks):
                report.reasons.append(f"heights {i + 1}..{len(chain.blocks) - 1} unverifiable")
            return report
        prev = block
    return report


def traverse(
    chain: Chain, window_days: int, now: int, predicate: Callable[[rec.Record], bool]
) -> list[tuple[rec.Record, int]]:
    """Matching records from blocks stamped within the trailing window."""
    if window_days <= 0:
        raise InvariantViolation("window_days must be positive")
    cutoff = now - window_days
    out = []
    for block in chain.blocks:
        if block.timestamp < cutoff or block.timestamp > now:
            continue
        for record in block.records:
            if predicate(record):
                out.append((record, block.height))
    return out


def persist(chain: Chain, path) -> None:
    parts = [CHAIN_MAGIC, struct.pack(">BB", CHAIN_FORMAT_VERSION, chain.difficulty)]
    parts.append(struct.pack(">I", len(chain.blocks)))
    for block in chain.blocks:
        body = [
            struct.pack(">Q", block.height),
            block.prev_hash,
            block.merkle_root,
            struct.pack(">Q", block.timestamp),
            struct.pack(">Q", block.nonce),
            block.block_hash,
            struct.pack(">I", len(block.records)),
        ]
        for record in block.records:
            blob = rec.canonical_serialize(record)
            body.append(struct.pack(">I", len(blob)))
            body.append(blob)
        raw = b"".join(body)
        parts.append(struct.pack(">I", len(raw)))
        parts.append(raw)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load(path) -> Chain:
    """Read, parse, and verify a chain file.  Refuses invalid files with
    CorruptFile carrying the first bad height."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10 or data[:4] != CHAIN_MAGIC:
        raise CorruptFile(0, "bad magic")
    version, difficulty = struct.unpack_from(">BB", data, 4)
    if version != CHAIN_FORMAT_VERSION:
        raise CorruptFile(0, f"unsupported format version {version}")
    if difficulty == 0:
        raise CorruptFile(0, "zero difficulty")
    (count,) = struct.unpack_from(">I", data, 6)
    offset = 10
    blocks = []
    for i in range(count):
        try:
            block, offset = _parse_block(data, offset)
        except (InvariantViolation, struct.error, IndexError) as exc:
            raise CorruptFile(i, str(exc)) from exc
        blocks.append(block)
    if offset != len(data):
        raise CorruptFile(max(count - 1, 0), "trailing bytes after last block")
    chain = Chain.from_blocks(difficulty, blocks)
    report = verify_chain(chain)
    if not report.valid:
        raise CorruptFile(report.first_bad_height, "; ".join(report.reasons))
    return chain


def _parse_block(data: bytes, offset: int):
    if offset + 4 > len(data):
        raise InvariantViolation("truncated block length")
    (blen,) = struct.unpack_from(">I", data, offset)
    offset += 4
    if offset + blen > len(data):
        raise InvariantViolation("truncated block")
    body = data[offset : offset + blen]
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise InvariantViolation("truncated block body")
        out = body[pos : pos + n]
        pos += n
        return out

    height = struct.unpack(">Q", take(8))[0]
    prev_hash = take(DIGEST_SIZE)
    root = take(DIGEST_SIZE)
    timestamp = struct.unpack(">Q", take(8))[0]
    nonce = struct.unpack(">Q", take(8))[0]
    block_hash = take(DIGEST_SIZE)
    nrecords = struct.unpack(">I", take(4))[0]
    parsed = []
    for _ in range(nrecords):
        (rlen,) = struct.unpack(">I", take(4))
        parsed.append(rec.deserialize(take(rlen)))
    if pos != len(body):
        raise InvariantViolation("trailing bytes in block body")
    return (
        Block(height, prev_hash, root, timestamp, nonce, tuple(parsed), block_hash),
        offset + blen,
    )
