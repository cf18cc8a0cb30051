"""Chain record types and their canonical byte serialization.

Every record stored on the chain is defined here, together with a
deterministic wire format used for hashing, signing, and persistence.
Integers are big-endian fixed-width, byte strings and UTF-8 strings are
4-byte length-prefixed, optional fields are a presence byte followed by
the body, enums are single bytes.  A record's id is the SHA-256 digest
of its canonical serialization (tag byte + body, the id itself excluded),
so ids are never written to disk and are recomputed on load.

The format is documented byte-exactly in FORMAT.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace
from typing import Optional, Union

from .crypto import DIGEST_SIZE, digest
from .errors import InvariantViolation

MAX_LIFETIME_DAYS = 365

# enum value tables; wire code = index
IDENTIFIER_KINDS = ("email", "domain")
EXCHANGE_KINDS = ("validation", "authentication", "both")
VISIBILITIES = ("open", "opaque")
OUTCOMES = ("success", "failure")
FAILURE_REASONS = ("no_response", "bad_signature", "unsatisfactory", "timeout")
REVOCATION_KINDS = ("key", "signature")
VAR_STATUSES = ("open", "fulfilled", "failed", "expired")

_NULL_ID = b"\x00" * DIGEST_SIZE


class _Writer:
    __slots__ = ("parts",)

    def __init__(self):
        self.parts = []

    def u8(self, v: int):
        self.parts.append(struct.pack(">B", v))

    def u32(self, v: int):
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack(">Q", v))

    def raw(self, b: bytes):
        self.parts.append(b)

    def blob(self, b: bytes):
        self.parts.append(struct.pack(">I", len(b)))
        self.parts.append(b)

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def did(self, d: bytes):
        if len(d) != DIGEST_SIZE:
            raise InvariantViolation("digest must be 32 bytes")
        self.parts.append(d)

    def opt_did(self, d: Optional[bytes]):
        if d is None:
            self.u8(0)
        else:
            self.u8(1)
            self.did(d)

    def enum(self, table: tuple, value: str):
        try:
            self.u8(table.index(value))
        except ValueError:
            raise InvariantViolation(f"bad enum value {value!r}") from None

    def opt_enum(self, table: tuple, value: Optional[str]):
        if value is None:
            self.u8(0)
        else:
            self.u8(1)
            self.enum(table, value)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    """Strict reader: every decode validates, so any byte flip either
    fails parsing or yields a different record value."""

    __slots__ = ("data", "pos")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise InvariantViolation("truncated record")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvariantViolation("invalid UTF-8") from exc

    def did(self) -> bytes:
        return self._take(DIGEST_SIZE)

    def opt_did(self) -> Optional[bytes]:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise InvariantViolation("bad presence byte")
        return self.did()

    def enum(self, table: tuple) -> str:
        code = self.u8()
        if code >= len(table):
            raise InvariantViolation("bad enum code")
        return table[code]

    def opt_enum(self, table: tuple) -> Optional[str]:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise InvariantViolation("bad presence byte")
        return self.enum(table)

    def done(self):
        if self.pos != len(self.data):
            raise InvariantViolation("trailing bytes after record")


@dataclass(frozen=True)
class EntityDescriptor:
    display_name: str
    identifier: str
    identifier_kind: str  # email | domain

    def check(self):
        if not self.identifier:
            raise InvariantViolation("empty identifier")
        if self.identifier_kind not in IDENTIFIER_KINDS:
            raise InvariantViolation(f"bad identifier kind {self.identifier_kind!r}")
        if self.identifier_kind == "email" and self.identifier.count("@") != 1:
            raise InvariantViolation("email identifier must contain exactly one '@'")


@dataclass(frozen=True)
class PublicKeyRecord:
    key_id: bytes
    owner: EntityDescriptor
    public_bytes: bytes
    key_length_bits: int
    created_at: int  # logical days since epoch
    expires_at: int

    TAG = 1

    def check(self):
        self.owner.check()
        if not self.public_bytes:
            raise InvariantViolation("empty public key bytes")
        lifespan = self.expires_at - self.created_at
        if lifespan <= 0 or lifespan > MAX_LIFETIME_DAYS:
            raise InvariantViolation(f"key lifespan {lifespan} outside (0, {MAX_LIFETIME_DAYS}]")

    def _body(self, w: _Writer):
        w.text(self.owner.display_name)
        w.text(self.owner.identifier)
        w.enum(IDENTIFIER_KINDS, self.owner.identifier_kind)
        w.blob(self.public_bytes)
        w.u32(self.key_length_bits)
        w.u64(self.created_at)
        w.u64(self.expires_at)

    @classmethod
    def _parse(cls, r: _Reader):
        owner = EntityDescriptor(r.text(), r.text(), r.enum(IDENTIFIER_KINDS))
        return cls(_NULL_ID, owner, r.blob(), r.u32(), r.u64(), r.u64())


@dataclass(frozen=True)
class ChallengeRecord:
    challenge_id: bytes
    session_id: bytes
    var_ref: Optional[bytes]
    kind: str  # validation | authentication
    visibility: str  # open | opaque
    challenger_key_id: bytes
    target_key_id: bytes
    payload: bytes
    created_at: int
    posted_by: bytes

    TAG = 2

    def check(self):
        if self.kind not in ("validation", "authentication"):
            raise InvariantViolation(f"bad challenge kind {self.kind!r}")
        if self.visibility not in VISIBILITIES:
            raise InvariantViolation(f"bad visibility {self.visibility!r}")
        if self.challenger_key_id == self.target_key_id:
            raise InvariantViolation("challenger and target must differ")

    def _body(self, w: _Writer):
        w.did(self.session_id)
        w.opt_did(self.var_ref)
        w.enum(EXCHANGE_KINDS, self.kind)
        w.enum(VISIBILITIES, self.visibility)
        w.did(self.challenger_key_id)
        w.did(self.target_key_id)
        w.blob(self.payload)
        w.u64(self.created_at)
        w.did(self.posted_by)

    @classmethod
    def _parse(cls, r: _Reader):
        return cls(
            _NULL_ID,
            r.did(),
            r.opt_did(),
            r.enum(EXCHANGE_KINDS),
            r.enum(VISIBILITIES),
            r.did(),
            r.did(),
            r.blob(),
            r.u64(),
            r.did(),
        )


@dataclass(frozen=True)
class ResponseRecord:
    response_id: bytes
    challenge_id: bytes
    responder_key_id: bytes
    payload: bytes
    responder_signature: bytes  # over challenge_id || payload
    created_at: int
    posted_by: bytes

    TAG = 3

    def check(self):
        if not self.responder_signature:
            raise InvariantViolation("missing responder signature")

    def signed_message(self) -> bytes:
        return self.challenge_id + self.payload

    def _body(self, w: _Writer):
        w.did(self.challenge_id)
        w.did(self.responder_key_id)
        w.blob(self.payload)
        w.blob(self.responder_signature)
        w.u64(self.created_at)
        w.did(self.posted_by)

    @classmethod
    def _parse(cls, r: _Reader):
        return cls(_NULL_ID, r.did(), r.did(), r.blob(), r.blob(), r.u64(), r.did())


@dataclass(frozen=True)
class VAResultRecord:
    result_id: bytes
    session_id: bytes
    challenge_id: bytes
    verifier_key_id: bytes
    target_key_id: bytes
    outcome: str  # success | failure
    failure_reason: Optional[str]
    created_at: int

    TAG = 4

    def check(self):
        if self.outcome not in OUTCOMES:
            raise InvariantViolation(f"bad outcome {self.outcome!r}")
        if (self.failure_reason is not None) != (self.outcome == "failure"):
            raise InvariantViolation("failure_reason present iff outcome is failure")
        if self.failure_reason is not None and self.failure_reason not in FAILURE_REASONS:
            raise InvariantViolation(f"bad failure reason {self.failure_reason!r}")

    def _body(self, w: _Writer):
        w.did(self.session_id)
        w.did(self.challenge_id)
        w.did(self.verifier_key_id)
        w.did(self.target_key_id)
        w.enum(OUTCOMES, self.outcome)
        w.opt_enum(FAILURE_REASONS, self.failure_reason)
        w.u64(self.created_at)

    @classmethod
    def _parse(cls, r: _Reader):
        return cls(
            _NULL_ID,
            r.did(),
            r.did(),
            r.did(),
            r.did(),
            r.enum(OUTCOMES),
            r.opt_enum(FAILURE_REASONS),
            r.u64(),
        )


@dataclass(frozen=True)
class SignatureRecord:
    signature_id: bytes
    signer_key_id: bytes
    signee_key_id: bytes
    kind: str  # validation | authentication (internal attribute)
    result_ref: bytes
    created_at: int
    expires_at: int
    signer_signature: bytes

    TAG = 5

    def check(self):
        if self.kind not in ("validation", "authentication"):
            raise InvariantViolation(f"bad signature kind {self.kind!r}")
        lifespan = self.expires_at - self.created_at
        if lifespan <= 0 or lifespan > MAX_LIFETIME_DAYS:
            raise InvariantViolation(
                f"signature lifespan {lifespan} outside (0, {MAX_LIFETIME_DAYS}]"
            )
        if not self.signer_signature:
            raise InvariantViolation("missing signer signature")

    def signed_message(self) -> bytes:
        return signature_signing_payload(
            self.signer_key_id,
            self.signee_key_id,
            self.kind,
            self.result_ref,
            self.created_at,
            self.expires_at,
        )

    def _body(self, w: _Writer):
        w.did(self.signer_key_id)
        w.did(self.signee_key_id)
        w.enum(EXCHANGE_KINDS, self.kind)
        w.did(self.result_ref)
        w.u64(self.created_at)
        w.u64(self.expires_at)
        w.blob(self.signer_signature)

    @classmethod
    def _parse(cls, r: _Reader):
        return cls(
            _NULL_ID, r.did(), r.did(), r.enum(EXCHANGE_KINDS), r.did(), r.u64(), r.u64(), r.blob()
        )


@dataclass(frozen=True)
class RevocationRecord:
    revocation_id: bytes
    kind: str  # key | signature
    target_id: bytes
    issuer_key_id: bytes
    issuer_signature: bytes
    created_at: int

    TAG = 6

    def check(self):
        if self.kind not in REVOCATION_KINDS:
            raise InvariantViolation(f"bad revocation kind {self.kind!r}")
        if not self.issuer_signature:
            raise InvariantViolation("missing issuer signature")

    def signed_message(self) -> bytes:
        return revocation_signing_payload(
            self.kind, self.target_id, self.issuer_key_id, self.created_at
        )

    def _body(self, w: _Writer):
        w.enum(REVOCATION_KINDS, self.kind)
        w.did(self.target_id)
        w.did(self.issuer_key_id)
        w.blob(self.issuer_signature)
        w.u64(self.created_at)

    @classmethod
    def _parse(cls, r: _Reader):
        return cls(_NULL_ID, r.enum(REVOCATION_KINDS), r.did(), r.did(), r.blob(), r.u64())


@dataclass(frozen=True)
class VARecord:
    var_id: bytes
    target_key_id: bytes
    kind: str  # validation | authentication | both
    created_at_block: int
    status: str  # open | fulfilled | failed | expired

    TAG = 7

    def check(self):
        if self.kind not in EXCHANGE_KINDS:
            raise InvariantViolation(f"bad VAR kind {self.kind!r}")
        if self.status not in VAR_STATUSES:
            raise InvariantViolation(f"bad VAR status {self.status!r}")

    def _body(self, w: _Writer):
        w.did(self.target_key_id)
        w.enum(EXCHANGE_KINDS, self.kind)
        w.u64(self.created_at_block)
        w.enum(VAR_STATUSES, self.status)

    @classmethod
    def _parse(cls, r: _Reader):
        return cls(_NULL_ID, r.did(), r.enum(EXCHANGE_KINDS), r.u64(), r.enum(VAR_STATUSES))


def challenge_core_id(challenge: ChallengeRecord) -> bytes:
    """Posting-independent challenge identifier.

    Both parties post their own copy of a challenge, distinguished by
    posted_by (and hence by challenge_id).  Responses, results, and
    signatures must reference the challenge itself, not one party's copy,
    so they use the digest of the body with posted_by zeroed out.
    """
    cached = challenge.__dict__.get("_core_id")
    if cached is not None:
        return cached
    out = record_id(replace(challenge, posted_by=_NULL_ID))
    object.__setattr__(challenge, "_core_id", out)
    return out


Record = Union[
    PublicKeyRecord,
    ChallengeRecord,
    ResponseRecord,
    VAResultRecord,
    SignatureRecord,
    RevocationRecord,
    VARecord,
]

_TYPES_BY_TAG = {
    cls.TAG: cls
    for cls in (
        PublicKeyRecord,
        ChallengeRecord,
        ResponseRecord,
        VAResultRecord,
        SignatureRecord,
        RevocationRecord,
        VARecord,
    )
}

# the first declared field of each record type is its id
_ID_FIELD = {cls: fields(cls)[0].name for cls in _TYPES_BY_TAG.values()}


def _install_id_hash(cls, id_field):
    # Records are content-addressed: sealed records that compare equal
    # carry the same id, so hashing the id alone is correct and far
    # cheaper than the generated all-fields dataclass hash (records are
    # hashed constantly as memoization keys).  Unsealed records all
    # carry the null id, so they keep the full-fields hash to avoid
    # collision pile-ups.
    full_hash = cls.__hash__

    def _hash(self):
        rid = getattr(self, id_field)
        if rid == _NULL_ID:
            return full_hash(self)
        return hash(rid)

    cls.__hash__ = _hash


for _cls, _idf in _ID_FIELD.items():
    _install_id_hash(_cls, _idf)


def signature_signing_payload(
    signer_key_id: bytes,
    signee_key_id: bytes,
    kind: str,
    result_ref: bytes,
    created_at: int,
    expires_at: int,
) -> bytes:
    w = _Writer()
    w.did(signer_key_id)
    w.did(signee_key_id)
    w.enum(EXCHANGE_KINDS, kind)
    w.did(result_ref)
    w.u64(created_at)
    w.u64(expires_at)
    return w.getvalue()


def revocation_signing_payload(
    kind: str, target_id: bytes, issuer_key_id: bytes, created_at: int
) -> bytes:
    w = _Writer()
    w.enum(REVOCATION_KINDS, kind)
    w.did(target_id)
    w.did(issuer_key_id)
    w.u64(created_at)
    return w.getvalue()


def canonical_serialize(record: Record) -> bytes:
    """Deterministic byte form of ``record`` (tag + body, id excluded).

    Records are frozen, so the result is memoized on the instance;
    eligibility checks serialize the same key records many thousands of
    times.
    """
    cached = record.__dict__.get("_canon")
    if cached is not None:
        return cached
    record.check()
    w = _Writer()
    w.u8(record.TAG)
    record._body(w)
    out = w.getvalue()
    object.__setattr__(record, "_canon", out)
    return out


def record_id(record: Record) -> bytes:
    cached = record.__dict__.get("_rid")
    if cached is not None:
        return cached
    out = digest(canonical_serialize(record))
    object.__setattr__(record, "_rid", out)
    return out


def get_id(record: Record) -> bytes:
    return getattr(record, _ID_FIELD[type(record)])


def seal(record: Record) -> Record:
    """Return ``record`` with its id field set from the canonical bytes."""
    return replace(record, **{_ID_FIELD[type(record)]: record_id(record)})


def deserialize(data: bytes) -> Record:
    record = _parse_from(_Reader(data), strict_end=True)
    return record


def _parse_from(r: _Reader, strict_end: bool = False) -> Record:
    tag = r.u8()
    cls = _TYPES_BY_TAG.get(tag)
    if cls is None:
        raise InvariantViolation(f"unknown record tag {tag}")
    record = cls._parse(r)
    if strict_end:
        r.done()
    record.check()
    return seal(record)
