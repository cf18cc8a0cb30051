"""Key lifecycle: formal validation, revocation, status, lookup, history.

All functions are pure reads over a chain snapshot except the revoke_*
builders, which produce records for the pending pool.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import records as rec
from .chain import Chain, traverse
from .crypto import KeyMaterial
from .errors import NotAuthorized, UnknownKey, UnknownSignature

DEFAULT_MIN_BITS = 2048
LOOKUP_WINDOW_DAYS = 365


@dataclass(frozen=True)
class FormalValidationResult:
    key_id: bytes
    passed: bool
    checks: dict  # well_formed, length_sufficient, not_expired, not_revoked -> bool


@dataclass(frozen=True)
class LookupQuery:
    email: str | None = None
    name: str | None = None
    key_id: bytes | None = None

    def check(self):
        if self.email is None and self.name is None and self.key_id is None:
            raise ValueError("lookup query needs at least one field")


def _revoked_at(chain: Chain, key_id: bytes) -> int | None:
    """Timestamp of the earliest on-chain key revocation, if any."""
    entries = chain.key_revocations.get(key_id)
    if not entries:
        return None
    return min(record.created_at for record, _ in entries)


def formal_validate(
    key_id: bytes, chain: Chain, now: int, min_bits: int = DEFAULT_MIN_BITS
) -> FormalValidationResult:
    entry = chain.key_records.get(key_id)
    if entry is None:
        checks = {
            "well_formed": False,
            "length_sufficient": False,
            "not_expired": False,
            "not_revoked": False,
        }
        return FormalValidationResult(key_id, False, checks)
    record, _ = entry
    revoked_at = _revoked_at(chain, key_id)
    checks = {
        "well_formed": True,
        "length_sufficient": record.key_length_bits >= min_bits,
        "not_expired": now < record.expires_at,
        "not_revoked": revoked_at is None or revoked_at > now,
    }
    return FormalValidationResult(key_id, all(checks.values()), checks)


def key_status(chain: Chain, key_id: bytes, now: int) -> str:
    """valid | expired | revoked | unknown.  Revocation wins over expiry."""
    entry = chain.key_records.get(key_id)
    if entry is None:
        return "unknown"
    revoked_at = _revoked_at(chain, key_id)
    if revoked_at is not None and revoked_at <= now:
        return "revoked"
    if now >= entry[0].expires_at:
        return "expired"
    return "valid"


def revoke_key(chain: Chain, key_id: bytes, issuer: KeyMaterial, now: int, provider) -> rec.RevocationRecord:
    """Build a self-signed key revocation for the pending pool."""
    entry = chain.key_records.get(key_id)
    if entry is None:
        raise UnknownKey(key_id.hex())
    if entry[0].public_bytes != issuer.public_bytes:
        raise NotAuthorized("keys may only be revoked by themselves")
    payload = rec.revocation_signing_payload("key", key_id, key_id, now)
    record = rec.RevocationRecord(
        revocation_id=b"\x00" * 32,
        kind="key",
        target_id=key_id,
        issuer_key_id=key_id,
        issuer_signature=provider.sign(issuer, payload),
        created_at=now,
    )
    return rec.seal(record)


def revoke_signature(
    chain: Chain, signature_id: bytes, issuer_key_id: bytes, issuer: KeyMaterial, now: int, provider
) -> rec.RevocationRecord:
    entry = chain.signature_records.get(signature_id)
    if entry is None:
        raise UnknownSignature(signature_id.hex())
    signature = entry[0]
    if signature.signer_key_id != issuer_key_id:
        raise NotAuthorized("only the original signer may revoke a signature")
    signer_entry = chain.key_records.get(issuer_key_id)
    if signer_entry is None or signer_entry[0].public_bytes != issuer.public_bytes:
        raise NotAuthorized("issuer key material does not match the signer key")
    payload = rec.revocation_signing_payload("signature", signature_id, issuer_key_id, now)
    record = rec.RevocationRecord(
        revocation_id=b"\x00" * 32,
        kind="signature",
        target_id=signature_id,
        issuer_key_id=issuer_key_id,
        issuer_signature=provider.sign(issuer, payload),
        created_at=now,
    )
    return rec.seal(record)


def signature_active(chain: Chain, signature: rec.SignatureRecord, now: int) -> bool:
    """Unexpired and unrevoked at ``now``."""
    if now >= signature.expires_at:
        return False
    for revocation, _ in chain.sig_revocations.get(signature.signature_id, ()):
        if revocation.created_at <= now:
            return False
    return True


def lookup_key(chain: Chain, query: LookupQuery, now: int) -> list[tuple[rec.PublicKeyRecord, str]]:
    """Exact-match search over key records registered within the trailing
    12-month window, in chain order."""
    query.check()

    def matches(record):
        if not isinstance(record, rec.PublicKeyRecord):
            return False
        if query.key_id is not None and record.key_id != query.key_id:
            return False
        if query.email is not None and record.owner.identifier != query.email:
            return False
        if query.name is not None and record.owner.display_name != query.name:
            return False
        return True

    found = traverse(chain, LOOKUP_WINDOW_DAYS, now, matches)
    return [(record, key_status(chain, record.key_id, now)) for record, _ in found]


def _involves(record: rec.Record, key_id: bytes) -> bool:
    if isinstance(record, rec.PublicKeyRecord):
        return record.key_id == key_id
    if isinstance(record, rec.ChallengeRecord):
        return key_id in (record.challenger_key_id, record.target_key_id, record.posted_by)
    if isinstance(record, rec.ResponseRecord):
        return key_id in (record.responder_key_id, record.posted_by)
    if isinstance(record, rec.VAResultRecord):
        return key_id in (record.verifier_key_id, record.target_key_id)
    if isinstance(record, rec.SignatureRecord):
        return key_id in (record.signer_key_id, record.signee_key_id)
    if isinstance(record, rec.RevocationRecord):
        return key_id in (record.target_id, record.issuer_key_id)
    if isinstance(record, rec.VARecord):
        return record.target_key_id == key_id
    return False


def history(chain: Chain, key_id: bytes) -> list[tuple[rec.Record, int]]:
    """Every record involving the key, in chain order."""
    out = []
    for record, height, _ in chain.iter_records():
        if _involves(record, key_id):
            out.append((record, height))
    return out
