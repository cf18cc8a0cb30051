"""Pluggable cryptographic primitives.

Two providers sit behind one interface: a fast, fully seed-deterministic
toy scheme (textbook RSA over gmpy2 primes) used by tests and the
simulation harness, and a standard scheme (RSA-2048 with PSS/OAEP via the
``cryptography`` package) for realistic runs.  All digests are SHA-256,
fixed at 32 bytes.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import struct
from dataclasses import dataclass

import gmpy2
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .errors import DecryptionFailure, MalformedKey, UnsupportedKeySize

DIGEST_SIZE = 32

SCHEME_TOY = "toy-deterministic"
SCHEME_STANDARD = "standard"

_SCHEME_TAGS = {SCHEME_TOY: 0, SCHEME_STANDARD: 1}
_TAG_SCHEMES = {v: k for k, v in _SCHEME_TAGS.items()}


def digest(data: bytes) -> bytes:
    """32-byte SHA-256 digest of ``data``."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyMaterial:
    """An asymmetric key pair.  ``private_bytes`` never leaves actor memory
    or the local keystore; chain records carry only ``public_bytes``."""

    public_bytes: bytes
    private_bytes: bytes
    key_length_bits: int
    scheme_id: str

    def __post_init__(self):
        if not self.public_bytes:
            raise MalformedKey("empty public key")
        if self.key_length_bits <= 0:
            raise MalformedKey("non-positive key length")


def _pub_of(key) -> bytes:
    return key.public_bytes if isinstance(key, KeyMaterial) else key


def _encode_int(n: int) -> bytes:
    raw = n.to_bytes((n.bit_length() + 7) // 8 or 1, "big")
    return struct.pack(">I", len(raw)) + raw


def _decode_int(data: bytes, offset: int) -> tuple[int, int]:
    if offset + 4 > len(data):
        raise MalformedKey("truncated integer field")
    (length,) = struct.unpack_from(">I", data, offset)
    offset += 4
    if offset + length > len(data):
        raise MalformedKey("truncated integer field")
    return int.from_bytes(data[offset : offset + length], "big"), offset + length


def _keystream_xor(key: bytes, data: bytes) -> bytes:
    out = bytearray(len(data))
    counter = 0
    pos = 0
    while pos < len(data):
        block = hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
        chunk = min(len(block), len(data) - pos)
        for i in range(chunk):
            out[pos + i] = data[pos + i] ^ block[i]
        pos += chunk
        counter += 1
    return bytes(out)


def _seal_body(session_key: bytes, plaintext: bytes) -> bytes:
    body = _keystream_xor(session_key, plaintext)
    mac = hashlib.sha256(b"mac" + session_key + body).digest()
    return mac + body


def _open_body(session_key: bytes, sealed: bytes) -> bytes:
    if len(sealed) < 32:
        raise DecryptionFailure("ciphertext too short")
    mac, body = sealed[:32], sealed[32:]
    if hashlib.sha256(b"mac" + session_key + body).digest() != mac:
        raise DecryptionFailure("integrity check failed")
    return _keystream_xor(session_key, body)


def symmetric_seal(secret: bytes, plaintext: bytes) -> bytes:
    """Authenticated symmetric wrap used for opaque challenge payloads."""
    return _seal_body(hashlib.sha256(b"wrap" + secret).digest(), plaintext)


def symmetric_open(secret: bytes, sealed: bytes) -> bytes:
    return _open_body(hashlib.sha256(b"wrap" + secret).digest(), sealed)


class ToyProvider:
    """Seed-deterministic textbook RSA.  Small moduli are acceptable here:
    the scheme only has to be honest within the simulation's actor model,
    not resist real attackers."""

    scheme_id = SCHEME_TOY
    min_key_bits = 128
    max_key_bits = 8192

    _E = 65537

    def generate_keypair(self, seed: int, min_bits: int) -> KeyMaterial:
        if min_bits < self.min_key_bits:
            min_bits = self.min_key_bits
        if min_bits > self.max_key_bits:
            raise UnsupportedKeySize(f"{min_bits} bits exceeds provider maximum")
        rng = random.Random(seed)
        half = (min_bits + 1) // 2
        while True:
            p = self._draw_prime(rng, half)
            q = self._draw_prime(rng, half)
            if p == q:
                continue
            phi = (p - 1) * (q - 1)
            if gmpy2.gcd(self._E, phi) != 1:
                continue
            n = p * q
            if n.bit_length() < min_bits:
                continue
            d = int(gmpy2.invert(self._E, phi))
            public = _encode_int(n) + _encode_int(self._E)
            private = _encode_int(n) + _encode_int(d)
            return KeyMaterial(public, private, n.bit_length(), self.scheme_id)

    @staticmethod
    def _draw_prime(rng: random.Random, bits: int) -> int:
        # Both top bits set so the product always reaches the target width.
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        return int(gmpy2.next_prime(candidate))

    @staticmethod
    def _parse(raw: bytes) -> tuple[int, int]:
        n, offset = _decode_int(raw, 0)
        x, offset = _decode_int(raw, offset)
        if offset != len(raw) or n < 4:
            raise MalformedKey("bad toy key encoding")
        return n, x

    def sign(self, private: KeyMaterial, message: bytes) -> bytes:
        n, d = self._parse(private.private_bytes)
        h = int.from_bytes(digest(message), "big") % n
        sig = int(gmpy2.powmod(h, d, n))
        return sig.to_bytes((n.bit_length() + 7) // 8, "big")

    def verify(self, public, message: bytes, signature: bytes) -> bool:
        try:
            n, e = self._parse(_pub_of(public))
        except MalformedKey:
            raise
        sig = int.from_bytes(signature, "big")
        if sig >= n:
            return False
        h = int.from_bytes(digest(message), "big") % n
        return gmpy2.powmod(sig, e, n) == h

    def encrypt(self, public, plaintext: bytes, rng: random.Random | None = None) -> bytes:
        n, e = self._parse(_pub_of(public))
        if rng is None:
            k = secrets.randbelow(n - 2) + 2
        else:
            k = rng.randrange(2, n)
        c1 = int(gmpy2.powmod(k, e, n)).to_bytes((n.bit_length() + 7) // 8, "big")
        session_key = hashlib.sha256(k.to_bytes((n.bit_length() + 7) // 8, "big")).digest()
        return struct.pack(">I", len(c1)) + c1 + _seal_body(session_key, plaintext)

    def decrypt(self, private: KeyMaterial, ciphertext: bytes) -> bytes:
        n, d = self._parse(private.private_bytes)
        if len(ciphertext) < 4:
            raise DecryptionFailure("ciphertext too short")
        (c1_len,) = struct.unpack_from(">I", ciphertext, 0)
        if 4 + c1_len > len(ciphertext):
            raise DecryptionFailure("ciphertext too short")
        c1 = int.from_bytes(ciphertext[4 : 4 + c1_len], "big")
        if c1 >= n:
            raise DecryptionFailure("ciphertext outside modulus")
        k = int(gmpy2.powmod(c1, d, n))
        session_key = hashlib.sha256(k.to_bytes((n.bit_length() + 7) // 8, "big")).digest()
        return _open_body(session_key, ciphertext[4 + c1_len :])


class StandardProvider:
    """RSA with PSS signatures and OAEP-wrapped hybrid encryption.

    Key generation is not seed-deterministic; only round-trip properties
    are promised for this scheme.
    """

    scheme_id = SCHEME_STANDARD
    min_key_bits = 2048
    max_key_bits = 4096

    def generate_keypair(self, seed: int, min_bits: int) -> KeyMaterial:
        bits = max(min_bits, self.min_key_bits)
        if bits > self.max_key_bits:
            raise UnsupportedKeySize(f"{bits} bits exceeds provider maximum")
        key = rsa.generate_private_key(public_exponent=65537, key_size=bits)
        public = key.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        private = key.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
        return KeyMaterial(public, private, bits, self.scheme_id)

    @staticmethod
    def _load_public(raw: bytes):
        try:
            return serialization.load_der_public_key(raw)
        except Exception as exc:
            raise MalformedKey(str(exc)) from exc

    @staticmethod
    def _load_private(raw: bytes):
        try:
            return serialization.load_der_private_key(raw, password=None)
        except Exception as exc:
            raise MalformedKey(str(exc)) from exc

    def sign(self, private: KeyMaterial, message: bytes) -> bytes:
        key = self._load_private(private.private_bytes)
        return key.sign(
            message,
            padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.MAX_LENGTH),
            hashes.SHA256(),
        )

    def verify(self, public, message: bytes, signature: bytes) -> bool:
        key = self._load_public(_pub_of(public))
        try:
            key.verify(
                signature,
                message,
                padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.MAX_LENGTH),
                hashes.SHA256(),
            )
            return True
        except InvalidSignature:
            return False

    def encrypt(self, public, plaintext: bytes, rng: random.Random | None = None) -> bytes:
        key = self._load_public(_pub_of(public))
        session_key = secrets.token_bytes(32) if rng is None else rng.randbytes(32)
        wrapped = key.encrypt(
            session_key,
            padding.OAEP(mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(), label=None),
        )
        return struct.pack(">I", len(wrapped)) + wrapped + _seal_body(session_key, plaintext)

    def decrypt(self, private: KeyMaterial, ciphertext: bytes) -> bytes:
        key = self._load_private(private.private_bytes)
        if len(ciphertext) < 4:
            raise DecryptionFailure("ciphertext too short")
        (wlen,) = struct.unpack_from(">I", ciphertext, 0)
        if 4 + wlen > len(ciphertext):
            raise DecryptionFailure("ciphertext too short")
        try:
            session_key = key.decrypt(
                ciphertext[4 : 4 + wlen],
                padding.OAEP(
                    mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(), label=None
                ),
            )
        except Exception as exc:
            raise DecryptionFailure("session key unwrap failed") from exc
        return _open_body(session_key, ciphertext[4 + wlen :])


_PROVIDERS = {SCHEME_TOY: ToyProvider, SCHEME_STANDARD: StandardProvider}


def get_provider(scheme_id: str):
    try:
        return _PROVIDERS[scheme_id]()
    except KeyError:
        raise MalformedKey(f"unknown scheme {scheme_id!r}") from None


def save_keystore(path, key: KeyMaterial) -> None:
    """Write one key pair to a binary keystore file."""
    blob = bytes([_SCHEME_TAGS[key.scheme_id]])
    blob += struct.pack(">I", key.key_length_bits)
    blob += struct.pack(">I", len(key.public_bytes)) + key.public_bytes
    blob += struct.pack(">I", len(key.private_bytes)) + key.private_bytes
    with open(path, "wb") as fh:
        fh.write(blob)


def load_keystore(path) -> KeyMaterial:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        scheme = _TAG_SCHEMES[blob[0]]
        (bits,) = struct.unpack_from(">I", blob, 1)
        (plen,) = struct.unpack_from(">I", blob, 5)
        public = blob[9 : 9 + plen]
        (slen,) = struct.unpack_from(">I", blob, 9 + plen)
        start = 13 + plen
        private = blob[start : start + slen]
        if len(public) != plen or len(private) != slen or start + slen != len(blob):
            raise ValueError("truncated keystore")
    except (KeyError, IndexError, ValueError, struct.error) as exc:
        raise MalformedKey(f"bad keystore file: {exc}") from exc
    return KeyMaterial(public, private, bits, scheme)
