"""Byte-exact primitives shared by the legacy and the proposed scheme.

Every atomic protocol value is a 32-byte block; 64-byte values are the
concatenation of two blocks.  ``hash_blocks`` digests the raw concatenation
of its fields, so a 64-byte field contributes exactly like its two halves
listed separately::

    hash_blocks([k, w, bp]) == hash_blocks([k + w, bp])

Symmetric encryption is AES-256-CTR with an HMAC-SHA256 tag over
``nonce || ciphertext`` (encrypt-then-MAC).  The tag is what lets a caller
notice that a box was opened with the wrong key.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import DecryptError, PreconditionError

BLOCK = 32
WIDE = 64
KEY_SIZE = 32
NONCE_SIZE = 16
TAG_SIZE = 32

HASH_NAME = "sha256"
CIPHER_NAME = "aes256-ctr+hmac-sha256"

ZERO32 = bytes(BLOCK)
ZERO64 = bytes(WIDE)

Block32 = bytes
Block64 = bytes
SymKey = bytes


def check_block(value: bytes, size: int = BLOCK, what: str = "block") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != size:
        got = len(value) if isinstance(value, (bytes, bytearray)) else type(value).__name__
        raise PreconditionError(f"{what} must be exactly {size} bytes, got {got}")
    return bytes(value)


def split64(value: Block64) -> tuple[Block32, Block32]:
    check_block(value, WIDE, "Block64")
    return value[:BLOCK], value[BLOCK:]


def hash_blocks(fields: Iterable[bytes]) -> Block32:
    """SHA-256 over the flattened concatenation of 32/64-byte fields."""
    h = hashlib.sha256()
    count = 0
    for field in fields:
        if not isinstance(field, (bytes, bytearray)) or len(field) not in (BLOCK, WIDE):
            raise PreconditionError("hash fields must be Block32 or Block64")
        h.update(field)
        count += 1
    if count == 0:
        raise PreconditionError("hash needs at least one field")
    return h.digest()


def xor(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise PreconditionError(f"xor length mismatch: {len(a)} != {len(b)}")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def expand(x: Block32) -> Block64:
    """Repeat a block to 64 bytes so it can be xored against a wide value."""
    return check_block(x) * 2


def canonical_id(identity: str) -> Block32:
    """Map a human-readable identity (or password) to a fixed block."""
    if not identity:
        raise PreconditionError("identity must be a non-empty string")
    raw = identity.encode("utf-8")
    return hashlib.sha256(struct.pack(">I", len(raw)) + raw).digest()


def kdf_biokey(b: Block32) -> SymKey:
    """Normalize a biometric key into an encryption key."""
    return hashlib.sha256(b"threefactor/biokey" + check_block(b, what="biometric key")).digest()


class Rng:
    """Counter-mode PRF stream over a 64-bit seed.

    Block ``i`` is ``SHA-256("threefactor/rng" || seed || i)``.  Nothing here
    touches OS entropy, so every run is reproducible from its seed.
    """

    def __init__(self, seed: int) -> None:
        if not 0 <= seed < 2**64:
            raise PreconditionError("seed must fit in 64 bits")
        self.seed = seed
        self.counter = 0
        self._buffer = b""

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def _block(self) -> bytes:
        out = hashlib.sha256(
            b"threefactor/rng" + struct.pack(">QQ", self.seed, self.counter)
        ).digest()
        self.counter += 1
        return out

    def random_bytes(self, n: int) -> bytes:
        while len(self._buffer) < n:
            self._buffer += self._block()
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise PreconditionError("randbelow bound must be positive")
        bits = n.bit_length()
        nbytes = (bits + 7) // 8
        mask = (1 << bits) - 1
        while True:
            v = int.from_bytes(self.random_bytes(nbytes), "big") & mask
            if v < n:
                return v

    def derive(self, label: str) -> "Rng":
        """Independent child stream; does not advance this one."""
        digest = hashlib.sha256(
            b"threefactor/derive" + struct.pack(">Q", self.seed) + label.encode()
        ).digest()
        return Rng(int.from_bytes(digest[:8], "big"))


def random_block(rng: Rng) -> Block32:
    return rng.random_bytes(BLOCK)


@dataclass(frozen=True)
class SealedBox:
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return b"".join(struct.pack(">I", len(p)) + p for p in (self.nonce, self.ciphertext, self.tag))

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedBox":
        parts = []
        pos = 0
        for _ in range(3):
            if pos + 4 > len(data):
                raise DecryptError("truncated sealed box")
            (n,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise DecryptError("truncated sealed box")
            parts.append(bytes(data[pos:pos + n]))
            pos += n
        if pos != len(data):
            raise DecryptError("trailing bytes after sealed box")
        return cls(*parts)


def _subkeys(key: SymKey) -> tuple[bytes, bytes]:
    check_block(key, KEY_SIZE, "symmetric key")
    enc = hmac.new(key, b"enc", hashlib.sha256).digest()
    mac = hmac.new(key, b"mac", hashlib.sha256).digest()
    return enc, mac


def _ctr(key: bytes, nonce: bytes, data: bytes) -> bytes:
    ctx = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return ctx.update(data) + ctx.finalize()


def seal(plaintext: bytes, key: SymKey, rng: Rng) -> SealedBox:
    enc, mac = _subkeys(key)
    nonce = rng.random_bytes(NONCE_SIZE)
    ct = _ctr(enc, nonce, bytes(plaintext))
    tag = hmac.new(mac, nonce + ct, hashlib.sha256).digest()
    return SealedBox(nonce, ct, tag)


def open_box(box: SealedBox, key: SymKey) -> bytes:
    """Inverse of :func:`seal`; raises DecryptError on wrong key or tampering."""
    enc, mac = _subkeys(key)
    if len(box.nonce) != NONCE_SIZE or len(box.tag) != TAG_SIZE:
        raise DecryptError("malformed sealed box")
    expected = hmac.new(mac, box.nonce + box.ciphertext, hashlib.sha256).digest()
    if not hmac.compare_digest(expected, box.tag):
        raise DecryptError("authentication tag mismatch")
    return _ctr(enc, box.nonce, box.ciphertext)


def open_block(box: SealedBox, key: SymKey, size: int = BLOCK) -> bytes:
    """Open a box whose plaintext must be a block of ``size`` bytes."""
    plain = open_box(box, key)
    if len(plain) != size:
        raise DecryptError(f"expected {size}-byte plaintext, got {len(plain)}")
    return plain


def lp_join(parts: Sequence[bytes]) -> bytes:
    """Length-prefix (4-byte big-endian) and concatenate."""
    return b"".join(struct.pack(">I", len(p)) + bytes(p) for p in parts)


def lp_split(data: bytes) -> list[bytes]:
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise PreconditionError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise PreconditionError("truncated field")
        out.append(bytes(data[pos:pos + n]))
        pos += n
    return out
