"""Simulated biometric templates and a code-offset fuzzy extractor.

A template is a fixed-length bit vector.  ``gen`` draws a 256-bit key,
encodes it with a repetition code (each key bit repeated ``n_t // 256``
times) and publishes ``offset = codeword XOR template`` plus a digest of the
key.  ``rep`` undoes the offset with a fresh reading and majority-decodes
each group.  With the default ``n_t = 1024`` every 4-bit group tolerates one
flipped bit; anything that decodes to a different key fails the digest check
and raises :class:`BiometricMismatch` instead of returning a wrong key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crypto_core import BLOCK, Block32, Rng, check_block, hash_blocks, random_block
from .errors import BiometricMismatch, PreconditionError

KEY_BITS = BLOCK * 8
DEFAULT_BITS = 1024


def _as_bits(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.uint8)
    if arr.ndim != 1 or np.any(arr > 1):
        raise PreconditionError("template bits must be a flat 0/1 vector")
    return arr


@dataclass(frozen=True, eq=False)
class Template:
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = _as_bits(self.bits)
        if len(bits) == 0 or len(bits) % KEY_BITS:
            raise PreconditionError(f"template length must be a positive multiple of {KEY_BITS}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Template) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits).tobytes()

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def from_hex(cls, text: str) -> "Template":
        raw = bytes.fromhex("".join(text.split()))
        return cls(np.unpackbits(np.frombuffer(raw, dtype=np.uint8)))


@dataclass(frozen=True, eq=False)
class HelperData:
    offset: np.ndarray
    check: Block32

    def __post_init__(self) -> None:
        offset = _as_bits(self.offset)
        offset.setflags(write=False)
        object.__setattr__(self, "offset", offset)
        check_block(self.check, what="helper check")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, HelperData)
            and np.array_equal(self.offset, other.offset)
            and self.check == other.check
        )

    def to_bytes(self) -> bytes:
        return self.check + np.packbits(self.offset).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HelperData":
        if len(data) <= BLOCK:
            raise PreconditionError("helper data too short")
        offset = np.unpackbits(np.frombuffer(data[BLOCK:], dtype=np.uint8))
        return cls(offset, bytes(data[:BLOCK]))


def repetition(n_t: int) -> int:
    if n_t % KEY_BITS:
        raise PreconditionError(f"template length must be a multiple of {KEY_BITS}")
    return n_t // KEY_BITS


def tolerance(n_t: int) -> int:
    """Flips per repetition group that decoding always corrects."""
    return (repetition(n_t) - 1) // 2


def encode(key: Block32, n_t: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(check_block(key, what="key"), dtype=np.uint8))
    return np.repeat(bits, repetition(n_t))


def decode(word: np.ndarray) -> Block32:
    r = repetition(len(word))
    votes = word.reshape(KEY_BITS, r).sum(axis=1, dtype=np.int64)
    # ties (possible for even r) decode to 0; the digest check catches them
    bits = (2 * votes > r).astype(np.uint8)
    return np.packbits(bits).tobytes()


def random_template(rng: Rng, n_t: int = DEFAULT_BITS) -> Template:
    raw = rng.random_bytes(n_t // 8)
    return Template(np.unpackbits(np.frombuffer(raw, dtype=np.uint8)))


def gen(b: Template, rng: Rng) -> tuple[Block32, HelperData]:
    key = random_block(rng)
    offset = encode(key, len(b)) ^ b.bits
    return key, HelperData(offset, hash_blocks([key]))


def rep(b2: Template, helper: HelperData) -> Block32:
    if len(b2) != len(helper.offset):
        raise PreconditionError("template length differs from helper data")
    key = decode(helper.offset ^ b2.bits)
    if hash_blocks([key]) != helper.check:
        raise BiometricMismatch("biometric reading is not close enough to the enrolled template")
    return key


def perturb(b: Template, flips: int, rng: Rng) -> Template:
    """Invert exactly ``flips`` distinct, randomly chosen bit positions."""
    n = len(b)
    if not 0 <= flips <= n:
        raise PreconditionError("flips must be between 0 and the template length")
    positions: list[int] = []
    seen: set[int] = set()
    while len(positions) < flips:
        pos = rng.randbelow(n)
        if pos not in seen:
            seen.add(pos)
            positions.append(pos)
    bits = b.bits.copy()
    bits[positions] ^= 1
    return Template(bits)


def perturb_per_group(b: Template, rng: Rng, per_group: int = 1) -> Template:
    """Flip ``per_group`` bits inside every repetition group (worst-case noise)."""
    r = repetition(len(b))
    if not 0 <= per_group <= r:
        raise PreconditionError("per_group exceeds the repetition factor")
    bits = b.bits.copy()
    for g in range(KEY_BITS):
        chosen: set[int] = set()
        while len(chosen) < per_group:
            chosen.add(rng.randbelow(r))
        for c in chosen:
            bits[g * r + c] ^= 1
    return Template(bits)


def hamming(a: Template, b: Template) -> int:
    return int(np.count_nonzero(a.bits != b.bits))
