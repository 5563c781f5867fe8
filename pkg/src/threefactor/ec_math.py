"""Short-Weierstrass curve arithmetic over a prime field.

Two named profiles are provided: ``tiny`` (y^2 = x^3 + 3x + 2 over F_97,
prime group order 103, small enough to check every group axiom by brute
force) and ``std256`` (NIST P-256).  None of this is constant time.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

from .crypto_core import Block32, Rng, hash_blocks
from .errors import PreconditionError


@dataclass(frozen=True)
class Point:
    x: Optional[int]
    y: Optional[int]

    @property
    def is_identity(self) -> bool:
        return self.x is None


IDENTITY = Point(None, None)


@dataclass(frozen=True)
class CurveParams:
    name: str
    p: int
    a: int
    b: int
    G: Point
    n: int

    @property
    def width(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def validate(self) -> None:
        if (4 * self.a**3 + 27 * self.b**2) % self.p == 0:
            raise PreconditionError("singular curve")
        if not on_curve(self.G, self):
            raise PreconditionError("base point not on curve")
        if not scalar_mul(self.n, self.G, self).is_identity:
            raise PreconditionError("base point order is not n")


def on_curve(q: Point, params: CurveParams) -> bool:
    if q.is_identity:
        return True
    x, y, p = q.x, q.y, params.p
    if not (0 <= x < p and 0 <= y < p):
        return False
    return (y * y - (x * x * x + params.a * x + params.b)) % p == 0


def _require(q: Point, params: CurveParams) -> None:
    if not on_curve(q, params):
        raise PreconditionError(f"point {q} is not on curve {params.name}")


def negate(q: Point, params: CurveParams) -> Point:
    if q.is_identity:
        return q
    return Point(q.x, (-q.y) % params.p)


def _add(p1: Point, p2: Point, params: CurveParams) -> Point:
    if p1.is_identity:
        return p2
    if p2.is_identity:
        return p1
    p = params.p
    if p1.x == p2.x:
        if (p1.y + p2.y) % p == 0:
            return IDENTITY
        lam = (3 * p1.x * p1.x + params.a) * pow(2 * p1.y, -1, p) % p
    else:
        lam = (p2.y - p1.y) * pow(p2.x - p1.x, -1, p) % p
    x3 = (lam * lam - p1.x - p2.x) % p
    y3 = (lam * (p1.x - x3) - p1.y) % p
    return Point(x3, y3)


def add(p1: Point, p2: Point, params: CurveParams) -> Point:
    _require(p1, params)
    _require(p2, params)
    return _add(p1, p2, params)


def scalar_mul(k: int, q: Point, params: CurveParams) -> Point:
    """Left-to-right double-and-add."""
    _require(q, params)
    if k < 0:
        raise PreconditionError("scalar must be non-negative")
    acc = IDENTITY
    for bit in bin(k)[2:] if k else "":
        acc = _add(acc, acc, params)
        if bit == "1":
            acc = _add(acc, q, params)
    return acc


def random_scalar(rng: Rng, params: CurveParams) -> int:
    """Element of Z_n* drawn by rejection sampling."""
    while True:
        k = rng.randbelow(params.n)
        if k:
            return k


def encode_point(q: Point, params: CurveParams) -> bytes:
    if q.is_identity:
        return b"\x00"
    w = params.width
    return b"\x04" + q.x.to_bytes(w, "big") + q.y.to_bytes(w, "big")


def decode_point(data: bytes, params: CurveParams) -> Point:
    if data == b"\x00":
        return IDENTITY
    w = params.width
    if len(data) != 1 + 2 * w or data[0] != 4:
        raise PreconditionError("bad point encoding")
    q = Point(int.from_bytes(data[1:1 + w], "big"), int.from_bytes(data[1 + w:], "big"))
    _require(q, params)
    return q


def point_block(q: Point, params: CurveParams) -> Block32:
    """Length-prefixed pre-hash so a point can enter the fixed-block hash."""
    enc = encode_point(q, params)
    return hashlib.sha256(struct.pack(">I", len(enc)) + enc).digest()


def point_key(q: Point, params: CurveParams) -> Block32:
    """h(Q) for a shared ECDH point."""
    return hash_blocks([point_block(q, params)])


TINY = CurveParams("tiny", p=97, a=3, b=2, G=Point(0, 14), n=103)

STD256 = CurveParams(
    "std256",
    p=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFC,
    b=0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B,
    G=Point(
        0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
        0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5,
    ),
    n=0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
)

CURVES = {c.name: c for c in (TINY, STD256)}


def curve_by_name(name: str) -> CurveParams:
    try:
        return CURVES[name]
    except KeyError:
        raise PreconditionError(f"unknown curve profile {name!r}; choose from {sorted(CURVES)}") from None
