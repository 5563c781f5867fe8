"""Envelope codec.

Layout: ``phase (1) || stat (1) || field count (1)`` followed by one
``field id (1) || length (4, big-endian) || bytes`` record per field, in
order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

from .errors import PreconditionError


class Phase(IntEnum):
    SERVER_REG = 1
    USER_REG = 2
    LOGIN = 3
    PASS_CHANGE = 4
    PASS_RECOVERY = 5
    CARD_RECOVERY = 6
    LI_LOGIN = 16


class Stat(IntEnum):
    Register = 1
    Accept = 2
    Ack = 3
    Complete = 4
    Reject = 5
    Deregister = 6
    Login = 7
    Auth = 8
    Passchange = 9
    Fail = 10
    Recovery = 11
    Verify = 12
    Done = 13
    RecoveryS = 14
    VerifyS = 15
    DoneS = 16
    AcceptS = 17


class Field(IntEnum):
    ID = 1
    SID = 2
    BP = 3
    R_CONT = 4
    K_S = 5
    TX = 6
    TX_N = 7
    TC = 8
    TC_N = 9
    TCX = 10
    BP_N = 11
    NONCE = 12
    M1 = 21
    M2 = 22
    M4 = 24
    M5 = 25
    M7 = 27
    # legacy scheme; M2/M5 there are encoded curve points
    LI_M2 = 32
    LI_M3 = 33
    LI_M5 = 35
    LI_M6 = 36


class Channel(IntEnum):
    SECURE = 1
    INSECURE = 2
    OUT_OF_BAND = 3


@dataclass(frozen=True)
class Envelope:
    phase: Phase
    stat: Stat
    fields: tuple[tuple[Field, bytes], ...]

    @classmethod
    def make(cls, phase: Phase, stat: Stat, *fields: tuple[Field, bytes]) -> "Envelope":
        return cls(phase, stat, tuple((Field(f), bytes(v)) for f, v in fields))

    def get(self, field: Field) -> bytes:
        for f, v in self.fields:
            if f == field:
                return v
        raise KeyError(field.name)

    def has(self, field: Field) -> bool:
        return any(f == field for f, _ in self.fields)

    def names(self) -> list[str]:
        return [f.name for f, _ in self.fields]

    def values(self) -> Iterable[bytes]:
        return (v for _, v in self.fields)

    def replace(self, field: Field, value: bytes) -> "Envelope":
        return Envelope(self.phase, self.stat, tuple((f, value if f == field else v) for f, v in self.fields))

    def encode(self) -> bytes:
        if len(self.fields) > 255:
            raise PreconditionError("too many fields")
        out = bytearray((int(self.phase), int(self.stat), len(self.fields)))
        for f, v in self.fields:
            out += struct.pack(">BI", int(f), len(v)) + v
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "Envelope":
        if len(data) < 3:
            raise PreconditionError("envelope too short")
        try:
            phase, stat = Phase(data[0]), Stat(data[1])
        except ValueError as exc:
            raise PreconditionError(str(exc)) from None
        count = data[2]
        pos = 3
        fields = []
        for _ in range(count):
            if pos + 5 > len(data):
                raise PreconditionError("truncated field header")
            fid, n = struct.unpack_from(">BI", data, pos)
            pos += 5
            if pos + n > len(data):
                raise PreconditionError("truncated field body")
            try:
                fields.append((Field(fid), bytes(data[pos:pos + n])))
            except ValueError:
                raise PreconditionError(f"unknown field id {fid}") from None
            pos += n
        if pos != len(data):
            raise PreconditionError("trailing bytes after envelope")
        return cls(phase, stat, tuple(fields))

    def describe(self) -> str:
        return f"{self.phase.name}/{self.stat.name}{{{','.join(self.names())}}}"
