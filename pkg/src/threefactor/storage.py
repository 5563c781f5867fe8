"""Store and card files.

A file is ``magic || version || body || sha256(magic || version || body)``
where ``body`` is a length-prefixed list: hash name, cipher name, record
kind, then the records themselves.  The trailing digest catches corruption;
it is not a MAC.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable

from .biometric import HelperData
from .crypto_core import CIPHER_NAME, HASH_NAME, SealedBox, lp_join, lp_split
from .errors import StoreIntegrityError
from .proposed_scheme import ProposedCard, RcStore, ServerStore, UserRecord

MAGIC = b"TFAS"
VERSION = 1

RC_FILE = "rc.store"
SERVER_FILE = "server.store"
USER_FILE = "user.store"
CARD_FILE = "card.bin"


def pack(kind: str, records: list[bytes]) -> bytes:
    head = MAGIC + bytes([VERSION]) + lp_join([HASH_NAME.encode(), CIPHER_NAME.encode(), kind.encode(), *records])
    return head + hashlib.sha256(head).digest()


def unpack(data: bytes, kind: str) -> list[bytes]:
    if len(data) < len(MAGIC) + 1 + 32:
        raise StoreIntegrityError("file too short")
    head, tag = data[:-32], data[-32:]
    if hashlib.sha256(head).digest() != tag:
        raise StoreIntegrityError("integrity tag mismatch")
    if head[:4] != MAGIC or head[4] != VERSION:
        raise StoreIntegrityError("unknown magic or version")
    try:
        parts = lp_split(head[5:])
    except ValueError as exc:
        raise StoreIntegrityError(str(exc)) from exc
    if len(parts) < 3 or parts[0] != HASH_NAME.encode() or parts[1] != CIPHER_NAME.encode():
        raise StoreIntegrityError("primitive names do not match this build")
    if parts[2] != kind.encode():
        raise StoreIntegrityError(f"expected a {kind} file, found {parts[2].decode(errors='replace')}")
    return parts[3:]


def _group(parts: list[bytes], width: int) -> list[list[bytes]]:
    if len(parts) % width:
        raise StoreIntegrityError("truncated record group")
    return [parts[i:i + width] for i in range(0, len(parts), width)]


def rc_to_bytes(s: RcStore) -> bytes:
    servers = [x for SID in sorted(s.servers) for x in (SID, s.servers[SID].to_bytes(), s.server_book[SID].encode())]
    users = [x for ID in sorted(s.users) for x in
             (ID, s.users[ID].SID, s.users[ID].UX.to_bytes(), s.users[ID].EX.to_bytes(), s.users[ID].R_cov.to_bytes())]
    return pack("rc", [s.RK_aes, lp_join(servers), lp_join(users)])


def rc_from_bytes(data: bytes) -> RcStore:
    RK, servers, users = _exact(unpack(data, "rc"), 3)
    s = RcStore(RK_aes=RK)
    for SID, box, addr in _group(lp_split(servers), 3):
        s.servers[SID] = SealedBox.from_bytes(box)
        s.server_book[SID] = addr.decode()
    for ID, SID, UX, EX, R_cov in _group(lp_split(users), 5):
        s.users[ID] = UserRecord(SID, SealedBox.from_bytes(UX), SealedBox.from_bytes(EX), SealedBox.from_bytes(R_cov))
    return s


def server_to_bytes(s: ServerStore) -> bytes:
    users = [x for ID in sorted(s.users) for x in (ID, s.users[ID].to_bytes())]
    EK = s.EK.to_bytes() if s.EK is not None else b""
    return pack("server", [s.SID, s.SK_aes, EK, lp_join(users)])


def server_from_bytes(data: bytes) -> ServerStore:
    SID, SK, EK, users = _exact(unpack(data, "server"), 4)
    s = ServerStore(SID=SID, SK_aes=SK, EK=SealedBox.from_bytes(EK) if EK else None)
    for ID, box in _group(lp_split(users), 2):
        s.users[ID] = SealedBox.from_bytes(box)
    return s


def user_to_bytes(name: str, server_name: str, contact: str) -> bytes:
    # the user keeps only names; the template lives in the user, not in a file
    return pack("user", [name.encode(), server_name.encode(), contact.encode()])


def user_from_bytes(data: bytes) -> tuple[str, str, str]:
    name, server_name, contact = _exact(unpack(data, "user"), 3)
    return name.decode(), server_name.decode(), contact.decode()


def card_to_bytes(card: ProposedCard) -> bytes:
    if not card.finalized:
        raise StoreIntegrityError("only finalized cards are written")
    return pack("card", [card.ID, card.SID, card.QX.to_bytes(), card.helper.to_bytes()])


def card_from_bytes(data: bytes) -> ProposedCard:
    ID, SID, QX, helper = _exact(unpack(data, "card"), 4)
    return ProposedCard(ID, SID, QX=SealedBox.from_bytes(QX), helper=HelperData.from_bytes(helper))


def _exact(parts: list[bytes], n: int) -> list[bytes]:
    if len(parts) != n:
        raise StoreIntegrityError(f"expected {n} records, found {len(parts)}")
    return parts


def write_world(world, directory: str | Path) -> list[Path]:
    """Write the three stores and the card of a provisioned world."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    u = world.user
    files = {
        RC_FILE: rc_to_bytes(world.rc.store),
        SERVER_FILE: server_to_bytes(world.server.store),
        USER_FILE: user_to_bytes(u.user_name, world.server.server_name, u.contact),
        CARD_FILE: card_to_bytes(u.card),
    }
    out = []
    for name, blob in files.items():
        path = d / name
        path.write_bytes(blob)
        out.append(path)
    return out


LOADERS: dict[str, Callable[[bytes], object]] = {
    RC_FILE: rc_from_bytes,
    SERVER_FILE: server_from_bytes,
    USER_FILE: user_from_bytes,
    CARD_FILE: card_from_bytes,
}


def read_stores(directory: str | Path) -> dict[str, object]:
    d = Path(directory)
    return {name: load((d / name).read_bytes()) for name, load in LOADERS.items()}
