"""Adversary strategies against the legacy scheme.

The card is assumed readable by side channels, so :func:`extract_card` just
copies it.  Guessing runs the card's own password verifier offline;
impersonation and masquerading then drive honest legacy actors through a
:class:`~threefactor.fabric.Network`.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

from .actor import Actor, Outgoing
from .biometric import HelperData
from .crypto_core import Block32, Rng, hash_blocks, xor
from .ec_math import CurveParams, point_block, point_key, random_scalar, scalar_mul
from .errors import AuthError, IllegalStat, NotFound, PreconditionError
from .fabric import Network
from .li_scheme import (
    LiCard,
    LiLoginRequest,
    LiReply,
    LiServerActor,
    LiServerState,
    LiSession,
    rpw,
)
from .wire import Channel, Envelope, Phase, Stat


@dataclass(frozen=True)
class ExtractedCard:
    e: Block32
    f: Block32
    r: Block32
    helper: HelperData
    K: Block32

    def to_card(self) -> LiCard:
        return LiCard(self.e, self.f, self.r, self.helper, self.K)


def extract_card(card: LiCard | ExtractedCard) -> ExtractedCard:
    if isinstance(card, ExtractedCard):
        card = card.to_card()
    # go through the serialized form, which is what a power trace yields
    c = LiCard.from_bytes(card.to_bytes())
    return ExtractedCard(c.e, c.f, c.r, c.helper, c.K)


class Dictionary(Sequence[str]):
    """Ordered candidate list; order matters because the search stops early."""

    def __init__(self, words: Sequence[str]) -> None:
        self.words = tuple(words)

    def __len__(self) -> int:
        return len(self.words)

    def __getitem__(self, i):
        return self.words[i]

    def __iter__(self) -> Iterator[str]:
        return iter(self.words)

    @classmethod
    def from_file(cls, path: str | Path) -> "Dictionary":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.splitlines() if line])

    @classmethod
    def synthetic(cls, size: int, rng: Rng, plant: Optional[str] = None,
                  at: Optional[int] = None) -> "Dictionary":
        """``size`` distinct lowercase words; ``plant`` replaces the word at index ``at``."""
        if size < 0 or (plant is not None and not (at is None or 0 <= at < size)):
            raise PreconditionError("bad dictionary size or plant index")
        alphabet = string.ascii_lowercase + string.digits
        seen: set[str] = {plant} if plant is not None else set()
        words: list[str] = []
        while len(words) < size:
            raw = rng.random_bytes(10)
            w = "".join(alphabet[b % len(alphabet)] for b in raw[: 6 + raw[-1] % 4])
            if w not in seen:
                seen.add(w)
                words.append(w)
        if plant is not None and size:
            words[rng.randbelow(size) if at is None else at] = plant
        return cls(words)

    def index(self, word: str) -> int:
        return self.words.index(word)


def guess_password(x: ExtractedCard, ID: Block32, dictionary: Sequence[str]) -> tuple[str, int]:
    """First candidate whose recomputed ``r`` equals the card's, plus evaluations used."""
    n = 0
    for candidate in dictionary:
        n += 1
        if hash_blocks([ID, rpw(candidate, x.K)]) == x.r:
            return candidate, n
    raise NotFound(n)


@dataclass(frozen=True)
class AttackOutcome:
    accepted: bool
    attacker_sk: Optional[Block32]
    victim_sk: Optional[Block32]
    detail: str

    @property
    def keys_agree(self) -> bool:
        return self.accepted and self.attacker_sk is not None and self.attacker_sk == self.victim_sk


class LiImpersonator(Actor):
    """Plays the user with a stolen card and a guessed password; no biometric needed."""

    def __init__(self, name: str, server: str, x: ExtractedCard, ID: Block32, password: str,
                 curve: CurveParams) -> None:
        super().__init__(name)
        self.server, self.x, self.ID, self.password, self.curve = server, x, ID, password, curve
        self.session: Optional[LiSession] = None
        self.sk: Optional[Block32] = None

    def start(self, rng: Rng) -> list[Outgoing]:
        M_1 = xor(self.x.e, hash_blocks([self.x.f, rpw(self.password, self.x.K)]))
        a = random_scalar(rng, self.curve)
        M_2 = scalar_mul(a, self.curve.G, self.curve)
        M_3 = hash_blocks([M_1, point_block(M_2, self.curve)])
        self.session = LiSession("user", a, M_1, M_2)
        req = LiLoginRequest(self.ID, M_2, M_3)
        return [Outgoing(self.server, Channel.INSECURE, req.envelope(self.curve))]

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        if (env.phase, env.stat) != (Phase.LI_LOGIN, Stat.Auth) or self.session is None:
            raise IllegalStat(f"impersonator cannot accept {env.describe()}")
        reply = LiReply.from_envelope(env, self.curve)
        s = self.session
        expected = hash_blocks([s.M_1, point_block(s.M_2, self.curve), point_block(reply.M_5, self.curve)])
        if expected != reply.M_6:
            raise AuthError("M_6 != M_c6")
        self.sk = point_key(scalar_mul(s.scalar, reply.M_5, self.curve), self.curve)
        return []


def impersonate_user(x: ExtractedCard, ID: Block32, password: str, curve: CurveParams, rng: Rng,
                     server: LiServerActor, net: Optional[Network] = None) -> AttackOutcome:
    """Log in to an honest server as ``ID`` using only card contents and a guess."""
    if net is None:
        net = Network(rng.derive("impersonation"))
    if server.name not in net.actors:
        net.add(server)
    attacker = LiImpersonator("adversary", server.name, x, ID, password, curve)
    if attacker.name not in net.actors:
        net.add(attacker)
    before = len(server.established)
    net.send(attacker.name, attacker.start(net.actor_rng(attacker)))
    net.run()
    accepted = len(server.established) > before
    server_sk = server.established[-1][1] if accepted else None
    detail = "accepted" if accepted else (server.events[-1].detail if server.events else "rejected")
    return AttackOutcome(accepted, attacker.sk, server_sk, detail)


class MasqueradingServer(LiServerActor):
    """Answers any login with a stolen ``X_s``.

    With ``reuse_ephemeral`` the same ``b`` (hence the same ``M_5``) is sent
    every time, the replay arm of the strategy.
    """

    def __init__(self, name: str, X_s: Block32, curve: CurveParams, rng: Rng,
                 reuse_ephemeral: bool = False) -> None:
        super().__init__(name, LiServerState(X_s, curve))
        self.fixed_b = random_scalar(rng, curve) if reuse_ephemeral else None

    def respond(self, req: LiLoginRequest, rng: Rng) -> tuple[LiReply, LiSession]:
        curve = self.state.curve
        M_4 = hash_blocks([req.ID, self.state.X_s])
        b = self.fixed_b if self.fixed_b is not None else random_scalar(rng, curve)
        M_5 = scalar_mul(b, curve.G, curve)
        M_6 = hash_blocks([M_4, point_block(req.M_2, curve), point_block(M_5, curve)])
        sk = point_key(scalar_mul(b, req.M_2, curve), curve)
        return LiReply(M_5, M_6), LiSession("server", b, M_4, req.M_2, M_5, sk)


def masquerade_server(X_s: Block32, curve: CurveParams, rng: Rng, name: str = "server",
                      reuse_ephemeral: bool = False) -> MasqueradingServer:
    return MasqueradingServer(name, X_s, curve, rng, reuse_ephemeral)
