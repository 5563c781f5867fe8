"""The legacy ECC-based three-factor scheme, implemented faithfully (flaws included).

Registration center and server are one trusted party holding the master
secret ``X_s``.  Everything here is a pure step function; sessions are plain
values owned by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import biometric
from .actor import Actor, Outgoing
from .biometric import HelperData, Template
from .crypto_core import Block32, Rng, canonical_id, check_block, hash_blocks, lp_join, lp_split, random_block, xor
from .ec_math import CurveParams, Point, decode_point, encode_point, point_block, point_key, random_scalar, scalar_mul
from .errors import AuthError, BiometricMismatch, IllegalStat, PasswordMismatch, PreconditionError, VerifyError
from .wire import Channel, Envelope, Field, Phase, Stat


@dataclass(frozen=True)
class LiCard:
    e: Block32
    f: Block32
    r: Block32
    helper: HelperData
    K: Block32

    def to_bytes(self) -> bytes:
        return lp_join([self.e, self.f, self.r, self.helper.to_bytes(), self.K])

    @classmethod
    def from_bytes(cls, data: bytes) -> "LiCard":
        parts = lp_split(data)
        if len(parts) != 5:
            raise PreconditionError("legacy card needs exactly five fields")
        e, f, r, helper, k = parts
        return cls(e, f, r, HelperData.from_bytes(helper), k)


@dataclass
class LiServerState:
    X_s: Block32
    curve: CurveParams
    users: set[Block32] = field(default_factory=set)

    def to_bytes(self) -> bytes:
        # the master secret sits in the clear, which is exactly the weakness
        return lp_join([b"li-server", self.curve.name.encode(), self.X_s, *sorted(self.users)])


@dataclass(frozen=True)
class LiLoginRequest:
    ID: Block32
    M_2: Point
    M_3: Block32

    def envelope(self, curve: CurveParams) -> Envelope:
        return Envelope.make(
            Phase.LI_LOGIN, Stat.Login,
            (Field.ID, self.ID), (Field.LI_M2, encode_point(self.M_2, curve)), (Field.LI_M3, self.M_3),
        )

    @classmethod
    def from_envelope(cls, env: Envelope, curve: CurveParams) -> "LiLoginRequest":
        return cls(env.get(Field.ID), decode_point(env.get(Field.LI_M2), curve), env.get(Field.LI_M3))


@dataclass(frozen=True)
class LiReply:
    M_5: Point
    M_6: Block32

    def envelope(self, curve: CurveParams) -> Envelope:
        return Envelope.make(
            Phase.LI_LOGIN, Stat.Auth,
            (Field.LI_M5, encode_point(self.M_5, curve)), (Field.LI_M6, self.M_6),
        )

    @classmethod
    def from_envelope(cls, env: Envelope, curve: CurveParams) -> "LiReply":
        return cls(decode_point(env.get(Field.LI_M5), curve), env.get(Field.LI_M6))


@dataclass(frozen=True)
class LiSession:
    role: str
    scalar: int
    M_1: Block32  # M_4 on the server side
    M_2: Point
    M_5: Point | None = None
    sk: Block32 | None = None


def rpw(password: str, K: Block32) -> Block32:
    return hash_blocks([canonical_id(password), K])


def li_register(ID: Block32, PW: str, B: Template, X_s: Block32, rng: Rng) -> LiCard:
    check_block(ID, what="ID")
    K = random_block(rng)
    RPW = rpw(PW, K)
    R, helper = biometric.gen(B, rng)
    f = hash_blocks([ID, R])
    e = xor(hash_blocks([ID, X_s]), hash_blocks([f, RPW]))
    r = hash_blocks([ID, RPW])
    return LiCard(e=e, f=f, r=r, helper=helper, K=K)


def _verify_factors(card: LiCard, ID: Block32, PW: str, B2: Template) -> Block32:
    R = biometric.rep(B2, card.helper)
    if hash_blocks([ID, R]) != card.f:
        raise BiometricMismatch("f_ci != f_i")
    RPW = rpw(PW, card.K)
    if hash_blocks([ID, RPW]) != card.r:
        raise PasswordMismatch("r_ci != r_i")
    return RPW


def li_login(card: LiCard, ID: Block32, PW: str, B2: Template, curve: CurveParams,
             rng: Rng) -> tuple[LiLoginRequest, LiSession]:
    RPW = _verify_factors(card, ID, PW, B2)
    M_1 = xor(card.e, hash_blocks([card.f, RPW]))
    a = random_scalar(rng, curve)
    M_2 = scalar_mul(a, curve.G, curve)
    M_3 = hash_blocks([M_1, point_block(M_2, curve)])
    return LiLoginRequest(ID, M_2, M_3), LiSession("user", a, M_1, M_2)


def li_server_verify(req: LiLoginRequest, state: LiServerState,
                     rng: Rng) -> tuple[LiReply, LiSession]:
    curve = state.curve
    if req.ID not in state.users:
        raise AuthError("unknown or malformed ID")
    M_4 = hash_blocks([req.ID, state.X_s])
    if hash_blocks([M_4, point_block(req.M_2, curve)]) != req.M_3:
        raise AuthError("M_3 != M_c3")
    b = random_scalar(rng, curve)
    M_5 = scalar_mul(b, curve.G, curve)
    M_6 = hash_blocks([M_4, point_block(req.M_2, curve), point_block(M_5, curve)])
    sk = point_key(scalar_mul(b, req.M_2, curve), curve)
    return LiReply(M_5, M_6), LiSession("server", b, M_4, req.M_2, M_5, sk)


def li_user_finish(reply: LiReply, session: LiSession, curve: CurveParams) -> Block32:
    if session.role != "user":
        raise PreconditionError("li_user_finish needs a user session")
    expected = hash_blocks([session.M_1, point_block(session.M_2, curve), point_block(reply.M_5, curve)])
    if expected != reply.M_6:
        raise AuthError("M_6 != M_c6")
    return point_key(scalar_mul(session.scalar, reply.M_5, curve), curve)


def li_change_password(card: LiCard, ID: Block32, PW_old: str, PW_new: str, B2: Template) -> LiCard:
    RPW = _verify_factors(card, ID, PW_old, B2)
    RPW_n = rpw(PW_new, card.K)
    e_n = xor(xor(card.e, hash_blocks([card.f, RPW])), hash_blocks([card.f, RPW_n]))
    return replace(card, e=e_n, r=hash_blocks([ID, RPW_n]))


class LiServerActor(Actor):
    """Legacy server answering login envelopes on the insecure channel."""

    def __init__(self, name: str, state: LiServerState) -> None:
        super().__init__(name)
        self.state = state
        self.established: list[tuple[Block32, Block32]] = []

    def respond(self, req: LiLoginRequest, rng: Rng) -> tuple[LiReply, LiSession]:
        return li_server_verify(req, self.state, rng)

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        if (env.phase, env.stat) != (Phase.LI_LOGIN, Stat.Login):
            raise IllegalStat(f"legacy server cannot accept {env.describe()}")
        req = LiLoginRequest.from_envelope(env, self.state.curve)
        reply, session = self.respond(req, rng)
        self.established.append((req.ID, session.sk))
        self.log("complete", "login request verified")
        return [Outgoing(src, Channel.INSECURE, reply.envelope(self.state.curve))]


class LiUserActor(Actor):
    def __init__(self, name: str, server: str, card: LiCard, ID: Block32, password: str,
                 template: Template, curve: CurveParams, noise: int = 0) -> None:
        super().__init__(name)
        self.server = server
        self.card = card
        self.ID = ID
        self.password = password
        self.template = template
        self.curve = curve
        self.noise = noise
        self.session: LiSession | None = None
        self.sk: Block32 | None = None
        self.outcome = "idle"

    def start_login(self, rng: Rng) -> list[Outgoing]:
        self.sk = None
        reading = biometric.perturb_per_group(self.template, rng, self.noise) if self.noise else self.template
        try:
            req, self.session = li_login(self.card, self.ID, self.password, reading, self.curve, rng)
        except VerifyError as exc:
            self.outcome = "failed"
            self.log("error", f"{type(exc).__name__}: {exc}")
            return []
        self.outcome = "pending"
        return [Outgoing(self.server, Channel.INSECURE, req.envelope(self.curve))]

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        if (env.phase, env.stat) != (Phase.LI_LOGIN, Stat.Auth) or self.session is None:
            raise IllegalStat(f"legacy user cannot accept {env.describe()}")
        session, self.session = self.session, None
        try:
            self.sk = li_user_finish(LiReply.from_envelope(env, self.curve), session, self.curve)
        except AuthError:
            self.outcome = "failed"
            raise
        self.outcome = "complete"
        self.log("complete", "server authenticated")
        return []
