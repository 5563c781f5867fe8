"""The AES/hash three-factor scheme with password and smart-card recovery.

Three actors exchange :class:`~threefactor.wire.Envelope` messages:

* :class:`UserActor` - the user together with card reader and biometric device,
* :class:`RegistrationCenter` - enrolls servers and users, issues cards,
* :class:`ServerActor` - verifies logins and holds the per-user master secret.

Login runs over the insecure channel; everything else over secure channels,
and recovery nonces go to the user's recovery contact out of band.

Multi-step phases (password change, password recovery, card recovery) are
transactional.  The server and the user snapshot what they overwrite and
restore it when a ``Fail`` arrives; the registration center only commits its
own records in the final step.  Failure paths that the protocol leaves
message-less simply stop: the harness observes quiescence and reports the
phase as failed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import biometric
from .actor import Actor, Outgoing
from .biometric import HelperData, Template
from .crypto_core import (
    BLOCK,
    WIDE,
    Block32,
    Block64,
    Rng,
    SealedBox,
    SymKey,
    canonical_id,
    expand,
    hash_blocks,
    kdf_biokey,
    open_block,
    open_box,
    random_block,
    seal,
    split64,
    xor,
)
from .errors import BiometricMismatch, DecryptError, IllegalStat, UnknownPrincipal, VerificationFailure
from .wire import Channel, Envelope, Field, Phase, Stat

RC = "rc"


def user_addr(name: str) -> str:
    return f"user:{name}"


def server_addr(name: str) -> str:
    return f"server:{name}"


def contact_addr(contact: str) -> str:
    return f"contact:{contact}"


# -- equation kernels ------------------------------------------------------


def derive_bp(PW: str, B: Block32) -> Block32:
    return hash_blocks([canonical_id(PW), B])


def derive_xs(K_s: Block32, TX_s: Block64) -> Block32:
    return hash_blocks([K_s, TX_s])


def make_login_pair(ID: Block32, X_s: Block32, R_n2: Block32) -> tuple[Block32, Block32]:
    M_1 = hash_blocks([X_s, R_n2])
    M_2 = xor(hash_blocks([ID, X_s]), R_n2)
    return M_1, M_2


def recover_rn2(ID: Block32, X_s: Block32, M_2: Block32) -> Block32:
    return xor(M_2, hash_blocks([ID, X_s]))


def make_challenge(ID: Block32, X_s: Block32, R_n2: Block32, R_n3: Block32) -> tuple[Block32, Block32]:
    M_4 = hash_blocks([X_s, R_n3])
    M_5 = xor(hash_blocks([ID, X_s, R_n2]), R_n3)
    return M_4, M_5


def recover_rn3(ID: Block32, X_s: Block32, R_n2: Block32, M_5: Block32) -> Block32:
    return xor(M_5, hash_blocks([ID, X_s, R_n2]))


def make_confirmation(X_s: Block32, R_n2: Block32, R_n3: Block32) -> Block32:
    return hash_blocks([X_s, R_n2, R_n3])


def derive_session_key(R_n2: Block32, R_n3: Block32) -> Block32:
    return hash_blocks([R_n2, R_n3])


def make_tcx(TC_s: Block64, X_s: Block32) -> Block64:
    return xor(TC_s, expand(X_s))


def recover_xs(TCX_s: Block64, TC_s: Block64) -> Block32:
    """Undo :func:`make_tcx`; both halves must agree or the value was tampered."""
    left, right = split64(xor(TCX_s, TC_s))
    if left != right:
        raise VerificationFailure("TCX-halves", "recovered X_s halves disagree")
    return left


# -- stores ----------------------------------------------------------------


@dataclass(frozen=True)
class ProposedCard:
    ID: Block32
    SID: Block32
    QX: Optional[SealedBox] = None
    helper: Optional[HelperData] = None
    transit_BP: Optional[Block32] = None
    transit_TC: Optional[Block64] = None

    @property
    def finalized(self) -> bool:
        return self.QX is not None and self.transit_BP is None and self.transit_TC is None


@dataclass
class UserRecord:
    SID: Block32
    UX: SealedBox
    EX: SealedBox
    R_cov: SealedBox


@dataclass
class RcStore:
    RK_aes: SymKey
    servers: dict[Block32, SealedBox] = field(default_factory=dict)
    users: dict[Block32, UserRecord] = field(default_factory=dict)
    # where to reach each server; not secret, kept so a reloaded store can route
    server_book: dict[Block32, str] = field(default_factory=dict)


@dataclass
class ServerStore:
    SID: Block32
    SK_aes: SymKey
    EK: Optional[SealedBox] = None
    users: dict[Block32, SealedBox] = field(default_factory=dict)


@dataclass
class LoginSession:
    role: str
    X_s: Block32
    R_n2: Block32
    R_n3: Optional[Block32] = None


@dataclass
class RecoveryTicket:
    ID: Block32
    SID: Block32
    nonce: Block32
    kind: str  # "password" | "card"


@dataclass
class _Transaction:
    phase: Phase
    SID: Block32
    reply_to: str
    K_s: Block32
    TX: Block64
    TX_n: Block64
    fresh: Block32  # R_n4 / R_n6 / R_n8
    BP_n: Block32


# per-phase step labels and stats for the three transactional phases
_SECRET_CHANGE = {
    Phase.PASS_CHANGE: dict(req=Stat.Passchange, srv_ok=Stat.Complete, to_user=Stat.Complete,
                            final=Stat.Complete, server="F3.server", rc_mid="F4.rc",
                            user="F5.user", rc_final="F6.rc"),
    Phase.PASS_RECOVERY: dict(req=Stat.Recovery, srv_ok=Stat.Done, to_user=Stat.Done,
                              final=Stat.Complete, server="G5.server", rc_mid="G6.rc",
                              user="G7.user", rc_final="G8.rc"),
    Phase.CARD_RECOVERY: dict(req=Stat.RecoveryS, srv_ok=Stat.DoneS, to_user=Stat.DoneS,
                              final=Stat.AcceptS, server="H5.server", rc_mid="H6.rc",
                              user="H7.user", rc_final="H8.rc"),
}

FAULT_POINTS = (
    "F1.user", "F2.rc", "F3.server", "F4.rc", "F5.user", "F6.rc",
    "G2.rc", "G3.user", "G4.rc", "G5.server", "G6.rc", "G7.user", "G8.rc",
    "H2.rc", "H3.user", "H4.rc", "H5.server", "H6.rc", "H7.user", "H8.rc",
)


def _ids(env: Envelope) -> tuple[Block32, Block32]:
    return env.get(Field.ID), env.get(Field.SID)


# -- registration center ---------------------------------------------------


class RegistrationCenter(Actor):
    def __init__(self, rng: Rng, name: str = RC) -> None:
        super().__init__(name)
        self.store = RcStore(RK_aes=random_block(rng))
        self.pending_servers: dict[Block32, Block32] = {}
        self.pending_users: dict[Block32, dict] = {}
        self.transactions: dict[Block32, _Transaction] = {}
        self.tickets: dict[Block32, RecoveryTicket] = {}

    def _seal(self, value: bytes, rng: Rng) -> SealedBox:
        return seal(value, self.store.RK_aes, rng)

    def _open(self, box: SealedBox, size: int) -> bytes:
        return open_block(box, self.store.RK_aes, size)

    def _k_s(self, SID: Block32) -> Block32:
        return self._open(self.store.servers[SID], BLOCK)

    def _known_user(self, ID: Block32, SID: Block32) -> UserRecord:
        rec = self.store.users.get(ID)
        if rec is None or rec.SID != SID or SID not in self.store.servers:
            raise UnknownPrincipal("ID/SID not registered together")
        return rec

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        key = (env.phase, env.stat)
        if key == (Phase.SERVER_REG, Stat.Register):
            return self._server_register(src, env, rng)
        if key == (Phase.SERVER_REG, Stat.Ack):
            return self._server_ack(env, rng)
        if key == (Phase.USER_REG, Stat.Register):
            return self._user_register(src, env, rng)
        if key == (Phase.USER_REG, Stat.Complete):
            return self._deliver_card(env)
        if key in ((Phase.USER_REG, Stat.Accept), (Phase.USER_REG, Stat.Reject)):
            return self._user_reg_final(env, rng)
        if key == (Phase.PASS_CHANGE, Stat.Passchange):
            return self._passchange_request(src, env, rng)
        if env.phase in (Phase.PASS_RECOVERY, Phase.CARD_RECOVERY):
            kind = "password" if env.phase == Phase.PASS_RECOVERY else "card"
            opening = Stat.Recovery if kind == "password" else Stat.RecoveryS
            verify = Stat.Verify if kind == "password" else Stat.VerifyS
            if env.stat == opening:
                return self._recovery_request(env, rng, kind)
            if env.stat == verify:
                return self._recovery_verify(src, env, rng, kind)
        if env.phase in _SECRET_CHANGE:
            return self._secret_change_reply(src, env, rng)
        raise IllegalStat(f"registration center cannot accept {env.describe()}")

    # server registration

    def _server_register(self, src: str, env: Envelope, rng: Rng) -> list[Outgoing]:
        SID = env.get(Field.SID)
        if SID in self.store.servers or SID in self.pending_servers:
            raise VerificationFailure("C2.registered", "server already registered")
        K_s = hash_blocks([SID, random_block(rng)])
        self.pending_servers[SID] = K_s
        self.store.server_book[SID] = src
        return [Outgoing(src, Channel.SECURE, Envelope.make(
            Phase.SERVER_REG, Stat.Accept, (Field.SID, SID), (Field.K_S, K_s)))]

    def _server_ack(self, env: Envelope, rng: Rng) -> list[Outgoing]:
        SID = env.get(Field.SID)
        K_s = self.pending_servers.pop(SID, None)
        if K_s is None:
            raise UnknownPrincipal("acknowledgement for unknown server")
        self.store.servers[SID] = self._seal(K_s, rng)
        self.log("complete", "server registered")
        return []

    # user registration

    def _user_register(self, src: str, env: Envelope, rng: Rng) -> list[Outgoing]:
        ID, SID = _ids(env)
        if SID not in self.store.servers:
            raise UnknownPrincipal("user registration names an unregistered SID")
        if ID in self.store.users or ID in self.pending_users:
            raise UnknownPrincipal("ID already registered")
        W = random_block(rng)
        BP = env.get(Field.BP)
        TX = W + BP
        self.pending_users[ID] = dict(SID=SID, BP=BP, W=W, TX=TX, R_cont=env.get(Field.R_CONT), reply_to=src)
        return [Outgoing(self.store.server_book[SID], Channel.SECURE, Envelope.make(
            Phase.USER_REG, Stat.Register, (Field.ID, ID), (Field.SID, SID), (Field.TX, TX)))]

    def _deliver_card(self, env: Envelope) -> list[Outgoing]:
        ID, SID = _ids(env)
        p = self.pending_users.get(ID)
        if p is None or p["SID"] != SID:
            raise UnknownPrincipal("completion for unknown registration")
        TC = self._k_s(SID) + p["W"]
        p["TC"] = TC
        return [Outgoing(p["reply_to"], Channel.SECURE, Envelope.make(
            Phase.USER_REG, Stat.Complete, (Field.ID, ID), (Field.SID, SID), (Field.BP, p["BP"]), (Field.TC, TC)))]

    def _user_reg_final(self, env: Envelope, rng: Rng) -> list[Outgoing]:
        ID, SID = _ids(env)
        p = self.pending_users.pop(ID, None)
        if p is None:
            raise UnknownPrincipal("final registration message for unknown user")
        if env.stat == Stat.Accept and p["SID"] == SID and "TC" in p:
            self.store.users[ID] = UserRecord(
                SID=SID,
                UX=self._seal(p["TC"], rng),
                EX=self._seal(p["TX"], rng),
                R_cov=self._seal(p["R_cont"], rng),
            )
            self.log("complete", "user registered")
            return []
        self.log("error", "card rejected; deregistering user", "D6.reject")
        return [Outgoing(self.store.server_book[p["SID"]], Channel.SECURE, Envelope.make(
            Phase.USER_REG, Stat.Deregister, (Field.ID, ID), (Field.SID, p["SID"])))]

    # password change

    def _passchange_request(self, src: str, env: Envelope, rng: Rng) -> list[Outgoing]:
        ID, SID = _ids(env)
        ok = True
        try:
            rec = self._known_user(ID, SID)
            TC = self._open(rec.UX, WIDE)
            K_s = self._k_s(SID)
            TX = self._open(rec.EX, WIDE)
            X_s = recover_xs(env.get(Field.TCX), TC)
            ok = derive_xs(K_s, TX) == X_s
        except (UnknownPrincipal, VerificationFailure, DecryptError):
            ok = False
        if not self.check(ok, "F2.rc"):
            self.log("error", "password change request discarded", "F2.rc")
            return [Outgoing(src, Channel.SECURE, Envelope.make(Phase.PASS_CHANGE, Stat.Fail, (Field.ID, ID)))]
        return self._begin_secret_change(Phase.PASS_CHANGE, ID, SID, src, K_s, TX, env.get(Field.BP_N), rng)

    def _begin_secret_change(self, phase: Phase, ID: Block32, SID: Block32, reply_to: str, K_s: Block32,
                             TX: Block64, BP_n: Block32, rng: Rng) -> list[Outgoing]:
        fresh = random_block(rng)
        TX_n = fresh + BP_n
        self.transactions[ID] = _Transaction(phase, SID, reply_to, K_s, TX, TX_n, fresh, BP_n)
        return [Outgoing(self.store.server_book[SID], Channel.SECURE, Envelope.make(
            phase, _SECRET_CHANGE[phase]["req"],
            (Field.ID, ID), (Field.SID, SID), (Field.TX, TX), (Field.TX_N, TX_n)))]

    # recovery

    def _recovery_request(self, env: Envelope, rng: Rng, kind: str) -> list[Outgoing]:
        ID, SID = _ids(env)
        label = "G2.rc" if kind == "password" else "H2.rc"
        try:
            rec = self._known_user(ID, SID)
            ok = True
        except UnknownPrincipal:
            ok = False
        if not self.check(ok, label):
            raise VerificationFailure(label, "recovery request for unknown ID/SID")
        nonce = random_block(rng)
        contact = open_box(rec.R_cov, self.store.RK_aes).decode("utf-8")
        self.tickets[ID] = RecoveryTicket(ID, SID, nonce, kind)
        stat = Stat.Verify if kind == "password" else Stat.VerifyS
        return [Outgoing(contact_addr(contact), Channel.OUT_OF_BAND, Envelope.make(
            env.phase, stat, (Field.ID, ID), (Field.SID, SID), (Field.NONCE, nonce)))]

    def _recovery_verify(self, src: str, env: Envelope, rng: Rng, kind: str) -> list[Outgoing]:
        ID, SID = _ids(env)
        label = "G4.rc" if kind == "password" else "H4.rc"
        ticket = self.tickets.pop(ID, None)
        ok = (
            ticket is not None
            and ticket.kind == kind
            and ticket.SID == SID
            and ID in self.store.users
            and self.store.users[ID].SID == SID
            and env.get(Field.NONCE) == ticket.nonce
        )
        if not self.check(ok, label):
            raise VerificationFailure(label, "recovery nonce did not verify")
        rec = self.store.users[ID]
        TX = self._open(rec.EX, WIDE)
        return self._begin_secret_change(env.phase, ID, SID, src, self._k_s(SID), TX, env.get(Field.BP_N), rng)

    # shared tail of password change / recovery / card recovery

    def _secret_change_reply(self, src: str, env: Envelope, rng: Rng) -> list[Outgoing]:
        steps = _SECRET_CHANGE[env.phase]
        ID = env.get(Field.ID)
        t = self.transactions.get(ID)
        if t is None or t.phase != env.phase:
            raise IllegalStat(f"no open transaction for {env.describe()}")
        server = self.store.server_book[t.SID]
        from_server = src == server
        if from_server and env.stat == Stat.Fail:
            self.transactions.pop(ID)
            self.log("error", "server discarded the secret change", steps["server"])
            return [self._fail(t.reply_to, env.phase, ID, t.SID)]
        if not from_server and env.stat == Stat.Fail:
            self.transactions.pop(ID)
            self.log("error", "user rejected the update; reverting server", steps["user"])
            return [self._fail(server, env.phase, ID, t.SID)]
        if from_server and env.stat == steps["srv_ok"]:
            ok = env.get(Field.SID) == t.SID
            if not self.check(ok, steps["rc_mid"]):
                self.transactions.pop(ID)
                self.log("error", "server completion did not verify", steps["rc_mid"])
                return [self._fail(server, env.phase, ID, t.SID), self._fail(t.reply_to, env.phase, ID, t.SID)]
            TC_n = t.K_s + t.fresh
            if env.phase == Phase.CARD_RECOVERY:
                card = Envelope.make(env.phase, Stat.DoneS, (Field.ID, ID), (Field.SID, t.SID),
                                     (Field.BP_N, t.BP_n), (Field.TC_N, TC_n))
                return [Outgoing(t.reply_to, Channel.SECURE, card)]
            TC = self._open(self.store.users[ID].UX, WIDE)
            return [Outgoing(t.reply_to, Channel.SECURE, Envelope.make(
                env.phase, steps["to_user"], (Field.ID, ID), (Field.SID, t.SID), (Field.TC_N, TC_n), (Field.TC, TC)))]
        if not from_server and env.stat == steps["final"]:
            self.transactions.pop(ID)
            ok = env.get(Field.SID) == t.SID and ID in self.store.users
            if not self.check(ok, steps["rc_final"]):
                self.log("error", "final acknowledgement did not verify", steps["rc_final"])
                return [self._fail(server, env.phase, ID, t.SID), self._fail(t.reply_to, env.phase, ID, t.SID)]
            rec = self.store.users[ID]
            rec.UX = self._seal(t.K_s + t.fresh, rng)
            rec.EX = self._seal(t.TX_n, rng)
            self.log("complete", f"{env.phase.name} committed")
            return []
        raise IllegalStat(f"registration center cannot accept {env.describe()} now")

    @staticmethod
    def _fail(dst: str, phase: Phase, ID: Block32, SID: Block32) -> Outgoing:
        return Outgoing(dst, Channel.SECURE, Envelope.make(phase, Stat.Fail, (Field.ID, ID), (Field.SID, SID)))


# -- server ----------------------------------------------------------------


class ServerActor(Actor):
    def __init__(self, server_name: str, rng: Rng) -> None:
        super().__init__(server_addr(server_name))
        self.server_name = server_name
        self.store = ServerStore(SID=canonical_id(server_name), SK_aes=random_block(rng))
        self.sessions: dict[Block32, LoginSession] = {}
        self.snapshots: dict[Block32, tuple[Phase, SealedBox]] = {}
        self.established: list[tuple[Block32, Block32]] = []

    @property
    def SID(self) -> Block32:
        return self.store.SID

    def start_registration(self) -> list[Outgoing]:
        return [Outgoing(RC, Channel.SECURE, Envelope.make(Phase.SERVER_REG, Stat.Register, (Field.SID, self.SID)))]

    def _k_s(self) -> Block32:
        if self.store.EK is None:
            raise UnknownPrincipal("server is not registered")
        return open_block(self.store.EK, self.store.SK_aes)

    def _x_s(self, ID: Block32) -> Block32:
        return open_block(self.store.users[ID], self.store.SK_aes)

    def _verify_ids(self, env: Envelope, need_user: bool = True) -> tuple[Block32, Block32]:
        ID, SID = _ids(env)
        if SID != self.SID or (need_user and ID not in self.store.users):
            raise UnknownPrincipal("ID/SID verification failed")
        return ID, SID

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        key = (env.phase, env.stat)
        if key == (Phase.SERVER_REG, Stat.Accept):
            if env.get(Field.SID) != self.SID:
                raise UnknownPrincipal("SID does not match this server")
            self.store.EK = seal(env.get(Field.K_S), self.store.SK_aes, rng)
            return [Outgoing(src, Channel.SECURE, Envelope.make(Phase.SERVER_REG, Stat.Ack, (Field.SID, self.SID)))]
        if key == (Phase.USER_REG, Stat.Register):
            ID, SID = self._verify_ids(env, need_user=False)
            X_s = derive_xs(self._k_s(), env.get(Field.TX))
            self.store.users[ID] = seal(X_s, self.store.SK_aes, rng)
            return [Outgoing(src, Channel.SECURE, Envelope.make(
                Phase.USER_REG, Stat.Complete, (Field.ID, ID), (Field.SID, SID)))]
        if key == (Phase.USER_REG, Stat.Deregister):
            ID, _ = self._verify_ids(env)
            del self.store.users[ID]
            self.log("revert", "user deregistered")
            return []
        if key == (Phase.LOGIN, Stat.Login):
            return self._login(src, env, rng)
        if key == (Phase.LOGIN, Stat.Auth):
            return self._confirm(env)
        if env.phase in _SECRET_CHANGE:
            if env.stat == _SECRET_CHANGE[env.phase]["req"]:
                return self._secret_change(src, env, rng)
            if env.stat == Stat.Fail:
                return self._revert(env)
        raise IllegalStat(f"server cannot accept {env.describe()}")

    def _login(self, src: str, env: Envelope, rng: Rng) -> list[Outgoing]:
        ID, SID = self._verify_ids(env)
        X_s = self._x_s(ID)
        R_n2 = recover_rn2(ID, X_s, env.get(Field.M2))
        M_3 = hash_blocks([X_s, R_n2])
        if env.get(Field.M1) != M_3:
            self.sessions.pop(ID, None)
            raise VerificationFailure("M1=M3", "login request did not verify")
        R_n3 = random_block(rng)
        M_4, M_5 = make_challenge(ID, X_s, R_n2, R_n3)
        self.sessions[ID] = LoginSession("server", X_s, R_n2, R_n3)
        return [Outgoing(src, Channel.INSECURE, Envelope.make(
            Phase.LOGIN, Stat.Auth, (Field.ID, ID), (Field.SID, SID), (Field.M4, M_4), (Field.M5, M_5)))]

    def _confirm(self, env: Envelope) -> list[Outgoing]:
        ID, _ = self._verify_ids(env)
        s = self.sessions.pop(ID, None)
        if s is None:
            raise IllegalStat("confirmation without an open login session")
        if env.get(Field.M7) != make_confirmation(s.X_s, s.R_n2, s.R_n3):
            raise VerificationFailure("M7=M8", "confirmation does not match the current challenge")
        self.established.append((ID, derive_session_key(s.R_n2, s.R_n3)))
        self.log("complete", "login authenticated")
        return []

    def _secret_change(self, src: str, env: Envelope, rng: Rng) -> list[Outgoing]:
        steps = _SECRET_CHANGE[env.phase]
        ID, SID = _ids(env)
        try:
            self._verify_ids(env)
            K_s = self._k_s()
            ok = self._x_s(ID) == derive_xs(K_s, env.get(Field.TX))
        except (UnknownPrincipal, DecryptError):
            ok = False
        if not self.check(ok, steps["server"]):
            self.log("error", "secret change discarded", steps["server"])
            return [Outgoing(src, Channel.SECURE, Envelope.make(env.phase, Stat.Fail, (Field.ID, ID), (Field.SID, SID)))]
        self.snapshots[ID] = (env.phase, self.store.users[ID])
        X_n = derive_xs(K_s, env.get(Field.TX_N))
        self.store.users[ID] = seal(X_n, self.store.SK_aes, rng)
        return [Outgoing(src, Channel.SECURE, Envelope.make(env.phase, steps["srv_ok"], (Field.ID, ID), (Field.SID, SID)))]

    def _revert(self, env: Envelope) -> list[Outgoing]:
        ID = env.get(Field.ID)
        snap = self.snapshots.get(ID)
        if snap is None or snap[0] != env.phase:
            self.log("ignore", "failure notice with nothing to revert")
            return []
        del self.snapshots[ID]
        self.store.users[ID] = snap[1]
        self.log("revert", f"{env.phase.name} reverted")
        return []


# -- user ------------------------------------------------------------------


class UserActor(Actor):
    """User, card reader and biometric device.

    ``noise`` is the number of flipped bits per repetition group in every
    live biometric reading.
    """

    def __init__(self, name: str, server_name: str, password: str, template: Template,
                 contact: str, noise: int = 0) -> None:
        super().__init__(user_addr(name))
        self.user_name = name
        self.ID = canonical_id(name)
        self.SID = canonical_id(server_name)
        self.server = server_addr(server_name)
        self.password = password
        self.template = template
        self.contact = contact
        self.noise = noise
        self.card: Optional[ProposedCard] = None
        self.pending: dict[Phase, dict] = {}
        self.session: Optional[LoginSession] = None
        self.k_ses: Optional[Block32] = None
        # the last completed login session, kept only for audits
        self.last_session: Optional[LoginSession] = None
        self.outcome: dict[Phase, str] = {}
        self._snapshot: Optional[tuple[Phase, Optional[ProposedCard], str]] = None

    @property
    def addresses(self) -> tuple[str, str]:
        return self.name, contact_addr(self.contact)

    def reading(self, rng: Rng) -> Template:
        if self.noise:
            return biometric.perturb_per_group(self.template, rng, self.noise)
        return self.template

    def _card_secrets(self, rng: Rng, password: str, reading: Optional[Template]) -> tuple[Block32, Block32, Block64]:
        card = self.card
        if card is None or not card.finalized:
            raise UnknownPrincipal("no finalized card in the reader")
        B = biometric.rep(reading if reading is not None else self.reading(rng), card.helper)
        TC = open_block(card.QX, kdf_biokey(B), WIDE)
        return B, derive_bp(password, B), TC

    def _to_rc(self, phase: Phase, stat: Stat, *fields) -> Outgoing:
        return Outgoing(RC, Channel.SECURE, Envelope.make(phase, stat, *fields))

    def _abort(self, phase: Phase, exc: Exception, check: str = "") -> list[Outgoing]:
        self.outcome[phase] = "failed"
        self.pending.pop(phase, None)
        self.log("error", f"{type(exc).__name__}: {exc}", check or getattr(exc, "check", ""))
        return []

    # registration

    def start_registration(self, rng: Rng) -> list[Outgoing]:
        B, helper = biometric.gen(self.template, rng)
        self.pending[Phase.USER_REG] = dict(helper=helper)
        self.outcome[Phase.USER_REG] = "pending"
        return [self._to_rc(Phase.USER_REG, Stat.Register,
                            (Field.ID, self.ID), (Field.BP, derive_bp(self.password, B)),
                            (Field.SID, self.SID), (Field.R_CONT, self.contact.encode("utf-8")))]

    def _receive_card(self, env: Envelope, rng: Rng) -> list[Outgoing]:
        p = self.pending.pop(Phase.USER_REG, None)
        if p is None:
            raise IllegalStat("card delivered without a registration in progress")
        ID, SID = _ids(env)
        card = ProposedCard(ID, SID, helper=p["helper"], transit_BP=env.get(Field.BP), transit_TC=env.get(Field.TC))
        ok = ID == self.ID and SID == self.SID
        if ok:
            try:
                B = biometric.rep(self.reading(rng), card.helper)
                ok = derive_bp(self.password, B) == card.transit_BP
            except BiometricMismatch:
                ok = False
        if not self.check(ok, "D5.user"):
            self.outcome[Phase.USER_REG] = "failed"
            self.log("error", "card rejected", "D5.user")
            return [self._to_rc(Phase.USER_REG, Stat.Reject, (Field.ID, ID), (Field.SID, SID))]
        # QX is written before Accept goes out
        self.card = replace(card, QX=seal(card.transit_TC, kdf_biokey(B), rng), transit_BP=None, transit_TC=None)
        self.outcome[Phase.USER_REG] = "complete"
        return [self._to_rc(Phase.USER_REG, Stat.Accept, (Field.ID, ID), (Field.SID, SID))]

    # login

    def start_login(self, rng: Rng, password: Optional[str] = None,
                    reading: Optional[Template] = None) -> list[Outgoing]:
        self.outcome[Phase.LOGIN] = "pending"
        self.session = None
        self.k_ses = None
        try:
            if self.card is None or self.card.ID != self.ID:
                raise UnknownPrincipal("card does not carry this ID")
            _, BP, TC = self._card_secrets(rng, self.password if password is None else password, reading)
        except (UnknownPrincipal, BiometricMismatch, DecryptError) as exc:
            return self._abort(Phase.LOGIN, exc)
        X_s = hash_blocks([TC, BP])
        R_n2 = random_block(rng)
        M_1, M_2 = make_login_pair(self.ID, X_s, R_n2)
        self.session = LoginSession("user", X_s, R_n2)
        return [Outgoing(self.server, Channel.INSECURE, Envelope.make(
            Phase.LOGIN, Stat.Login, (Field.ID, self.ID), (Field.SID, self.SID), (Field.M1, M_1), (Field.M2, M_2)))]

    def _login_auth(self, env: Envelope) -> list[Outgoing]:
        s = self.session
        if s is None:
            raise IllegalStat("challenge without a pending login")
        ID, SID = _ids(env)
        if ID != self.ID or SID != self.SID:
            self.session = None
            return self._abort(Phase.LOGIN, UnknownPrincipal("challenge names another ID/SID"))
        R_n3 = recover_rn3(ID, s.X_s, s.R_n2, env.get(Field.M5))
        if env.get(Field.M4) != hash_blocks([s.X_s, R_n3]):
            self.session = None
            return self._abort(Phase.LOGIN, VerificationFailure("M4=M6", "server did not authenticate"))
        s.R_n3 = R_n3
        self.session = None
        self.last_session = s
        self.k_ses = derive_session_key(s.R_n2, R_n3)
        self.outcome[Phase.LOGIN] = "complete"
        return [Outgoing(self.server, Channel.INSECURE, Envelope.make(
            Phase.LOGIN, Stat.Auth, (Field.ID, ID), (Field.SID, SID),
            (Field.M7, make_confirmation(s.X_s, s.R_n2, R_n3))))]

    # password change

    def start_password_change(self, new_password: str, rng: Rng) -> list[Outgoing]:
        self._snapshot = None
        self.outcome[Phase.PASS_CHANGE] = "pending"
        try:
            ok = self.card is not None and self.card.ID == self.ID
            if not self.check(ok, "F1.user"):
                raise UnknownPrincipal("card does not carry this ID")
            B, BP, TC = self._card_secrets(rng, self.password, None)
        except (UnknownPrincipal, BiometricMismatch, DecryptError) as exc:
            return self._abort(Phase.PASS_CHANGE, exc, "F1.user")
        X_s = hash_blocks([TC, BP])
        self.pending[Phase.PASS_CHANGE] = dict(B=B, new_password=new_password)
        return [self._to_rc(Phase.PASS_CHANGE, Stat.Passchange,
                            (Field.ID, self.ID), (Field.TCX, make_tcx(TC, X_s)),
                            (Field.BP_N, derive_bp(new_password, B)), (Field.SID, self.SID))]

    # recovery

    def start_password_recovery(self, new_password: str) -> list[Outgoing]:
        self._snapshot = None
        self.pending[Phase.PASS_RECOVERY] = dict(new_password=new_password)
        self.outcome[Phase.PASS_RECOVERY] = "pending"
        return [self._to_rc(Phase.PASS_RECOVERY, Stat.Recovery, (Field.ID, self.ID), (Field.SID, self.SID))]

    def start_card_recovery(self, new_password: str) -> list[Outgoing]:
        """The old card is gone; whatever the harness kept of it is not ours any more."""
        self._snapshot = None
        self.card = None
        self.pending[Phase.CARD_RECOVERY] = dict(new_password=new_password)
        self.outcome[Phase.CARD_RECOVERY] = "pending"
        return [self._to_rc(Phase.CARD_RECOVERY, Stat.RecoveryS, (Field.ID, self.ID), (Field.SID, self.SID))]

    def _recovery_contact(self, env: Envelope, rng: Rng) -> list[Outgoing]:
        phase = env.phase
        label = "G3.user" if phase == Phase.PASS_RECOVERY else "H3.user"
        p = self.pending.get(phase)
        ID, SID = _ids(env)
        ok = p is not None and ID == self.ID and SID == self.SID
        if not self.check(ok, label):
            return self._abort(phase, VerificationFailure(label, "recovery verification message discarded"))
        if phase == Phase.PASS_RECOVERY:
            try:
                if self.card is None or not self.card.finalized:
                    raise UnknownPrincipal("no card for password recovery")
                B = biometric.rep(self.reading(rng), self.card.helper)
            except (UnknownPrincipal, BiometricMismatch) as exc:
                return self._abort(phase, exc, label)
        else:
            # the helper data went with the lost card, so enroll afresh
            B, p["helper"] = biometric.gen(self.template, rng)
        p["B"] = B
        p["BP_n"] = derive_bp(p["new_password"], B)
        return [self._to_rc(phase, env.stat, (Field.ID, ID), (Field.SID, SID),
                            (Field.NONCE, env.get(Field.NONCE)), (Field.BP_N, p["BP_n"]))]

    # shared tail: card update

    def _card_update(self, env: Envelope, rng: Rng) -> list[Outgoing]:
        phase = env.phase
        steps = _SECRET_CHANGE[phase]
        p = self.pending.pop(phase, None)
        if p is None or "B" not in p:
            raise IllegalStat(f"card update without a pending {phase.name}")
        ID, SID = _ids(env)
        ok = ID == self.ID and SID == self.SID
        B = p["B"]
        if phase == Phase.CARD_RECOVERY:
            if ok:
                try:
                    B = biometric.rep(self.reading(rng), p["helper"])
                    ok = derive_bp(p["new_password"], B) == env.get(Field.BP_N)
                except BiometricMismatch:
                    ok = False
        elif ok:
            try:
                ok = open_block(self.card.QX, kdf_biokey(B), WIDE) == env.get(Field.TC)
            except DecryptError:
                ok = False
        if not self.check(ok, steps["user"]):
            self.outcome[phase] = "failed"
            self.log("error", "card update rejected", steps["user"])
            return [self._to_rc(phase, Stat.Fail, (Field.ID, ID), (Field.SID, SID))]
        out = [self._to_rc(phase, steps["final"], (Field.ID, ID), (Field.SID, SID))]
        self._snapshot = (phase, self.card, self.password)
        QX_n = seal(env.get(Field.TC_N), kdf_biokey(B), rng)
        if phase == Phase.CARD_RECOVERY:
            self.card = ProposedCard(ID, SID, QX=QX_n, helper=p["helper"])
        else:
            self.card = replace(self.card, QX=QX_n)
        self.password = p["new_password"]
        self.outcome[phase] = "complete"
        return out

    def _revert(self, env: Envelope) -> list[Outgoing]:
        phase = env.phase
        self.pending.pop(phase, None)
        if phase in self.outcome:
            self.outcome[phase] = "failed"
        if self._snapshot is not None and self._snapshot[0] == phase:
            _, self.card, self.password = self._snapshot
            self._snapshot = None
            self.log("revert", f"{phase.name} reverted on the card")
        else:
            self.log("error", f"{phase.name} failed upstream")
        return []

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        key = (env.phase, env.stat)
        if key == (Phase.USER_REG, Stat.Complete):
            return self._receive_card(env, rng)
        if key == (Phase.LOGIN, Stat.Auth):
            return self._login_auth(env)
        if key in ((Phase.PASS_RECOVERY, Stat.Verify), (Phase.CARD_RECOVERY, Stat.VerifyS)):
            return self._recovery_contact(env, rng)
        if env.phase in _SECRET_CHANGE:
            if env.stat == Stat.Fail:
                return self._revert(env)
            if env.stat == _SECRET_CHANGE[env.phase]["to_user"]:
                return self._card_update(env, rng)
        raise IllegalStat(f"user cannot accept {env.describe()}")


# -- invariants ------------------------------------------------------------


def store_violations(rc: RegistrationCenter, server: ServerActor, user: Optional[UserActor] = None) -> list[str]:
    """Check the cross-store relations after a completed (or reverted) phase."""
    out: list[str] = []
    RK, SK = rc.store.RK_aes, server.store.SK_aes
    SID = server.SID
    if SID not in rc.store.servers or server.store.EK is None:
        return ["server not registered at both ends"]
    K_s = open_block(rc.store.servers[SID], RK)
    if open_block(server.store.EK, SK) != K_s:
        out.append("EK and HK disagree on K_s")
    for ID, SX in server.store.users.items():
        rec = rc.store.users.get(ID)
        if rec is None:
            out.append("server holds a user the RC does not know")
            continue
        TC = open_block(rec.UX, RK, WIDE)
        TX = open_block(rec.EX, RK, WIDE)
        if open_block(SX, SK) != hash_blocks([K_s, TX]):
            out.append("SX != h(K_s || TX_s)")
        if TC[:BLOCK] != K_s:
            out.append("UX does not start with K_s")
        if TC[BLOCK:] != TX[:BLOCK]:
            out.append("UX and EX disagree on W")
    for ID, rec in rc.store.users.items():
        if ID not in server.store.users:
            out.append("RC holds a user the server does not know")
    if user is not None and user.card is not None and user.card.finalized:
        rec = rc.store.users.get(user.ID)
        try:
            B = biometric.rep(user.template, user.card.helper)
            if rec is None or open_block(user.card.QX, kdf_biokey(B), WIDE) != open_block(rec.UX, RK, WIDE):
                out.append("card TC_s differs from UX")
        except (BiometricMismatch, DecryptError):
            out.append("card cannot be opened with the enrolled biometric")
    return out
