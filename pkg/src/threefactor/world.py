"""Ready-made rosters: one registration center, one server and one user.

Everything is derived from a single integer seed so a world can be rebuilt
byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import biometric
from .actor import Actor, Outgoing
from .biometric import Template
from .crypto_core import Block32, Rng, canonical_id, random_block
from .ec_math import CurveParams
from .errors import ProtocolError
from .fabric import Network
from .li_scheme import LiServerActor, LiServerState, LiUserActor, li_register
from .proposed_scheme import RegistrationCenter, ServerActor, UserActor, store_violations
from .wire import Phase

DEFAULT_USER = "alice"
DEFAULT_SERVER = "bank"
DEFAULT_PASSWORD = "correct horse"
DEFAULT_CONTACT = "alice@recovery.example"

# how often the harness re-sends a login whose session quietly died
LOGIN_RETRY_CAP = 3


@dataclass
class ProposedWorld:
    seed: int
    net: Network
    rc: RegistrationCenter
    server: ServerActor
    user: UserActor

    def rng(self, actor: Actor) -> Rng:
        return self.net.actor_rng(actor)

    def drive(self, actor: Actor, outs: list[Outgoing]) -> None:
        self.net.send(actor.name, outs)
        self.net.run()

    def register_server(self) -> bool:
        self.drive(self.server, self.server.start_registration())
        return self.server.SID in self.rc.store.servers and self.server.store.EK is not None

    def register_user(self) -> bool:
        self.drive(self.user, self.user.start_registration(self.rng(self.user)))
        return (self.user.outcome.get(Phase.USER_REG) == "complete"
                and self.user.ID in self.rc.store.users and self.user.ID in self.server.store.users)

    def login(self, password: Optional[str] = None, reading: Optional[Template] = None,
              retries: int = 0) -> bool:
        """Honest login; ``retries`` bounds how often a quiet failure is re-sent."""
        for _ in range(1 + min(retries, LOGIN_RETRY_CAP)):
            before = len(self.server.established)
            self.drive(self.user, self.user.start_login(self.rng(self.user), password, reading))
            if (self.user.outcome.get(Phase.LOGIN) == "complete"
                    and len(self.server.established) > before
                    and self.server.established[-1] == (self.user.ID, self.user.k_ses)):
                return True
        return False

    def change_password(self, new_password: str) -> bool:
        self.drive(self.user, self.user.start_password_change(new_password, self.rng(self.user)))
        return self._settled(Phase.PASS_CHANGE)

    def recover_password(self, new_password: str) -> bool:
        self.drive(self.user, self.user.start_password_recovery(new_password))
        return self._settled(Phase.PASS_RECOVERY)

    def recover_card(self, new_password: str) -> bool:
        self.drive(self.user, self.user.start_card_recovery(new_password))
        return self._settled(Phase.CARD_RECOVERY)

    def _settled(self, phase: Phase) -> bool:
        return self.user.outcome.get(phase) == "complete" and phase not in self.user.pending \
            and self.user.ID not in self.rc.transactions

    def violations(self) -> list[str]:
        return store_violations(self.rc, self.server, self.user)

    def errors(self) -> list[str]:
        return [f"{e.actor}: {e.detail}" for a in (self.rc, self.server, self.user) for e in a.events
                if e.kind == "error"]


class PhaseAborted(ProtocolError):
    """A provisioning phase did not complete; ``errors`` lists what the actors logged."""

    def __init__(self, phase: str, errors: list[str]) -> None:
        super().__init__(f"{phase} aborted: " + ("; ".join(errors) or "no reply"))
        self.errors = errors


def build_proposed(seed: int, user: str = DEFAULT_USER, server: str = DEFAULT_SERVER,
                   password: str = DEFAULT_PASSWORD, contact: str = DEFAULT_CONTACT,
                   noise: int = 0, n_t: int = biometric.DEFAULT_BITS, budget: int = 10_000,
                   register_with: Optional[str] = None) -> ProposedWorld:
    """``register_with`` names the server the user enrolls for (default: the one built)."""
    root = Rng(seed)
    net = Network(root.derive("net"), budget)
    rc = RegistrationCenter(root.derive("keys/rc"))
    srv = ServerActor(server, root.derive("keys/server"))
    template = biometric.random_template(root.derive("template/" + user), n_t)
    usr = UserActor(user, register_with or server, password, template, contact, noise)
    net.add(rc)
    net.add(srv)
    net.add(usr, *usr.addresses[1:])
    return ProposedWorld(seed, net, rc, srv, usr)


def provision_proposed(seed: int, **kw) -> ProposedWorld:
    """Build a world and run server and user registration end to end."""
    w = build_proposed(seed, **kw)
    if not w.register_server():
        raise PhaseAborted("server registration", w.errors())
    if not w.register_user():
        raise PhaseAborted("user registration", w.errors())
    return w


@dataclass
class LegacyWorld:
    seed: int
    net: Network
    server: LiServerActor
    user: LiUserActor
    X_s: Block32

    @property
    def ID(self) -> Block32:
        return self.user.ID

    def login(self) -> bool:
        before = len(self.server.established)
        self.net.send(self.user.name, self.user.start_login(self.net.actor_rng(self.user)))
        self.net.run()
        return (self.user.outcome == "complete" and len(self.server.established) > before
                and self.server.established[-1] == (self.user.ID, self.user.sk))


def provision_legacy(seed: int, curve: CurveParams, user: str = DEFAULT_USER,
                     password: str = DEFAULT_PASSWORD, noise: int = 0,
                     n_t: int = biometric.DEFAULT_BITS, server_name: str = "li-server",
                     X_s: Optional[Block32] = None) -> LegacyWorld:
    root = Rng(seed)
    X_s = random_block(root.derive("keys/master")) if X_s is None else X_s
    ID = canonical_id(user)
    template = biometric.random_template(root.derive("template/" + user), n_t)
    card = li_register(ID, password, template, X_s, root.derive("register/" + user))
    net = Network(root.derive("net"))
    srv = LiServerActor(server_name, LiServerState(X_s, curve, {ID}))
    usr = LiUserActor("user:" + user, server_name, card, ID, password, template, curve, noise)
    net.add(srv)
    net.add(usr)
    return LegacyWorld(seed, net, srv, usr, X_s)
