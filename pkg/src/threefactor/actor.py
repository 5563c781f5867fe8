"""Shared plumbing for message-driven actors."""

from __future__ import annotations

from dataclasses import dataclass

from .crypto_core import Rng
from .errors import ProtocolError, VerificationFailure
from .wire import Channel, Envelope


@dataclass(frozen=True)
class Outgoing:
    dst: str
    channel: Channel
    envelope: Envelope


@dataclass(frozen=True)
class Event:
    actor: str
    kind: str  # "ok", "error", "fault", "revert", "complete", ...
    detail: str
    check: str = ""


class Actor:
    """An actor owns its store and reacts to one envelope at a time.

    ``faults`` holds one-shot step labels (``"F3.server"``); when a step with
    that label runs its verification, the check is forced to fail.
    """

    def __init__(self, name: str) -> None:
        self.name = name
        self.events: list[Event] = []
        self.faults: set[str] = set()

    def log(self, kind: str, detail: str, check: str = "") -> None:
        self.events.append(Event(self.name, kind, detail, check))

    def check(self, ok: bool, label: str) -> bool:
        if label in self.faults:
            self.faults.discard(label)
            self.log("fault", f"injected failure at {label}", label)
            return False
        return ok

    def fail(self, exc: ProtocolError) -> list[Outgoing]:
        check = exc.check if isinstance(exc, VerificationFailure) else ""
        self.log("error", f"{type(exc).__name__}: {exc}", check)
        return []

    def step(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        try:
            return self.handle(src, channel, env, rng)
        except ProtocolError as exc:
            return self.fail(exc)

    def handle(self, src: str, channel: Channel, env: Envelope, rng: Rng) -> list[Outgoing]:
        raise NotImplementedError
