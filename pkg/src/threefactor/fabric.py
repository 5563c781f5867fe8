"""Deterministic message fabric.

Messages travel through one FIFO queue.  Secure and out-of-band channels are
opaque to the adversary; insecure deliveries are shown to it first and may be
dropped, duplicated, corrupted or delayed according to a fault script.  Every
crossing is appended to the :class:`Transcript`.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .actor import Actor, Outgoing
from .crypto_core import Rng, xor
from .errors import NonTermination, PreconditionError
from .wire import Channel, Envelope


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    src: str
    dst: str
    channel: Channel
    envelope: Envelope
    note: str = "delivered"
    observed: bool = False  # the adversary saw this crossing

    def line(self) -> str:
        seen = "A" if self.observed else "-"
        return (f"{self.seq:05d} {self.channel.name:<11} {seen} {self.note:<9} "
                f"{self.src}->{self.dst} {self.envelope.describe()} {self.envelope.encode().hex()}")


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def lines(self) -> list[str]:
        return [e.line() for e in self.entries]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def insecure(self) -> list[TranscriptEntry]:
        return [e for e in self.entries if e.channel == Channel.INSECURE]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ChannelFault:
    """One insecure-channel fault, keyed by the index of the insecure delivery."""

    op: str  # drop | duplicate | corrupt | delay
    step: int
    mask: bytes = b""
    window: int = 1

    @classmethod
    def parse(cls, text: str) -> "ChannelFault":
        # drop(2) | duplicate(0) | corrupt(1, ff00) | delay(3, 2)
        text = text.strip()
        if "(" not in text or not text.endswith(")"):
            raise PreconditionError(f"bad channel fault {text!r}")
        op, args = text[:-1].split("(", 1)
        parts = [a.strip() for a in args.split(",") if a.strip()]
        op = op.strip()
        if op in ("drop", "duplicate") and len(parts) == 1:
            return cls(op, int(parts[0]))
        if op == "corrupt" and len(parts) == 2:
            return cls(op, int(parts[0]), mask=bytes.fromhex(parts[1]))
        if op == "delay" and len(parts) == 2:
            return cls(op, int(parts[0]), window=int(parts[1]))
        raise PreconditionError(f"bad channel fault {text!r}")


class Observer(Protocol):
    def observe(self, entry: TranscriptEntry) -> None: ...


def corrupt_envelope(env: Envelope, mask: bytes) -> Envelope:
    """XOR ``mask`` into the encoded field bytes (header bytes are left alone)."""
    fields = []
    offset = 0
    for f, v in env.fields:
        m = mask[offset:offset + len(v)].ljust(len(v), b"\x00")
        fields.append((f, xor(v, m)))
        offset += len(v)
    return Envelope(env.phase, env.stat, tuple(fields))


class Network:
    def __init__(self, rng: Rng, budget: int = 10_000) -> None:
        self.rng = rng
        self.budget = budget
        self.actors: dict[str, Actor] = {}
        self._rngs: dict[str, Rng] = {}
        self.queue: deque[tuple[str, Outgoing, str]] = deque()
        self.transcript = Transcript()
        self.observers: list[Observer] = []
        self.faults: list[ChannelFault] = []
        self.interceptors: dict[str, Callable[[str, Envelope], list[Outgoing]]] = {}
        self._insecure_count = 0
        self._held: list[tuple[int, str, Outgoing]] = []
        self._delivered = 0

    def add(self, actor: Actor, *aliases: str) -> Actor:
        for addr in (actor.name, *aliases):
            if addr in self.actors:
                raise PreconditionError(f"address {addr} already taken")
            self.actors[addr] = actor
        self._rngs.setdefault(actor.name, self.rng.derive(actor.name))
        return actor

    def actor_rng(self, actor: Actor) -> Rng:
        return self._rngs.setdefault(actor.name, self.rng.derive(actor.name))

    def send(self, src: str, outs: list[Outgoing]) -> None:
        for out in outs:
            self.queue.append((src, out, "delivered"))

    def inject(self, src: str, dst: str, env: Envelope, channel: Channel = Channel.INSECURE) -> None:
        """Adversarial injection; only the insecure channel is writable."""
        if channel != Channel.INSECURE:
            raise PreconditionError("the adversary cannot write to secure or out-of-band channels")
        self.queue.append((src, Outgoing(dst, channel, env), "injected"))

    def _record(self, src: str, out: Outgoing, note: str) -> TranscriptEntry:
        entry = TranscriptEntry(len(self.transcript), src, out.dst, out.channel, out.envelope, note,
                                observed=out.channel == Channel.INSECURE)
        self.transcript.append(entry)
        if entry.observed:
            for obs in self.observers:
                obs.observe(entry)
        return entry

    def _release_held(self) -> None:
        ready = [h for h in self._held if h[0] <= self._delivered]
        self._held = [h for h in self._held if h[0] > self._delivered]
        for _, src, out in ready:
            self.queue.append((src, out, "released"))

    def _apply_faults(self, src: str, out: Outgoing, note: str) -> Optional[tuple[Outgoing, str]]:
        if out.channel != Channel.INSECURE or note in ("injected", "released", "duplicate"):
            return out, note
        index = self._insecure_count
        self._insecure_count += 1
        for fault in self.faults:
            if fault.step != index:
                continue
            if fault.op == "drop":
                self._record(src, out, "dropped")
                return None
            if fault.op == "duplicate":
                self.queue.append((src, out, "duplicate"))
            elif fault.op == "corrupt":
                out = Outgoing(out.dst, out.channel, corrupt_envelope(out.envelope, fault.mask))
                note = "corrupted"
            elif fault.op == "delay":
                self._record(src, out, "delayed")
                self._held.append((self._delivered + fault.window, src, out))
                return None
        return out, note

    def run(self) -> Transcript:
        """Deliver until quiescent; ``budget`` bounds the deliveries of one call."""
        steps = 0
        while self.queue or self._held:
            if not self.queue:
                # nothing else in flight: release delayed messages now
                self._delivered = max(h[0] for h in self._held)
                self._release_held()
                continue
            if steps >= self.budget:
                raise NonTermination(f"step budget {self.budget} exhausted")
            src, out, note = self.queue.popleft()
            routed = self._apply_faults(src, out, note)
            if routed is None:
                continue
            out, note = routed
            self._record(src, out, note)
            self._delivered += 1
            steps += 1
            self._release_held()
            if out.dst in self.interceptors:
                self.send(out.dst, self.interceptors[out.dst](src, out.envelope))
                continue
            actor = self.actors.get(out.dst)
            if actor is None:
                continue
            self.send(actor.name, actor.step(src, out.channel, out.envelope, self.actor_rng(actor)))
        return self.transcript
