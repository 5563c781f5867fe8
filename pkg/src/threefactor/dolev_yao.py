"""Symbolic adversary knowledge engine.

Knowledge is a set of byte values, each tagged with a *sort* taken from the
wire field it was read from (``M1``, ``M2``, ...) or from the rule that
produced it.  Rules are the protocol's own equations: the adversary may hash
tuples of sorts the protocol hashes, XOR-unmask masked fields, split and
join wide values, and open sealed boxes with keys it holds.  Primitives are
never attacked.  Saturation is semi-naive and stops at a fixpoint.

A *hypothesis* is a value the adversary merely guesses (a dictionary
password).  Whenever a rule produces a value that depends on a hypothesis
and lands in a sort the adversary has independently observed, the engine
records a :class:`Test`: that is an offline verifier for the guess.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Iterable, Optional

from .crypto_core import BLOCK, SealedBox, hash_blocks, kdf_biokey, open_box, xor
from .errors import DecryptError
from .ec_math import CurveParams, decode_point, point_block
from .wire import Field


@dataclass(frozen=True)
class Rule:
    kind: str  # hash | xor | open | split | join | unexpand | prehash
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    @property
    def name(self) -> str:
        return f"{self.kind}({','.join(self.inputs)})->{','.join(self.outputs)}"


def H(*args: str, to: str) -> Rule:
    return Rule("hash", args, (to,))


def X(a: str, b: str, to: str) -> Rule:
    return Rule("xor", (a, b), (to,))


PROPOSED_RULES = (
    H("PW", "BIO", to="BP"),
    H("TC", "BP", to="XS"),
    H("KS", "TX", to="XS"),
    H("ID", "XS", to="H_ID_XS"),
    H("XS", "RN2", to="M1"),
    H("XS", "RN3", to="M4"),
    H("ID", "XS", "RN2", to="H_ID_XS_RN2"),
    H("XS", "RN2", "RN3", to="M7"),
    H("RN2", "RN3", to="KSES"),
    X("M2", "H_ID_XS", to="RN2"),
    X("M2", "RN2", to="H_ID_XS"),
    X("M5", "H_ID_XS_RN2", to="RN3"),
    X("M5", "RN3", to="H_ID_XS_RN2"),
    X("TCX", "TC", to="XS_WIDE"),
    Rule("unexpand", ("XS_WIDE",), ("XS",)),
    Rule("open", ("QX", "BIO"), ("TC",)),
    Rule("open", ("SX_BOX", "SK_AES"), ("XS",)),
    Rule("open", ("EK_BOX", "SK_AES"), ("KS",)),
    Rule("split", ("TC",), ("KS", "W")),
    Rule("split", ("TX",), ("W", "BP")),
    Rule("join", ("KS", "W"), ("TC",)),
    Rule("join", ("W", "BP"), ("TX",)),
)

LEGACY_RULES = (
    H("PW", "K", to="RPW"),
    H("ID", "RPW", to="r"),
    H("F", "RPW", to="H_F_RPW"),
    H("ID", "R_BIO", to="F"),
    H("ID", "XS", to="H_ID_XS"),
    X("E", "H_F_RPW", to="H_ID_XS"),
    X("E", "H_ID_XS", to="H_F_RPW"),
    Rule("prehash", ("LI_M2",), ("M2_PB",)),
    Rule("prehash", ("LI_M5",), ("M5_PB",)),
    H("H_ID_XS", "M2_PB", to="LI_M3"),
    H("H_ID_XS", "M2_PB", "M5_PB", to="LI_M6"),
)

FIELD_SORTS = {
    Field.ID: "ID", Field.SID: "SID",
    Field.M1: "M1", Field.M2: "M2", Field.M4: "M4", Field.M5: "M5", Field.M7: "M7",
    Field.LI_M2: "LI_M2", Field.LI_M3: "LI_M3", Field.LI_M5: "LI_M5", Field.LI_M6: "LI_M6",
    Field.TCX: "TCX", Field.TX: "TX", Field.TC: "TC", Field.BP: "BP", Field.K_S: "KS",
}


@dataclass(frozen=True)
class Test:
    sort: str
    rule: str
    hypotheses: frozenset[str]
    match: bool


@dataclass
class Knowledge:
    rules: tuple[Rule, ...]
    curve: Optional[CurveParams] = None
    values: dict[str, dict[bytes, frozenset[str]]] = field(default_factory=dict)
    anchors: dict[str, set[bytes]] = field(default_factory=dict)
    origin: dict[tuple[str, bytes], str] = field(default_factory=dict)
    tests: list[Test] = field(default_factory=list)
    _delta: dict[str, set[bytes]] = field(default_factory=dict)

    def copy(self) -> "Knowledge":
        k = Knowledge(self.rules, self.curve)
        k.values = {s: dict(v) for s, v in self.values.items()}
        k.anchors = {s: set(v) for s, v in self.anchors.items()}
        k.origin = dict(self.origin)
        k.tests = list(self.tests)
        k._delta = {s: set(v) for s, v in self._delta.items()}
        return k

    def learn(self, sort: str, value: bytes, how: str = "observed",
              hypotheses: Iterable[str] = (), anchor: Optional[bool] = None) -> bool:
        hyps = frozenset(hypotheses)
        bucket = self.values.setdefault(sort, {})
        if anchor is None:
            anchor = not hyps
        if anchor:
            self.anchors.setdefault(sort, set()).add(value)
        old = bucket.get(value)
        if old is not None and old <= hyps:
            return False
        bucket[value] = hyps if old is None else (old & hyps if not hyps else min(old, hyps, key=len))
        self.origin[(sort, value)] = how
        self._delta.setdefault(sort, set()).add(value)
        return True

    def observe_envelope(self, env) -> None:
        for f, v in env.fields:
            sort = FIELD_SORTS.get(f)
            if sort is not None:
                self.learn(sort, v, f"field {f.name}")

    def hypothesize(self, sort: str, value: bytes, label: str) -> None:
        self.learn(sort, value, f"guess {label}", hypotheses=[label], anchor=False)

    def sort_values(self, sort: str) -> set[bytes]:
        return set(self.values.get(sort, {}))

    def all_values(self) -> set[bytes]:
        out: set[bytes] = set()
        for bucket in self.values.values():
            out.update(bucket)
        return out

    def _apply(self, rule: Rule, args: tuple[bytes, ...]) -> list[bytes]:
        k = rule.kind
        try:
            if k == "hash":
                return [hash_blocks(args)]
            if k == "xor":
                a, b = args
                if len(a) != len(b):
                    return []
                return [xor(a, b)]
            if k == "open":
                box, key = args
                if len(key) != BLOCK:
                    return []
                plain = open_box(SealedBox.from_bytes(box), kdf_biokey(key) if rule.inputs[1] == "BIO" else key)
                return [plain]
            if k == "split":
                (v,) = args
                return [v[:BLOCK], v[BLOCK:]] if len(v) == 2 * BLOCK else []
            if k == "join":
                return [args[0] + args[1]]
            if k == "unexpand":
                (v,) = args
                return [v[:BLOCK]] if len(v) == 2 * BLOCK and v[:BLOCK] == v[BLOCK:] else []
            if k == "prehash":
                if self.curve is None:
                    return []
                return [point_block(decode_point(args[0], self.curve), self.curve)]
        except (DecryptError, ValueError):
            return []
        raise ValueError(f"unknown rule kind {k}")

    def _combos(self, rule: Rule, delta: dict[str, set[bytes]]):
        full = [list(self.values.get(s, {})) for s in rule.inputs]
        if any(not f for f in full):
            return
        seen: set[tuple[bytes, ...]] = set()
        for i, s in enumerate(rule.inputs):
            d = delta.get(s)
            if not d:
                continue
            pools = [full[j] if j != i else list(d) for j in range(len(rule.inputs))]
            for combo in product(*pools):
                if combo not in seen:
                    seen.add(combo)
                    yield combo

    def saturate(self, max_rounds: int = 32) -> int:
        """Apply every rule to a fixpoint; returns the number of rounds used."""
        rounds = 0
        while self._delta and rounds < max_rounds:
            rounds += 1
            delta, self._delta = self._delta, {}
            for rule in self.rules:
                for combo in self._combos(rule, delta):
                    hyps = frozenset().union(*(self.values[s][v] for s, v in zip(rule.inputs, combo)))
                    for out_sort, value in zip(rule.outputs, self._apply(rule, combo)):
                        if hyps and out_sort in self.anchors:
                            self.tests.append(Test(out_sort, rule.name, hyps, value in self.anchors[out_sort]))
                        self.learn(out_sort, value, rule.name, hypotheses=hyps, anchor=False)
        return rounds

    def hypothesis_tests(self, label: str) -> list[Test]:
        return [t for t in self.tests if label in t.hypotheses]


class XorSpan:
    """GF(2) basis of 32-byte values, to ask whether a secret is an XOR of knowns."""

    def __init__(self, values: Iterable[bytes] = ()) -> None:
        self.basis: dict[int, int] = {}
        for v in values:
            self.add(v)

    def _reduce(self, x: int) -> int:
        while x:
            top = x.bit_length() - 1
            b = self.basis.get(top)
            if b is None:
                return x
            x ^= b
        return 0

    def add(self, value: bytes) -> None:
        if len(value) != BLOCK:
            return
        x = self._reduce(int.from_bytes(value, "big"))
        if x:
            self.basis[x.bit_length() - 1] = x

    def contains(self, value: bytes) -> bool:
        return self._reduce(int.from_bytes(value, "big")) == 0 if len(value) == BLOCK else False


def leaked(knowledge: Knowledge, secrets: dict[str, bytes]) -> dict[str, str]:
    """Which secrets are derivable, directly or as an XOR of known values."""
    known = knowledge.all_values()
    wide_halves = {v[:BLOCK] for v in known if len(v) == 2 * BLOCK} | {v[BLOCK:] for v in known if len(v) == 2 * BLOCK}
    span = XorSpan(v for v in known | wide_halves if len(v) == BLOCK)
    out = {}
    for name, value in secrets.items():
        if value in known:
            out[name] = "derived"
        elif len(value) == BLOCK and span.contains(value):
            out[name] = "xor-span"
        elif len(value) == 2 * BLOCK and span.contains(value[:BLOCK]) and span.contains(value[BLOCK:]):
            out[name] = "xor-span"
    return out


def guess_with_engine(base: Knowledge, candidates: Iterable[str],
                      to_block: Callable[[str], bytes]) -> tuple[list[str], list[str], int]:
    """Run the engine once per candidate.

    Returns ``(distinguishable, confirmed, evaluations)``: candidates for
    which some verifier was computable, the subset whose verifier matched,
    and how many candidates were tried.
    """
    base = base.copy()
    base.saturate()
    distinguishable: list[str] = []
    confirmed: list[str] = []
    n = 0
    for cand in candidates:
        n += 1
        k = base.copy()
        k.tests = []
        label = f"pw:{cand}"
        k.hypothesize("PW", to_block(cand), label)
        k.saturate()
        tests = k.hypothesis_tests(label)
        if tests:
            distinguishable.append(cand)
            if all(t.match for t in tests):
                confirmed.append(cand)
    return distinguishable, confirmed, n
