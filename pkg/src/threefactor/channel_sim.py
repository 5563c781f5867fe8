"""Scenarios, adversary strategies and verdicts.

A :class:`Scenario` fixes everything about a run: scheme, kind, seed, number
of trials, adversary capabilities and scripted faults.  :func:`run_scenario`
turns it into a :class:`Run` (every transcript it produced plus a
:class:`Verdict`).  Same scenario, same bytes.

``holds`` in a verdict always means "the property this kind checks was
observed": for attack kinds, the attack was defeated; for functional kinds,
the function worked.
"""

from __future__ import annotations

import configparser
import hashlib
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from . import biometric, storage
from .actor import Outgoing
from .crypto_core import (
    BLOCK,
    WIDE,
    Block32,
    Rng,
    SealedBox,
    canonical_id,
    hash_blocks,
    kdf_biokey,
    lp_split,
    open_block,
    open_box,
    random_block,
    xor,
)
from .dolev_yao import LEGACY_RULES, PROPOSED_RULES, Knowledge, guess_with_engine, leaked
from .ec_math import curve_by_name, encode_point, random_scalar, scalar_mul
from .errors import ConfigError, DecryptError, NonTermination, NotFound, PreconditionError, ProtocolError
from .fabric import ChannelFault, Transcript
from .li_attacks import Dictionary, extract_card, guess_password, impersonate_user, masquerade_server
from .li_scheme import LiReply, li_change_password
from .proposed_scheme import FAULT_POINTS, make_login_pair
from .wire import Channel, Envelope, Field, Phase, Stat
from .world import LegacyWorld, ProposedWorld, provision_legacy, provision_proposed

SCHEMES = ("S1", "S5")
FACTORS = ("card", "password", "biometric")
CAPABILITIES = FACTORS + ("server_db", "rc_db")
ADVERSARY = "adversary"

# Feature-matrix rows: key, label, and which scenario kinds back them by default.
MATRIX_ROWS = (
    ("password_guessing", "Prevents Password Guessing Attack"),
    ("key_stealing", "Prevents Security Key Stealing"),
    ("user_impersonation", "Prevents User Impersonation Attack"),
    ("server_masquerading", "Prevents Server Masquerading Attack"),
    ("replay", "Prevents Replay Attack"),
    ("password_recovery", "Password Recovery"),
    ("card_recovery", "Smart Card Recovery"),
    ("mutual_auth", "Provides Mutual Authentication"),
    ("dos", "Prevents Denial of Service Attack"),
    ("forgery", "Prevents Forgery Attack"),
    ("session_key", "Supports Session Key"),
)

DEFAULT_FEATURES = {
    "honest": ("mutual_auth", "session_key"),
    "guess": ("password_guessing",),
    "impersonate": ("user_impersonation", "mutual_auth"),
    "masquerade": ("server_masquerading", "mutual_auth"),
    "replay": ("replay",),
    "forgery": ("forgery",),
    "key_storage": ("key_stealing",),
    "noisy_login": ("dos",),
    "password_change": (),
    "password_recovery": ("password_recovery",),
    "card_recovery": ("card_recovery",),
}
KINDS = tuple(DEFAULT_FEATURES)


def _words(value: str, sep: str = ",") -> tuple[str, ...]:
    return tuple(w.strip() for w in value.split(sep) if w.strip())


@dataclass(frozen=True)
class Scenario:
    id: str
    kind: str
    scheme: str = "S1"
    seed: int = 0
    curve: str = "tiny"
    trials: int = 1
    capabilities: frozenset[str] = frozenset()
    dictionary: Optional[str] = None
    dict_size: int = 1000
    noise: int = 0
    sessions: int = 2
    retries: int = 0
    faults: tuple[str, ...] = ()
    channel_faults: tuple[str, ...] = ()
    expect: str = "holds"
    features: Optional[tuple[str, ...]] = None
    matrix: bool = True
    budget: int = 10_000

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"{self.id}: unknown kind {self.kind!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"{self.id}: unknown scheme {self.scheme!r}")
        if self.expect not in ("holds", "fails"):
            raise ConfigError(f"{self.id}: expect must be 'holds' or 'fails'")
        unknown = set(self.capabilities) - set(CAPABILITIES)
        if unknown:
            raise ConfigError(f"{self.id}: unknown capabilities {sorted(unknown)}")
        if len(set(self.capabilities) & set(FACTORS)) > 2:
            raise ConfigError(f"{self.id}: the adversary may hold at most two of card, password, biometric")
        bad_faults = set(self.faults) - set(FAULT_POINTS)
        if bad_faults:
            raise ConfigError(f"{self.id}: unknown fault labels {sorted(bad_faults)}")
        if self.trials < 0 or self.dict_size < 0 or self.noise < 0 or self.sessions < 1:
            raise ConfigError(f"{self.id}: counts must be non-negative")
        try:
            curve_by_name(self.curve)
            for f in self.channel_faults:
                ChannelFault.parse(f)
        except PreconditionError as exc:
            raise ConfigError(f"{self.id}: {exc}") from exc
        known = {k for k, _ in MATRIX_ROWS}
        if self.features is not None and set(self.features) - known:
            raise ConfigError(f"{self.id}: unknown features {sorted(set(self.features) - known)}")

    @property
    def backs(self) -> tuple[str, ...]:
        if not self.matrix:
            return ()
        return DEFAULT_FEATURES[self.kind] if self.features is None else self.features

    def trial_seed(self, i: int) -> int:
        return Rng(self.seed).derive(f"trial/{i}").seed

    @classmethod
    def from_section(cls, section: configparser.SectionProxy, base: Optional[Path] = None) -> "Scenario":
        try:
            d = section.get("dictionary")
            if d and base is not None and not Path(d).is_absolute():
                d = str(base / d)
            features = section.get("features")
            return cls(
                id=section.get("id", section.name.removeprefix("scenario").strip() or section.name),
                kind=section["kind"],
                scheme=section.get("scheme", "S1"),
                seed=section.getint("seed", 0),
                curve=section.get("curve", "tiny"),
                trials=section.getint("trials", 1),
                capabilities=frozenset(_words(section.get("capabilities", ""))),
                dictionary=d or None,
                dict_size=section.getint("dict_size", 1000),
                noise=section.getint("noise", 0),
                sessions=section.getint("sessions", 2),
                retries=section.getint("retries", 0),
                faults=_words(section.get("faults", "")),
                channel_faults=_words(section.get("channel_faults", ""), ";"),
                expect=section.get("expect", "holds"),
                features=_words(features) if features is not None else None,
                matrix=section.getboolean("matrix", True),
                budget=section.getint("budget", 10_000),
            )
        except KeyError as exc:
            raise ConfigError(f"[{section.name}] missing key {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {exc}") from exc

    @classmethod
    def load(cls, path: str | Path, overrides: Optional[dict] = None) -> list["Scenario"]:
        """Every ``[scenario...]`` section of one INI file."""
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        out = []
        for name in parser.sections():
            if not name.startswith("scenario"):
                continue
            sec = parser[name]
            for k, v in (overrides or {}).items():
                sec[k] = str(v)
            out.append(cls.from_section(sec, Path(path).parent))
        return out


@dataclass
class Verdict:
    id: str
    kind: str
    scheme: str
    holds: bool
    expected: bool
    metrics: dict
    digest: str
    features: tuple[str, ...] = ()
    detail: str = ""
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return self.holds == self.expected

    @property
    def outcome(self) -> str:
        return "holds" if self.holds else "fails"

    def record(self) -> dict:
        """Machine record; timing is left out so reruns compare byte for byte."""
        return {
            "id": self.id,
            "kind": self.kind,
            "scheme": self.scheme,
            "outcome": self.outcome,
            "expected": "holds" if self.expected else "fails",
            "passed": self.passed,
            "features": list(self.features),
            "metrics": self.metrics,
            "transcript_sha256": self.digest,
            "detail": self.detail,
        }


@dataclass
class Run:
    scenario: Scenario
    transcripts: list[Transcript]
    verdict: Verdict

    def text(self) -> str:
        return "".join(f"# trial {i}\n{t.text()}" for i, t in enumerate(self.transcripts))


@dataclass
class _Outcome:
    holds: bool
    metrics: dict
    transcripts: list[Transcript] = field(default_factory=list)
    detail: str = ""


# -- shared helpers ---------------------------------------------------------


def _proposed(s: Scenario, i: int, **kw) -> ProposedWorld:
    w = provision_proposed(s.trial_seed(i), noise=kw.pop("noise", s.noise), budget=s.budget, **kw)
    w.net.faults = [ChannelFault.parse(f) for f in s.channel_faults]
    return w


def _legacy(s: Scenario, i: int, **kw) -> LegacyWorld:
    w = provision_legacy(s.trial_seed(i), curve_by_name(s.curve), noise=kw.pop("noise", s.noise), **kw)
    w.net.faults = [ChannelFault.parse(f) for f in s.channel_faults]
    return w


def _victim_password(rng: Rng) -> str:
    return Dictionary.synthetic(1, rng)[0] + "-" + rng.random_bytes(2).hex()


def _dictionary(s: Scenario, rng: Rng, plant: str) -> Dictionary:
    if s.dictionary:
        try:
            return Dictionary.from_file(s.dictionary)
        except OSError as exc:
            raise ConfigError(f"{s.id}: cannot read dictionary: {exc}") from exc
    return Dictionary.synthetic(s.dict_size, rng, plant=plant)


def _observed(w) -> list[Envelope]:
    return [e.envelope for e in w.net.transcript.insecure()]


def _fields(envs: list[Envelope], f: Field) -> list[bytes]:
    return [e.get(f) for e in envs if e.has(f)]


def proposed_secrets(w: ProposedWorld) -> dict[str, bytes]:
    """Every long-term and session secret of a proposed-scheme world."""
    RK, SK = w.rc.store.RK_aes, w.server.store.SK_aes
    rec = w.rc.store.users[w.user.ID]
    TX = open_block(rec.EX, RK, WIDE)
    out = {
        "RK_aes": RK,
        "SK_aes": SK,
        "K_s": open_block(w.server.store.EK, SK),
        "X_s": open_block(w.server.store.users[w.user.ID], SK),
        "TC_s": open_block(rec.UX, RK, WIDE),
        "TX_s": TX,
        "W": TX[:BLOCK],
        "BP": TX[BLOCK:],
    }
    s = w.user.last_session
    if s is not None:
        out.update(R_n2=s.R_n2, R_n3=s.R_n3, K_ses=w.user.k_ses)
    return out


def secret_hits(blobs: list[bytes], secrets: dict[str, bytes]) -> list[str]:
    """Names of secrets whose bytes (or either half of a wide one) appear in any blob."""
    hits = []
    for name, value in secrets.items():
        pieces = [value] if len(value) <= BLOCK else [value[:BLOCK], value[BLOCK:]]
        if any(p in blob for blob in blobs for p in pieces):
            hits.append(name)
    return sorted(hits)


def proposed_knowledge(w: ProposedWorld, caps: frozenset[str] = frozenset()) -> Knowledge:
    k = Knowledge(PROPOSED_RULES)
    for env in _observed(w):
        k.observe_envelope(env)
    card = w.user.card
    if "card" in caps and card is not None:
        k.learn("ID", card.ID, "card")
        k.learn("SID", card.SID, "card")
        k.learn("QX", card.QX.to_bytes(), "card")
    if "biometric" in caps:
        helper = card.helper if card is not None else None
        if helper is not None:
            k.learn("BIO", biometric.rep(w.user.template, helper), "biometric")
    if "password" in caps:
        k.learn("PW", canonical_id(w.user.password), "password")
    if "server_db" in caps:
        k.learn("EK_BOX", w.server.store.EK.to_bytes(), "server db")
        for box in w.server.store.users.values():
            k.learn("SX_BOX", box.to_bytes(), "server db")
    return k


def legacy_knowledge(w: LegacyWorld, caps: frozenset[str] = frozenset()) -> Knowledge:
    k = Knowledge(LEGACY_RULES, w.server.state.curve)
    for env in _observed(w):
        k.observe_envelope(env)
    card = w.user.card
    if "card" in caps:
        for sort, v in (("E", card.e), ("F", card.f), ("r", card.r), ("K", card.K)):
            k.learn(sort, v, "card")
    if "password" in caps:
        k.learn("PW", canonical_id(w.user.password), "password")
    if "server_db" in caps:
        k.learn("XS", w.server.state.X_s, "server db")
    return k


class _Capture:
    """Interceptor that records whatever reaches the adversary's address."""

    def __init__(self) -> None:
        self.inbox: list[Envelope] = []

    def __call__(self, src: str, env: Envelope) -> list:
        self.inbox.append(env)
        return []


def _server_checks(w: ProposedWorld, since: int) -> list[str]:
    return [e.check or e.detail for e in w.server.events[since:] if e.kind == "error"]


# -- S1: proposed scheme ---------------------------------------------------


def _s1_honest(s: Scenario) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _proposed(s, i)
        ok = w.login(retries=s.retries)
        m["success"] += ok
        m["keys_equal"] += ok and w.server.established[-1][1] == w.user.k_ses
        secrets = proposed_secrets(w)
        blobs = [e.envelope.encode() for e in w.net.transcript.insecure()]
        hits = secret_hits(blobs, secrets)
        m["secret_bytes_on_insecure"] += len(hits)
        k = proposed_knowledge(w)
        k.saturate()
        m["derivable_secrets"] += len(leaked(k, secrets))
        m["reads_on_secure"] += sum(1 for e in w.net.transcript.entries if e.observed and e.channel != Channel.INSECURE)
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    holds = (m["success"] == m["keys_equal"] == s.trials and m["secret_bytes_on_insecure"] == 0
             and m["derivable_secrets"] == 0 and m["reads_on_secure"] == 0)
    return _Outcome(holds, dict(m), transcripts)


def offline_guess_proposed(s: Scenario) -> _Outcome:
    """Dictionary attack with the stolen card and every captured login."""
    m = Counter()
    transcripts = []
    caps = s.capabilities | {"card"}
    for i in range(s.trials):
        rng = Rng(s.trial_seed(i)).derive("adversary")
        pw = _victim_password(rng)
        w = _proposed(s, i, password=pw)
        for _ in range(s.sessions):
            w.login()
        k = proposed_knowledge(w, frozenset(c for c in caps if c != "password"))
        d = _dictionary(s, rng, pw)
        dist, confirmed, n = guess_with_engine(k, d, canonical_id)
        m["evaluations"] += n
        m["distinguishable"] += len(dist)
        m["confirmed"] += len(confirmed)
        m["true_password_confirmed"] += pw in confirmed
        m["planted"] += pw in d.words
        transcripts.append(w.net.transcript)
    m["victims"] = s.trials
    return _Outcome(m["distinguishable"] == 0, dict(m), transcripts)


def _forged_pairs(rng: Rng, observed: list[Envelope], ID: Block32, strategy: str,
                  card_box: Optional[bytes] = None, password: Optional[str] = None) -> tuple[bytes, bytes]:
    M1s, M2s = _fields(observed, Field.M1), _fields(observed, Field.M2)
    others = _fields(observed, Field.M4) + _fields(observed, Field.M5) + _fields(observed, Field.M7)
    if strategy == "random" or not M1s:
        return random_block(rng), random_block(rng)
    if strategy == "mask_reuse":
        # keep a captured M_2 so the hidden R_n2 is "known" to be valid, pick a fresh M_1
        return random_block(rng), M2s[rng.randbelow(len(M2s))]
    if strategy == "recombine":
        pool = M1s + M2s + others
        a, b, c = (pool[rng.randbelow(len(pool))] for _ in range(3))
        j = rng.randbelow(4)
        if j == 0 and len(M1s) > 1:
            # pair halves of two different sessions; the same session would be a plain replay
            a_i = rng.randbelow(len(M1s))
            b_i = (a_i + 1 + rng.randbelow(len(M1s) - 1)) % len(M1s)
            return M1s[a_i], M2s[b_i]
        if j == 1:
            return xor(a, b), c
        if j == 2:
            return a, xor(b, c)
        return hash_blocks([a, b]), xor(c, ID)
    if strategy == "stolen_card":
        # card and password but no biometric: guess the biometric key, try the card
        B = random_block(rng)
        TC = None
        if card_box is not None:
            try:
                TC = open_box(SealedBox.from_bytes(card_box), kdf_biokey(B))
            except DecryptError:
                TC = None
        BP = hash_blocks([canonical_id(password) if password else random_block(rng), B])
        X_guess = hash_blocks([TC if TC is not None else random_block(rng) * 2, BP])
        return make_login_pair(ID, X_guess, random_block(rng))
    raise PreconditionError(f"unknown strategy {strategy}")


IMPERSONATION_STRATEGIES = ("random", "mask_reuse", "recombine", "stolen_card")


def impersonation_attempt_proposed(s: Scenario, strategies: tuple[str, ...] = IMPERSONATION_STRATEGIES) -> _Outcome:
    """``trials`` forged login requests against one honest server."""
    w = _proposed(s, 0)
    for _ in range(s.sessions):
        w.login()
    observed = _observed(w)
    ID, SID = w.user.ID, w.user.SID  # read off any login envelope
    card_box = w.user.card.QX.to_bytes() if "card" in s.capabilities else None
    password = w.user.password if "password" in s.capabilities else None
    rng = Rng(s.seed).derive("adversary")
    capture = _Capture()
    w.net.interceptors[ADVERSARY] = capture
    m = Counter()
    established = len(w.server.established)
    since = len(w.server.events)
    for i in range(s.trials):
        strategy = strategies[i % len(strategies)]
        M_1, M_2 = _forged_pairs(rng, observed, ID, strategy, card_box, password)
        before = len(capture.inbox)
        w.net.inject(ADVERSARY, w.server.name, Envelope.make(
            Phase.LOGIN, Stat.Login, (Field.ID, ID), (Field.SID, SID), (Field.M1, M_1), (Field.M2, M_2)))
        w.net.run()
        challenged = any(e.stat == Stat.Auth for e in capture.inbox[before:])
        if challenged:
            # the forged pair passed; try to finish with a guessed confirmation
            w.net.inject(ADVERSARY, w.server.name, Envelope.make(
                Phase.LOGIN, Stat.Auth, (Field.ID, ID), (Field.SID, SID), (Field.M7, random_block(rng))))
            w.net.run()
        m[f"attempts.{strategy}"] += 1
        m["challenges_issued"] += challenged
    m["attempts"] = s.trials
    m["acceptances"] = len(w.server.established) - established
    for check in _server_checks(w, since):
        m[f"rejected_at.{check}"] += 1
    holds = m["acceptances"] == 0 and m["challenges_issued"] == 0
    return _Outcome(holds, dict(m), [w.net.transcript])


MASQUERADE_STRATEGIES = ("random", "replay", "mask_reuse", "reflect", "recombine")


def _forged_challenge(rng: Rng, observed: list[Envelope], request: Envelope, strategy: str,
                      db_boxes: list[bytes]) -> tuple[bytes, bytes]:
    M4s, M5s = _fields(observed, Field.M4), _fields(observed, Field.M5)
    if db_boxes and rng.randbelow(2):
        # encrypted SX from a stolen server database, used as if it were X_s
        X_guess = SealedBox.from_bytes(db_boxes[rng.randbelow(len(db_boxes))]).ciphertext
        R_n3 = random_block(rng)
        return hash_blocks([X_guess, R_n3]), xor(hash_blocks([request.get(Field.ID), X_guess, random_block(rng)]), R_n3)
    if strategy == "random" or not M4s:
        return random_block(rng), random_block(rng)
    j = rng.randbelow(len(M4s))
    if strategy == "replay":
        return M4s[j], M5s[j]
    if strategy == "mask_reuse":
        return random_block(rng), M5s[j]
    if strategy == "reflect":
        return request.get(Field.M1), request.get(Field.M2)
    if strategy == "recombine":
        return xor(M4s[j], request.get(Field.M1)), xor(M5s[j], request.get(Field.M2))
    raise PreconditionError(f"unknown strategy {strategy}")


def masquerade_attempt_proposed(s: Scenario, strategies: tuple[str, ...] = MASQUERADE_STRATEGIES) -> _Outcome:
    """The adversary answers ``trials`` honest login requests in the server's place."""
    w = _proposed(s, 0)
    for _ in range(s.sessions):
        w.login()
    observed = _observed(w)
    db_boxes = [b.to_bytes() for b in w.server.store.users.values()] if "server_db" in s.capabilities else []
    rng = Rng(s.seed).derive("adversary")
    m = Counter()
    state = {"strategy": strategies[0]}

    def answer(src: str, env: Envelope) -> list:
        if (env.phase, env.stat) != (Phase.LOGIN, Stat.Login):
            return []
        M_4, M_5 = _forged_challenge(rng, observed, env, state["strategy"], db_boxes)
        reply = Envelope.make(Phase.LOGIN, Stat.Auth, (Field.ID, env.get(Field.ID)), (Field.SID, env.get(Field.SID)),
                              (Field.M4, M_4), (Field.M5, M_5))
        return [Outgoing(src, Channel.INSECURE, reply)]

    w.net.interceptors[w.server.name] = answer
    for i in range(s.trials):
        state["strategy"] = strategies[i % len(strategies)]
        w.drive(w.user, w.user.start_login(w.rng(w.user)))
        m[f"attempts.{state['strategy']}"] += 1
        m["acceptances"] += w.user.outcome.get(Phase.LOGIN) == "complete"
    m["attempts"] = s.trials
    m["rejected_at.M4=M6"] = sum(1 for e in w.user.events if e.check == "M4=M6")
    return _Outcome(m["acceptances"] == 0, dict(m), [w.net.transcript])


def replay_attack(s: Scenario) -> _Outcome:
    """Resend a captured login pair, then the captured M_7, against a fresh challenge."""
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _proposed(s, i)
        w.login()
        captured = _observed(w)
        login = next(e for e in captured if e.stat == Stat.Login)
        confirm = next(e for e in captured if e.phase == Phase.LOGIN and e.has(Field.M7))
        capture = _Capture()
        w.net.interceptors[ADVERSARY] = capture
        established = len(w.server.established)
        since = len(w.server.events)
        w.net.inject(ADVERSARY, w.server.name, login)
        w.net.run()
        m["challenges_issued"] += any(e.stat == Stat.Auth for e in capture.inbox)
        w.net.inject(ADVERSARY, w.server.name, confirm)
        w.net.run()
        m["acceptances"] += len(w.server.established) - established
        checks = _server_checks(w, since)
        m["rejected_at.M7=M8"] += checks == ["M7=M8"]
        k = proposed_knowledge(w)
        k.saturate()
        secrets = proposed_secrets(w)
        if w.server.established[established:]:
            secrets["replayed_K_ses"] = w.server.established[-1][1]
        m["derivable_secrets"] += len(leaked(k, secrets))
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    holds = m["acceptances"] == 0 and m["rejected_at.M7=M8"] == s.trials and m["derivable_secrets"] == 0
    return _Outcome(holds, dict(m), transcripts)


def _s1_forgery(s: Scenario) -> _Outcome:
    """Channel-only adversary: forged requests, forged challenges, tampered confirmations."""
    sub = dict(capabilities=frozenset(), trials=s.trials)
    imp = impersonation_attempt_proposed(_with(s, **sub), ("random", "mask_reuse", "recombine"))
    mas = masquerade_attempt_proposed(_with(s, **sub), MASQUERADE_STRATEGIES)
    m = Counter({f"impersonation.{k}": v for k, v in imp.metrics.items()})
    m.update({f"masquerade.{k}": v for k, v in mas.metrics.items()})
    tampered = 0
    transcripts = imp.transcripts + mas.transcripts
    for i in range(s.trials):
        # insecure delivery #2 is the confirmation carrying M_7
        mask = Rng(s.trial_seed(i)).derive("mask").random_bytes(BLOCK * 3)
        w = _proposed(_with(s, channel_faults=(f"corrupt(2, {mask.hex()})",)), i)
        tampered += w.login()
        transcripts.append(w.net.transcript)
    m["tampered_confirmations_accepted"] = tampered
    holds = imp.holds and mas.holds and tampered == 0
    return _Outcome(holds, dict(m), transcripts)


def _s1_key_storage(s: Scenario) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _proposed(s, i)
        w.login()
        w.change_password("changed-" + str(i))
        w.login()
        secrets = proposed_secrets(w)
        secrets.update(contact=w.user.contact.encode())
        keys = {"RK_aes", "SK_aes"}
        # records as they sit in the databases, without the sealing keys
        rc = w.rc.store
        records = [b.to_bytes() for b in rc.servers.values()]
        records += [x.to_bytes() for r in rc.users.values() for x in (r.UX, r.EX, r.R_cov)]
        records += [w.server.store.EK.to_bytes()] + [b.to_bytes() for b in w.server.store.users.values()]
        records += [storage.card_to_bytes(w.user.card)]
        m["plaintext_hits"] += len(secret_hits(records, {k: v for k, v in secrets.items() if k not in keys}))
        k = proposed_knowledge(w, frozenset({"server_db", "card"}) | s.capabilities)
        k.saturate()
        m["derivable_secrets"] += len(leaked(k, {n: secrets[n] for n in ("X_s", "K_s", "TC_s", "TX_s", "W")}))
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    return _Outcome(m["plaintext_hits"] == 0 and m["derivable_secrets"] == 0, dict(m), transcripts)


def _s1_noisy(s: Scenario) -> _Outcome:
    noise = s.noise or 1
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _proposed(s, i, noise=0)
        w.user.noise = noise  # clean enrollment, noisy logins
        m["success"] += w.login(retries=s.retries)
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    m["flips_per_group"] = noise
    return _Outcome(m["success"] == s.trials, dict(m), transcripts)


_PHASE_OF = {"password_change": "F", "password_recovery": "G", "card_recovery": "H"}


def _run_phase(w: ProposedWorld, kind: str, new_password: str) -> bool:
    if kind == "password_change":
        return w.change_password(new_password)
    if kind == "password_recovery":
        return w.recover_password(new_password)
    return w.recover_card(new_password)


def _fault_owner(w: ProposedWorld, label: str):
    return {"user": w.user, "rc": w.rc, "server": w.server}[label.split(".")[1]]


def phase_trial(w: ProposedWorld, kind: str, new_password: str, fault: Optional[str] = None) -> dict[str, bool]:
    """One run of a multi-step phase, optionally with a forced failure at ``fault``.

    After a failure the pre-phase card and password must still log in; after
    a success the new ones must and the old ones must not.
    """
    old_card, old_password = w.user.card, w.user.password
    if fault is not None:
        _fault_owner(w, fault).faults.add(fault)
    ok = _run_phase(w, kind, new_password)
    out = {"completed": ok, "violations": bool(w.violations())}
    if fault is not None:
        out["fault_fired"] = fault not in _fault_owner(w, fault).faults
        _fault_owner(w, fault).faults.discard(fault)
    if not ok:
        if w.user.card is None:
            w.user.card = old_card  # the "lost" card turns up again
        w.user.password = old_password
        out["old_credentials_login"] = w.login()
        out["violations"] |= bool(w.violations())
        return out
    out["new_credentials_login"] = w.login()
    new_card = w.user.card
    w.user.card = old_card
    out["old_credentials_rejected"] = not w.login(password=old_password)
    w.user.card = new_card
    out["violations"] |= bool(w.violations())
    return out


def _s1_phase(s: Scenario) -> _Outcome:
    labels = [f for f in FAULT_POINTS if f.startswith(_PHASE_OF[s.kind])]
    plan = list(s.faults) if s.faults else labels
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _proposed(s, i)
        fault = plan[i % len(plan)]
        failed = phase_trial(w, s.kind, f"fault-{i}", fault)
        m["faulted_runs"] += 1
        m["fault_fired"] += failed["fault_fired"]
        m["faulted_completed"] += failed["completed"]
        m["reverted_ok"] += failed.get("old_credentials_login", False) and not failed["violations"]
        clean = phase_trial(w, s.kind, f"new-{i}")
        m["completed"] += clean["completed"]
        m["new_credentials_login"] += clean.get("new_credentials_login", False)
        m["old_credentials_rejected"] += clean.get("old_credentials_rejected", False)
        m["violations"] += failed["violations"] + clean["violations"]
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    n = s.trials
    holds = (m["reverted_ok"] == m["fault_fired"] == n and m["faulted_completed"] == 0
             and m["completed"] == m["new_credentials_login"] == m["old_credentials_rejected"] == n
             and m["violations"] == 0)
    return _Outcome(holds, dict(m), transcripts)


# -- S5: legacy scheme -----------------------------------------------------


def _s5_honest(s: Scenario) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i)
        ok = w.login()
        m["success"] += ok
        m["keys_equal"] += ok and w.server.established[-1][1] == w.user.sk
        k = legacy_knowledge(w)
        k.saturate()
        secrets = {"X_s": w.X_s, "M_1": hash_blocks([w.ID, w.X_s])}
        if ok:
            secrets["SK"] = w.user.sk
        m["derivable_secrets"] += len(leaked(k, secrets))
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    holds = m["success"] == m["keys_equal"] == s.trials and m["derivable_secrets"] == 0
    return _Outcome(holds, dict(m), transcripts)


def _s5_guess(s: Scenario, then_impersonate: bool = False) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        rng = Rng(s.trial_seed(i)).derive("adversary")
        pw = _victim_password(rng)
        w = _legacy(s, i, password=pw)
        w.login()
        ID = next(e.get(Field.ID) for e in _observed(w))  # shoulder-surfed off the wire
        x = extract_card(w.user.card)
        d = _dictionary(s, rng, pw)
        try:
            guess, evaluations = guess_password(x, ID, d)
        except NotFound as exc:
            m["evaluations"] += exc.evaluations
            transcripts.append(w.net.transcript)
            continue
        m["recovered"] += guess == pw
        m["evaluations"] += evaluations
        m["evaluations_match_index"] += pw in d.words and evaluations == d.index(pw) + 1
        if then_impersonate:
            out = impersonate_user(x, ID, guess, w.server.state.curve, rng, w.server, w.net)
            m["accepted_by_server"] += out.accepted
            m["shared_key"] += out.keys_agree
        transcripts.append(w.net.transcript)
    m["victims"] = s.trials
    broken = m["accepted_by_server"] if then_impersonate else m["recovered"]
    return _Outcome(broken == 0, dict(m), transcripts)


def _leak_master(w: LegacyWorld) -> Block32:
    # the serialized server state is [tag, curve, X_s, users...]
    return lp_split(w.server.state.to_bytes())[2]


def _s5_masquerade(s: Scenario) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i)
        rng = Rng(s.trial_seed(i)).derive("adversary")
        X_s = _leak_master(w) if "server_db" in s.capabilities else random_block(rng)
        fake = masquerade_server(X_s, w.server.state.curve, rng, w.server.name, reuse_ephemeral=bool(i % 2))
        fake_rng = rng.derive("fake")
        w.net.interceptors[w.server.name] = lambda src, env: fake.step(src, Channel.INSECURE, env, fake_rng)
        before = len(w.server.established)
        w.net.send(w.user.name, w.user.start_login(w.net.actor_rng(w.user)))
        w.net.run()
        accepted = w.user.outcome == "complete"
        arm = "reused_b" if i % 2 else "fresh_b"
        m[f"accepted.{arm}"] += accepted
        m["accepted"] += accepted
        m["shared_key"] += accepted and fake.established[-1][1] == w.user.sk
        m["honest_server_untouched"] += len(w.server.established) == before
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    return _Outcome(m["accepted"] == 0, dict(m), transcripts)


def _s5_replay(s: Scenario) -> _Outcome:
    """A stale request is answered (the server keeps no state) but yields nothing usable."""
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i)
        w.login()
        captured = _observed(w)
        request = next(e for e in captured if e.stat == Stat.Login)
        reply = next(e for e in captured if e.stat == Stat.Auth)
        capture = _Capture()
        w.net.interceptors[ADVERSARY] = capture
        before = len(w.server.established)
        w.net.inject(ADVERSARY, w.server.name, request)
        w.net.run()
        m["stale_requests_answered"] += len(w.server.established) - before
        # stale reply to a fresh login of the honest user
        w.net.interceptors[w.server.name] = lambda src, env: [Outgoing(src, Channel.INSECURE, reply)]
        w.net.send(w.user.name, w.user.start_login(w.net.actor_rng(w.user)))
        w.net.run()
        m["user_accepted_stale_reply"] += w.user.outcome == "complete"
        k = legacy_knowledge(w)
        k.saturate()
        sks = {f"sk{j}": sk for j, (_, sk) in enumerate(w.server.established)}
        m["session_keys_derivable"] += len(leaked(k, sks))
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    holds = m["user_accepted_stale_reply"] == 0 and m["session_keys_derivable"] == 0
    return _Outcome(holds, dict(m), transcripts)


def _s5_forgery(s: Scenario) -> _Outcome:
    """Channel-only adversary: no card, no X_s."""
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i)
        w.login()
        rng = Rng(s.trial_seed(i)).derive("adversary")
        curve = w.server.state.curve
        captured = _observed(w)
        request = next(e for e in captured if e.stat == Stat.Login)
        before = len(w.server.established)
        # a fresh point equal to the captured one would make this a replay, so draw another
        old_M2 = request.get(Field.LI_M2)
        M_2 = old_M2
        while M_2 == old_M2:
            M_2 = encode_point(scalar_mul(random_scalar(rng, curve), curve.G, curve), curve)
        forged = [
            request.replace(Field.LI_M3, random_block(rng)),
            request.replace(Field.LI_M2, M_2),
            request.replace(Field.ID, random_block(rng)),
        ]
        for env in forged:
            w.net.inject(ADVERSARY, w.server.name, env)
        w.net.interceptors[ADVERSARY] = _Capture()
        w.net.run()
        m["server_accepted"] += len(w.server.established) - before

        def fake_reply(src: str, env: Envelope) -> list:
            M_5 = scalar_mul(random_scalar(rng, curve), curve.G, curve)
            return [Outgoing(src, Channel.INSECURE, LiReply(M_5, random_block(rng)).envelope(curve))]

        w.net.interceptors[w.server.name] = fake_reply
        w.net.send(w.user.name, w.user.start_login(w.net.actor_rng(w.user)))
        w.net.run()
        m["user_accepted"] += w.user.outcome == "complete"
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    return _Outcome(m["server_accepted"] == 0 and m["user_accepted"] == 0, dict(m), transcripts)


def _s5_key_storage(s: Scenario) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i)
        w.login()
        m["plaintext_hits"] += len(secret_hits([w.server.state.to_bytes()], {"X_s": w.X_s}))
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    return _Outcome(m["plaintext_hits"] == 0, dict(m), transcripts)


def _s5_noisy(s: Scenario) -> _Outcome:
    noise = s.noise or 1
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i, noise=noise)
        m["success"] += w.login()
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    m["flips_per_group"] = noise
    return _Outcome(m["success"] == s.trials, dict(m), transcripts)


def _s5_password_change(s: Scenario) -> _Outcome:
    m = Counter()
    transcripts = []
    for i in range(s.trials):
        w = _legacy(s, i)
        w.user.card = li_change_password(w.user.card, w.ID, w.user.password, f"new-{i}", w.user.template)
        w.user.password = f"new-{i}"
        m["new_credentials_login"] += w.login()
        transcripts.append(w.net.transcript)
    m["trials"] = s.trials
    return _Outcome(m["new_credentials_login"] == s.trials, dict(m), transcripts)


def _unsupported(s: Scenario) -> _Outcome:
    return _Outcome(False, {"supported": False}, [], "the scheme has no such phase")


RUNNERS: dict[tuple[str, str], Callable[[Scenario], _Outcome]] = {
    ("S1", "honest"): _s1_honest,
    ("S1", "guess"): offline_guess_proposed,
    ("S1", "impersonate"): impersonation_attempt_proposed,
    ("S1", "masquerade"): masquerade_attempt_proposed,
    ("S1", "replay"): replay_attack,
    ("S1", "forgery"): _s1_forgery,
    ("S1", "key_storage"): _s1_key_storage,
    ("S1", "noisy_login"): _s1_noisy,
    ("S1", "password_change"): _s1_phase,
    ("S1", "password_recovery"): _s1_phase,
    ("S1", "card_recovery"): _s1_phase,
    ("S5", "honest"): _s5_honest,
    ("S5", "guess"): _s5_guess,
    ("S5", "impersonate"): lambda s: _s5_guess(s, then_impersonate=True),
    ("S5", "masquerade"): _s5_masquerade,
    ("S5", "replay"): _s5_replay,
    ("S5", "forgery"): _s5_forgery,
    ("S5", "key_storage"): _s5_key_storage,
    ("S5", "noisy_login"): _s5_noisy,
    ("S5", "password_change"): _s5_password_change,
    ("S5", "password_recovery"): _unsupported,
    ("S5", "card_recovery"): _unsupported,
}


def _with(s: Scenario, **changes) -> Scenario:
    return replace(s, **changes)


def run_scenario(s: Scenario) -> Run:
    t0 = time.perf_counter()
    try:
        out = RUNNERS[(s.scheme, s.kind)](s)
    except NonTermination as exc:
        out = _Outcome(False, {"nontermination": 1}, [], str(exc))
    except ConfigError:
        raise
    except ProtocolError as exc:
        # a harness-level abort (e.g. provisioning) is a failed run, not a crash
        out = _Outcome(False, {"aborted": 1}, [], f"{type(exc).__name__}: {exc}")
    digest = hashlib.sha256()
    for t in out.transcripts:
        digest.update(t.text().encode())
    verdict = Verdict(
        id=s.id, kind=s.kind, scheme=s.scheme, holds=out.holds, expected=s.expect == "holds",
        metrics={k: int(v) if isinstance(v, bool) else v for k, v in sorted(out.metrics.items())},
        digest=digest.hexdigest(), features=s.backs, detail=out.detail,
        elapsed=time.perf_counter() - t0,
    )
    return Run(s, out.transcripts, verdict)


def feature_matrix(verdicts: list[Verdict] | list[dict]) -> list[tuple[str, dict[str, Optional[bool]]]]:
    """Row label -> {scheme: Y/N/None}; a cell is Y iff every backing verdict held."""
    recs = [v.record() if isinstance(v, Verdict) else v for v in verdicts]
    rows = []
    for key, label in MATRIX_ROWS:
        cells: dict[str, Optional[bool]] = {}
        for scheme in SCHEMES:
            backing = [r for r in recs if r["scheme"] == scheme and key in r["features"]]
            cells[scheme] = all(r["outcome"] == "holds" for r in backing) if backing else None
        rows.append((label, cells))
    return rows
