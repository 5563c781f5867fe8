from functools import reduce

from hypothesis import given, settings
from hypothesis import strategies as st

from threefactor.channel_sim import legacy_knowledge, proposed_knowledge, proposed_secrets
from threefactor.crypto_core import canonical_id, hash_blocks, xor
from threefactor.dolev_yao import PROPOSED_RULES, H, Knowledge, X, XorSpan, guess_with_engine, leaked
from threefactor.ec_math import TINY
from threefactor.world import provision_legacy, provision_proposed

blocks = st.binary(min_size=32, max_size=32)


@given(st.lists(blocks, min_size=1, max_size=6), st.data())
def test_xor_span_contains_subset_sums(values, data):
    span = XorSpan(values)
    subset = data.draw(st.lists(st.sampled_from(values), min_size=1))
    assert span.contains(reduce(xor, subset))


def test_xor_span_excludes_fresh_value():
    values = [hash_blocks([bytes([i]) * 32]) for i in range(8)]
    assert not XorSpan(values).contains(hash_blocks([b"\xff" * 32]))


def test_tiny_rule_set_closure():
    k = Knowledge((H("A", "B", to="C"), X("C", "A", to="D")))
    a, b = b"\x01" * 32, b"\x02" * 32
    k.learn("A", a)
    k.learn("B", b)
    k.saturate()
    c = hash_blocks([a, b])
    assert k.sort_values("C") == {c} and k.sort_values("D") == {xor(c, a)}
    assert k.saturate() == 0


def test_hypothesis_test_fires_on_anchored_sort():
    k = Knowledge((H("PW", "SALT", to="V"),))
    salt = b"\x03" * 32
    k.learn("SALT", salt)
    k.learn("V", hash_blocks([canonical_id("right"), salt]))
    k.hypothesize("PW", canonical_id("right"), "g")
    k.saturate()
    assert [t.match for t in k.hypothesis_tests("g")] == [True]


@settings(max_examples=5)
@given(st.integers(0, 2**32))
def test_saturation_reaches_a_fixpoint(seed):
    w = provision_proposed(seed)
    w.login()
    k = proposed_knowledge(w, frozenset({"card", "server_db"}))
    assert k.saturate() < 32
    before = {s: set(v) for s, v in k.values.items()}
    assert k.saturate() == 0
    assert {s: set(v) for s, v in k.values.items()} == before


def test_honest_proposed_transcript_leaks_nothing():
    w = provision_proposed(3)
    w.login()
    k = proposed_knowledge(w)
    k.saturate()
    assert leaked(k, proposed_secrets(w)) == {}


def test_sealing_key_unlocks_the_server_database():
    w = provision_proposed(4)
    w.login()
    k = proposed_knowledge(w, frozenset({"server_db"}))
    k.learn("SK_AES", w.server.store.SK_aes)
    k.saturate()
    assert "X_s" in leaked(k, proposed_secrets(w))


def test_legacy_card_gives_a_password_verifier():
    w = provision_legacy(5, TINY, password="opensesame")
    w.login()
    k = legacy_knowledge(w, frozenset({"card"}))
    k.learn("ID", w.ID)
    dist, confirmed, n = guess_with_engine(k, ["nope", "opensesame", "other"], canonical_id)
    assert n == 3 and dist == ["nope", "opensesame", "other"] and confirmed == ["opensesame"]


def test_proposed_card_gives_no_verifier():
    w = provision_proposed(6, password="opensesame")
    w.login()
    k = proposed_knowledge(w, frozenset({"card"}))
    dist, confirmed, n = guess_with_engine(k, ["nope", "opensesame"], canonical_id)
    assert (dist, confirmed, n) == ([], [], 2)


def test_proposed_rules_are_named():
    assert len({r.name for r in PROPOSED_RULES}) == len(PROPOSED_RULES)
