import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threefactor.channel_sim import proposed_secrets, secret_hits
from threefactor.crypto_core import WIDE, hash_blocks, open_block, xor
from threefactor.errors import VerificationFailure
from threefactor.fabric import ChannelFault
from threefactor.proposed_scheme import (
    FAULT_POINTS, derive_session_key, make_challenge, make_confirmation, make_login_pair, make_tcx, recover_rn2,
    recover_rn3, recover_xs,
)
from threefactor.wire import Channel, Phase
from threefactor.world import LOGIN_RETRY_CAP, PhaseAborted, provision_proposed

blocks = st.binary(min_size=32, max_size=32)
seeds = st.integers(0, 2**32)


@given(blocks, blocks, blocks, blocks)
def test_nonce_recovery(ID, X_s, R_n2, R_n3):
    M_1, M_2 = make_login_pair(ID, X_s, R_n2)
    assert recover_rn2(ID, X_s, M_2) == R_n2
    assert M_1 == hash_blocks([X_s, recover_rn2(ID, X_s, M_2)])
    M_4, M_5 = make_challenge(ID, X_s, R_n2, R_n3)
    assert recover_rn3(ID, X_s, R_n2, M_5) == R_n3
    assert M_4 == hash_blocks([X_s, R_n3])
    assert make_confirmation(X_s, R_n2, R_n3) == hash_blocks([X_s, R_n2, R_n3])
    assert derive_session_key(R_n2, R_n3) == hash_blocks([R_n2, R_n3])


@given(st.binary(min_size=64, max_size=64), blocks)
def test_tcx_round_trip(TC, X_s):
    assert recover_xs(make_tcx(TC, X_s), TC) == X_s


@given(st.binary(min_size=64, max_size=64), blocks, blocks.filter(any))
def test_tcx_halves_must_agree(TC, X_s, delta):
    bad = xor(make_tcx(TC, X_s), bytes(32) + delta)
    with pytest.raises(VerificationFailure):
        recover_xs(bad, TC)


@settings(max_examples=15)
@given(seeds)
def test_honest_login_agrees(seed):
    w = provision_proposed(seed)
    assert w.login()
    assert w.server.established[-1] == (w.user.ID, w.user.k_ses)
    assert not w.violations()


def test_x_s_agrees_on_both_sides():
    w = provision_proposed(1)
    RK = w.rc.store.RK_aes
    TC = open_block(w.rc.store.users[w.user.ID].UX, RK, WIDE)
    TX = open_block(w.rc.store.users[w.user.ID].EX, RK, WIDE)
    assert hash_blocks([TC, TX[32:]]) == proposed_secrets(w)["X_s"]


def test_wrong_factors_fail():
    w = provision_proposed(2)
    assert not w.login(password="wrong")
    assert w.server.events[-1].check == "M1=M3"
    w.user.noise = 2
    assert not w.login()
    w.user.noise = 1
    assert w.login()


def test_card_needs_the_enrolled_biometric():
    w = provision_proposed(3)
    other = provision_proposed(4).user.template
    assert not w.login(reading=other)
    assert w.user.outcome[Phase.LOGIN] == "failed"


def test_password_change_then_recoveries():
    w = provision_proposed(5)
    assert w.change_password("second")
    assert w.login() and not w.login(password="correct horse")
    assert w.recover_password("third")
    assert w.login() and w.user.password == "third"
    old_card = w.user.card
    assert w.recover_card("fourth")
    assert w.user.card != old_card and w.login()
    assert not w.violations()
    w.user.card = old_card
    assert not w.login()


def test_unknown_server_is_reported():
    with pytest.raises(PhaseAborted, match="UnknownPrincipal"):
        provision_proposed(6, register_with="nobank")


def test_retry_after_a_dropped_request():
    w = provision_proposed(7)
    w.net.faults = [ChannelFault.parse(f"drop({w.net._insecure_count})")]
    assert not w.login()
    w.net.faults = [ChannelFault.parse(f"drop({w.net._insecure_count})")]
    assert w.login(retries=1)
    assert LOGIN_RETRY_CAP == 3


def test_registration_secrets_stay_off_the_insecure_channel():
    w = provision_proposed(8)
    insecure = [e for e in w.net.transcript.entries if e.channel == Channel.INSECURE]
    assert insecure == []
    w.login()
    blobs = [e.envelope.encode() for e in w.net.transcript.insecure()]
    assert secret_hits(blobs, proposed_secrets(w)) == []


@settings(max_examples=10)
@given(seeds)
def test_fresh_nonces_per_login(seed):
    w = provision_proposed(seed)
    w.login()
    first = w.user.k_ses
    w.login()
    assert w.user.k_ses != first


def test_fault_labels_cover_three_phases():
    assert len(FAULT_POINTS) >= 15
    assert {f[0] for f in FAULT_POINTS} == {"F", "G", "H"}
