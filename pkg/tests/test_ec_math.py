import pytest
from cryptography.hazmat.primitives.asymmetric import ec
from hypothesis import given
from hypothesis import strategies as st

from threefactor.crypto_core import Rng
from threefactor.ec_math import (
    IDENTITY, STD256, TINY, Point, add, curve_by_name, decode_point, encode_point, negate, on_curve, point_block,
    random_scalar, scalar_mul,
)
from threefactor.errors import PreconditionError

import oracles


def test_tiny_curve_shape():
    TINY.validate()
    assert on_curve(TINY.G, TINY)
    assert len(oracles.curve_points(TINY.p, TINY.a, TINY.b)) == TINY.n
    assert scalar_mul(TINY.n, TINY.G, TINY) == IDENTITY


@given(st.integers(1, 2**128))
def test_p256_matches_reference_library(k):
    k = k % (STD256.n - 1) + 1
    pub = ec.derive_private_key(k, ec.SECP256R1()).public_key().public_numbers()
    assert scalar_mul(k, STD256.G, STD256) == Point(pub.x, pub.y)


def test_p256_order():
    STD256.validate()
    assert scalar_mul(STD256.n, STD256.G, STD256) == IDENTITY


@given(st.integers(0, 102), st.integers(0, 102))
def test_scalar_mul_is_homomorphic(a, b):
    lhs = scalar_mul((a + b) % TINY.n, TINY.G, TINY)
    rhs = add(scalar_mul(a, TINY.G, TINY), scalar_mul(b, TINY.G, TINY), TINY)
    assert lhs == rhs


@given(st.integers(1, 102), st.integers(1, 102))
def test_diffie_hellman_agrees(a, b):
    A, B = scalar_mul(a, TINY.G, TINY), scalar_mul(b, TINY.G, TINY)
    assert scalar_mul(a, B, TINY) == scalar_mul(b, A, TINY)


def test_negation():
    for k in range(TINY.n):
        P = scalar_mul(k, TINY.G, TINY)
        assert add(P, negate(P, TINY), TINY) == IDENTITY


@given(st.integers(0, 102))
def test_encoding_round_trip(k):
    P = scalar_mul(k, TINY.G, TINY)
    assert decode_point(encode_point(P, TINY), TINY) == P


def test_encoding_rejects_off_curve_points():
    with pytest.raises(PreconditionError):
        decode_point(b"\x04\x00\x01", TINY)
    with pytest.raises(PreconditionError):
        add(Point(1, 1), TINY.G, TINY)


def test_point_block_distinguishes_points():
    blocks = {point_block(scalar_mul(k, TINY.G, TINY), TINY) for k in range(TINY.n)}
    assert len(blocks) == TINY.n


@given(st.integers(0, 2**64 - 1))
def test_random_scalar_range(seed):
    assert 1 <= random_scalar(Rng(seed), TINY) < TINY.n


def test_curve_lookup():
    assert curve_by_name("tiny") is TINY
    with pytest.raises(PreconditionError):
        curve_by_name("p521")
    with pytest.raises(PreconditionError):
        scalar_mul(-1, TINY.G, TINY)
