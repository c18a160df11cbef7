import pytest
from hypothesis import given
from hypothesis import strategies as st

from gdiss.identity import (
    ED25519_SCHEME,
    MOCK_SCHEME,
    AgentId,
    gen_identity,
    hash_bytes,
    scheme_by_name,
    seed_from_hex,
)

SEED0 = bytes(32)
SEED1 = bytes(31) + b"\x01"
SEED2 = bytes(31) + b"\x02"


def test_sha256_empty_vector():
    assert hash_bytes(b"").hex() == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


def test_sha256_abc_vector():
    assert hash_bytes(b"abc").hex() == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )


@given(st.binary(max_size=64))
def test_hash_deterministic(data):
    assert hash_bytes(data) == hash_bytes(data)


@pytest.mark.parametrize("scheme", [MOCK_SCHEME, ED25519_SCHEME])
def test_gen_identity_deterministic(scheme):
    a = gen_identity(SEED0, scheme)
    b = gen_identity(SEED0, scheme)
    assert a == b
    assert a.agent_id == b.agent_id


@pytest.mark.parametrize("scheme", [MOCK_SCHEME, ED25519_SCHEME])
def test_distinct_seeds_distinct_ids(scheme):
    assert gen_identity(SEED1, scheme).agent_id != gen_identity(SEED2, scheme).agent_id


def test_sorting_is_stable():
    ids = [gen_identity(bytes(31) + bytes([i])).agent_id for i in range(10)]
    once = sorted(ids)
    twice = sorted(sorted(ids))
    assert once == twice
    assert [i.data for i in once] == sorted(i.data for i in ids)


@pytest.mark.parametrize("scheme", [MOCK_SCHEME, ED25519_SCHEME])
def test_sign_verify_round_trip(scheme):
    ident = gen_identity(SEED1, scheme)
    digest = hash_bytes(b"message")
    sig = scheme.sign(digest, ident)
    assert scheme.verify(digest, sig, ident.agent_id)


@pytest.mark.parametrize("scheme", [MOCK_SCHEME, ED25519_SCHEME])
def test_verify_wrong_agent_fails(scheme):
    ident = gen_identity(SEED1, scheme)
    other = gen_identity(SEED2, scheme)
    digest = hash_bytes(b"message")
    sig = scheme.sign(digest, ident)
    assert not scheme.verify(digest, sig, other.agent_id)


@pytest.mark.parametrize("scheme", [MOCK_SCHEME, ED25519_SCHEME])
def test_malformed_signature_returns_false(scheme):
    ident = gen_identity(SEED1, scheme)
    digest = hash_bytes(b"message")
    assert not scheme.verify(digest, b"short", ident.agent_id)
    assert not scheme.verify(digest, bytes(64), ident.agent_id)


def test_mock_signature_golden_bytes():
    # frozen once; a change here means the mock scheme broke reproducibility
    ident = gen_identity(SEED0, MOCK_SCHEME)
    sig = MOCK_SCHEME.sign(hash_bytes(b"golden"), ident)
    assert sig.hex() == (
        "b628da8a7fb7be00364c79fd088aeebe5f5a2c84d3f17f3f3eb98cf466bf4d7a"
        "69e9d5414c1c24422b225e8bb0d63ec1083252423fefb05649c244bfca1cc55d"
    )


@given(st.binary(min_size=32, max_size=32))
def test_mock_sign_verify_property(seed):
    ident = gen_identity(seed, MOCK_SCHEME)
    digest = hash_bytes(seed[::-1])
    assert MOCK_SCHEME.verify(digest, MOCK_SCHEME.sign(digest, ident), ident.agent_id)


def test_agent_id_length_enforced():
    with pytest.raises(ValueError):
        AgentId(b"short")


def test_seed_from_hex_round_trip():
    assert seed_from_hex(SEED1.hex() + "\n") == SEED1
    with pytest.raises(ValueError):
        seed_from_hex("ff")


def test_scheme_by_name():
    assert scheme_by_name("mock") is MOCK_SCHEME
    assert scheme_by_name("ed25519") is ED25519_SCHEME
    with pytest.raises(ValueError):
        scheme_by_name("rot13")
