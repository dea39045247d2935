from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from privagg.errors import LengthMismatch, MalformedShare, MissingShare, TooFewServers
from privagg.field import F101, GOLDILOCKS
from privagg.sharing import (
    BeaverTriple,
    Rng,
    ShareVector,
    combine,
    prg_expand,
    random_triple,
    split,
    split_prg,
    split_triple,
)


def test_split_zero_vector(field, rng):
    shares = split(field, [0, 0, 0], 3, rng)
    assert combine(field, shares) == [0, 0, 0]
    assert all(not sh.seeded for sh in shares)


def test_explicit_shares_that_wrap():
    shares = [ShareVector(i, 1, values=(v,)) for i, v in enumerate((10, 20, 71))]
    assert combine(F101, shares) == [0]


def test_too_few_servers(rng):
    with pytest.raises(TooFewServers):
        split(F101, [1], 1, rng)
    with pytest.raises(TooFewServers):
        split_prg(F101, [1], 1, rng)


def test_combine_single_share_is_identity():
    assert combine(F101, [ShareVector(0, 2, values=(4, 5))]) == [4, 5]


def test_combine_errors():
    with pytest.raises(MissingShare):
        combine(F101, [])
    with pytest.raises(LengthMismatch):
        combine(F101, [[1, 2], [3]])


@given(st.lists(st.integers(0, 100), min_size=1, max_size=12), st.integers(2, 6), st.integers(0, 2**32))
def test_split_round_trip(x, s, seed):
    r = Rng(seed)
    assert combine(F101, split(F101, x, s, r)) == x
    assert combine(F101, split_prg(F101, x, s, r)) == x


def test_split_round_trip_many(field):
    r = Rng(7)
    for _ in range(1000):
        s = r.randbelow(5) + 2
        x = r.elements(field, r.randbelow(6) + 1)
        assert combine(field, split(field, x, s, r)) == x


def test_split_prg_structure(field, rng):
    x = rng.elements(field, 40)
    shares = split_prg(field, x, 5, rng)
    assert [sh.seeded for sh in shares] == [True] * 4 + [False]
    assert combine(field, shares) == x
    assert all(sh.length == 40 for sh in shares)


def test_split_prg_size_is_one_share_plus_keys(field, rng):
    L, s = 1024, 5
    x = rng.elements(field, L)
    compressed = sum(len(sh.to_bytes(field)) for sh in split_prg(field, x, s, rng))
    explicit = sum(len(sh.to_bytes(field)) for sh in split(field, x, s, rng))
    assert compressed == (L * field.width + 5) + (s - 1) * (1 + 16 + 4)
    assert explicit == s * (L * field.width + 5)


def test_prg_expansion_is_deterministic(field):
    key = bytes(range(16))
    a = prg_expand(field, key, 300)
    assert a == prg_expand(field, key, 300)
    assert len(a) == 300 and all(0 <= v < field.modulus for v in a)
    # a prefix of a longer expansion is the shorter expansion
    assert prg_expand(field, key, 1000)[:300] == a


def test_prg_known_answer():
    # AES-128-CTR, zero nonce, rejection sampling bytes >= 202 for F101
    from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

    key = b"\x00" * 16
    ks = Cipher(algorithms.AES(key), modes.CTR(bytes(16))).encryptor().update(bytes(64))
    want = [b % 101 for b in ks if b < 202][:10]
    assert prg_expand(F101, key, 10) == want


def test_rng_reproducible():
    assert Rng(5).random_bytes(32) == Rng(5).random_bytes(32)
    assert Rng(5).random_bytes(32) != Rng(6).random_bytes(32)
    r = Rng(9)
    assert all(0 <= r.randbelow(7) < 7 for _ in range(200))


def test_share_wire_forms(field, rng):
    x = rng.elements(field, 3)
    seeded, explicit = split_prg(field, x, 2, rng)
    raw = seeded.to_bytes(field)
    assert raw[0] == 1 and len(raw) == 21 and raw[17:] == b"\x00\x00\x00\x03"
    raw2 = explicit.to_bytes(field)
    assert raw2[:5] == b"\x00\x00\x00\x00\x03" and len(raw2) == 5 + 3 * field.width
    back, end = ShareVector.from_bytes(field, raw + raw2)
    assert back.key == seeded.key and end == 21
    back2, end2 = ShareVector.from_bytes(field, raw + raw2, end)
    assert back2.values == explicit.values and end2 == len(raw) + len(raw2)


@pytest.mark.parametrize("data", [b"", b"\x02", b"\x01" + bytes(5), b"\x00\x00\x00\x00\x05\x01"])
def test_malformed_shares(data):
    with pytest.raises(MalformedShare):
        ShareVector.from_bytes(F101, data)


def test_non_canonical_explicit_share_rejected():
    with pytest.raises(MalformedShare):
        ShareVector.from_bytes(F101, b"\x00\x00\x00\x00\x01\x70")


@pytest.mark.parametrize("splitter", [split, split_prg], ids=["explicit", "prg"])
def test_proper_subset_marginals_uniform(splitter):
    r = Rng(2024)
    x = [42, 7]
    n = 10_000
    counts = [[0] * 101 for _ in range(2)]
    for _ in range(n):
        shares = splitter(F101, x, 3, r)
        for j in (0, 1):  # any s-1 shares
            counts[j][shares[j].expand(F101)[0]] += 1
    for c in counts:
        assert chisquare(c).pvalue > 1e-3
    # the pair (share0, share1) jointly: their sum is also uniform
    sums = [0] * 101
    r = Rng(99)
    for _ in range(n):
        shares = splitter(F101, x, 3, r)
        sums[(shares[0].expand(F101)[1] + shares[1].expand(F101)[1]) % 101] += 1
    assert chisquare(sums).pvalue > 1e-3


def test_triples(field, rng):
    t = random_triple(field, rng)
    assert t.is_valid(field)
    parts = split_triple(field, t, 4, rng)
    p = field.modulus
    assert sum(s.a for s in parts) % p == t.a
    assert sum(s.b for s in parts) % p == t.b
    assert sum(s.c for s in parts) % p == t.c
    assert not BeaverTriple(t.a, t.b, t.c + 1).is_valid(field)


def test_goldilocks_elements_below_modulus():
    r = Rng(3)
    assert all(v < GOLDILOCKS.modulus for v in r.elements(GOLDILOCKS, 5000))
