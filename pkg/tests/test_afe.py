from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from _catalog import SMALL_KINDS, kind_id
from privagg.afe import (
    KINDS,
    BoolAnd,
    BoolOr,
    CountMin,
    FreqCount,
    LinReg,
    Mean,
    MinMaxApprox,
    MinMaxExact,
    MostPopular,
    RSquared,
    Sum,
    Variance,
    parse_kind,
)
from privagg.circuit import eval_circuit, is_valid
from privagg.errors import (
    ConfigurationError,
    DecodeError,
    DomainError,
    LengthMismatch,
    NoMajority,
    OverflowRisk,
)
from privagg.field import F101, GOLDILOCKS
from privagg.harness import agrees, plaintext_oracle, sample_inputs
from privagg.sharing import Rng

F = GOLDILOCKS


def aggregate(kind, inputs, field=F, rng=None):
    rng = rng or Rng(0)
    p = field.modulus
    sigma = [0] * kind.k_prime
    for x in inputs:
        t = kind.truncate(kind.encode(field, x, rng))
        sigma = [(a + b) % p for a, b in zip(sigma, t)]
    return kind.decode(field, sigma, len(inputs))


# -- encodings


def test_encode_examples():
    assert Sum(4).encode(F101, 5) == [5, 1, 0, 1, 0]
    assert BoolOr(8).encode(F101, 0, Rng(1)) == [0] * 8
    assert FreqCount(3).encode(F101, 1) == [0, 1, 0]
    assert LinReg(1, 3).encode(F101, (2, 5)) == [2, 4, 5, 10, 0, 1, 0, 1, 0, 1]
    assert Variance(3).encode(F101, 3) == [3, 9, 1, 1, 0]
    assert MinMaxExact(4).encode(F101, 2) == [1, 1, 1, 0]
    assert MinMaxExact(4, is_max=False).encode(F101, 1) == [1, 1, 1, 0]
    assert MostPopular(3).encode(F101, "101") == [1, 0, 1]


def test_bool_true_encodings_are_random_bits():
    r = Rng(2)
    draws = [BoolOr(8).encode(F101, 1, r) for _ in range(4000)]
    assert all(set(v) <= {0, 1} for v in draws)
    sigma = math.sqrt(4000 * 0.25)
    for i in range(8):
        assert abs(sum(v[i] for v in draws) - 2000) <= 4 * sigma
    # AND encodes false as random bits and true as zeros
    assert BoolAnd(8).encode(F101, 1, r) == [0] * 8


@pytest.mark.parametrize("kind,bad", [
    (Sum(4), 16), (Sum(4), -1), (FreqCount(3), 3), (MinMaxExact(4), 4), (Variance(2), 4),
    (MostPopular(3), "10"), (MostPopular(3), "102"), (LinReg(1, 3), (8, 1)), (LinReg(1, 3), (1,)),
    (RSquared((0, 1), 3), (9, 1)), (BoolOr(4), 2), (Sum(4), "abc"),
])
def test_domain_errors(kind, bad):
    with pytest.raises(DomainError):
        kind.encode(F101, bad, Rng(0))


def test_multiplication_gate_counts():
    assert Sum(4).circuit.M == 4
    assert Mean(5).circuit.M == 5
    assert Variance(4).circuit.M == 5
    assert BoolOr(16).circuit.M == 1 and BoolAnd(16).circuit.M == 1
    assert MinMaxExact(8).circuit.M == 8
    assert MinMaxApprox(256, 2).circuit.M == 8
    assert FreqCount(8).circuit.M == 8
    cm = CountMin(0.2, 0.1)
    assert (cm.rows, cm.width) == (math.ceil(math.log(10)), math.ceil(math.e / 0.2))
    assert cm.circuit.M == cm.rows * cm.width
    assert MostPopular(8).circuit.M == 8
    for d in (1, 2, 4):
        b = 4
        assert LinReg(d, b).circuit.M == (d + 1) * b + d * (d + 1) // 2 + d
    assert RSquared((1, 2), 4).circuit.M == 2 + 2 * 4
    assert RSquared((1, 2), 4, range_check=False).circuit.M == 2


def test_bool_circuits_accept_every_bit_string():
    c = BoolOr(6).circuit
    for v in range(64):
        assert is_valid(c, eval_circuit(c, F101, [(v >> i) & 1 for i in range(6)]))


def test_rsquared_quadratic_checks():
    k = RSquared((1, 2), 3, range_check=False)
    c = k.circuit
    good = k.encode(F101, (2, 7))  # yhat = 5, residual 2
    assert good == [7, 49, 4, 2]
    assert is_valid(c, eval_circuit(c, F101, good))
    assert not is_valid(c, eval_circuit(c, F101, [7, 48, 4, 2]))
    assert not is_valid(c, eval_circuit(c, F101, [7, 49, 5, 2]))


# -- truncation


def test_truncation():
    assert Sum(4).truncate([5, 1, 0, 1, 0]) == [5]
    assert BoolOr(3).truncate([1, 0, 1]) == [1, 0, 1]
    assert LinReg(1, 3).truncate([2, 4, 5, 10, 0, 1, 0, 1, 0, 1]) == [2, 4, 5, 10]
    assert Variance(3).k_prime == 2
    with pytest.raises(LengthMismatch):
        Sum(4).truncate([5])


def test_linreg_truncated_length():
    # x_j, x_j x_k (j <= k), y, x_j y
    for d in (1, 2, 3, 4):
        assert LinReg(d, 4).k_prime == d + d * (d + 1) // 2 + 1 + d


# -- decoding


def test_decode_examples():
    assert aggregate(Sum(4), [1, 2, 3]).total == 6
    v = aggregate(Variance(4), [1, 2, 3])
    assert v.mean == 2 and v.variance == Fraction(2, 3)
    assert aggregate(Mean(4), [1, 2, 4]).mean == Fraction(7, 3)
    assert aggregate(BoolOr(8), [0, 0, 0]).value is False
    assert BoolOr(8).decode(F, [0, 3, 0, 0, 0, 0, 0, 0], 3).value is True
    assert aggregate(BoolAnd(8), [1, 1]).value is True
    assert aggregate(MinMaxExact(4), [1, 3]).value == 3
    assert aggregate(MinMaxExact(4, is_max=False), [1, 3]).value == 1
    assert aggregate(FreqCount(3), [0, 1, 1]).counts == (1, 2, 0)
    assert aggregate(MostPopular(2), ["10", "10", "01"]).bits == "10"
    lr = aggregate(LinReg(1, 3), [(0, 1), (1, 3), (2, 5)])
    assert lr.coeffs == (1, 2)
    assert aggregate(RSquared((1, 2), 4), [(0, 1), (1, 3), (3, 7)]).r2 == 1


def test_countmin_single_item():
    k = CountMin(0.1, 0.05, seed=3)
    res = aggregate(k, [42] * 30 + list(range(100, 170)))
    # never an underestimate; the upper bound holds with probability 1 - delta
    assert res.estimate(42) >= 30
    assert sum(res.table[0]) == 100


def test_countmin_error_contract():
    r = Rng(4)
    k = CountMin(0.1, 0.05, seed=9)
    trials, good = 300, 0
    for t in range(trials):
        inputs = [r.randbelow(1000) for _ in range(99)] + [5000]
        res = aggregate(k, inputs)
        est = res.estimate(5000)
        assert est >= 1
        good += est <= 1 + k.eps * len(inputs)
    q = 1 - k.delta
    assert good / trials >= q - 3 * math.sqrt(q * (1 - q) / trials)


def test_countmin_string_items():
    k = CountMin(0.2, 0.1)
    res = aggregate(k, ["apple", "apple", "pear"])
    assert res.estimate("apple") >= 2


def test_most_popular_no_majority():
    with pytest.raises(NoMajority):
        aggregate(MostPopular(2), ["10", "01"])


def test_minmax_approx():
    k = MinMaxApprox(256, 2)
    assert k.bin_of(0) == 0 and k.bin_of(1) == 0 and k.bin_of(2) == 1 and k.bin_of(255) == 7
    res = aggregate(k, [3, 70, 12])
    assert (res.value, res.upper) == (64, 128)
    assert res.value <= 70 < 2 * res.value
    low = aggregate(MinMaxApprox(256, 2, is_max=False), [3, 70, 12])
    assert low.value <= 3 < 2 * max(low.value, 1)
    assert aggregate(k, []).empty
    assert aggregate(k, []).summary() == "value=empty"


def test_decode_errors():
    with pytest.raises(OverflowRisk):
        Sum(4).decode(F101, [0], 7)  # 7 * 15 >= 101
    Sum(4).decode(F101, [0], 6)
    with pytest.raises(LengthMismatch):
        Sum(4).decode(F, [0, 0], 1)
    with pytest.raises(DecodeError):
        Variance(2).decode(F, [0, 0], 0)
    with pytest.raises(DecodeError):
        aggregate(LinReg(1, 3), [(1, 2), (1, 3)])  # all x equal: singular
    with pytest.raises(OverflowRisk):
        RSquared((0, 1), 3, range_check=False).per_client_bound()


@pytest.mark.parametrize("kind,trials", [(k, 1000) for k in SMALL_KINDS]
                         + [(LinReg(2, 4), 200), (LinReg(4, 3, signed=True), 200)],
                         ids=lambda v: kind_id(v) if not isinstance(v, int) else str(v))
def test_matches_plaintext_oracle(kind, trials):
    r = Rng(5)
    for _ in range(trials):
        n = 1 + r.randbelow(100)
        inputs = sample_inputs(kind, n, r)
        try:
            want = plaintext_oracle(kind, inputs)
        except DecodeError:
            with pytest.raises(DecodeError):
                aggregate(kind, inputs, rng=r)
            continue
        got = aggregate(kind, inputs, rng=r)
        if isinstance(kind, BoolOr):
            # wrong only when every true client drew the zero string (2^-8 each)
            if got != want:
                assert want.value != isinstance(kind, BoolAnd)
            continue
        assert agrees(kind, got, want), (inputs, got, want)


@pytest.mark.parametrize("kind", [BoolOr(8), BoolAnd(8)], ids=kind_id)
def test_boolean_error_rate(kind):
    r = Rng(6)
    trials, errors = 20_000, 0
    flip = isinstance(kind, BoolAnd)
    for _ in range(trials):
        # a single client whose encoding is the random one
        got = aggregate(kind, [not flip], rng=r)
        errors += got.value != (not flip)
    q = 2 ** -8
    assert errors / trials <= q + 3 * math.sqrt(q * (1 - q) / trials)


# -- fixed-point regression


def _well_conditioned(r, d, n, frac):
    pts = []
    for _ in range(n):
        xs = [Fraction(r.randbelow(2000) - 1000, 1000) for _ in range(d)]
        y = Fraction(1, 2) + sum(Fraction(j + 1, 3) * x for j, x in enumerate(xs))
        y += Fraction(r.randbelow(200) - 100, 1000)
        pts.append(tuple(xs) + (y,))
    return pts


@pytest.mark.parametrize("d", [1, 2, 4])
def test_fixed_point_regression_error(d):
    r = Rng(7)
    frac = 8
    k = LinReg(d, 16, frac_bits=frac, signed=True)
    for _ in range(10):
        pts = _well_conditioned(r, d, 60, frac)
        got = aggregate(k, pts)
        want = plaintext_oracle(k, pts)
        for a, b in zip(got.coeffs, want.coeffs):
            assert abs(a - b) <= Fraction(2, 1 << frac)


def test_regression_exact_on_collinear_integers():
    k = LinReg(2, 6)
    pts = [(x1, x2, 3 + 2 * x1 + x2) for x1, x2 in [(0, 0), (1, 2), (3, 1), (4, 4), (2, 5)]]
    assert aggregate(k, pts).coeffs == (3, 2, 1)


def test_signed_regression():
    k = LinReg(1, 5, signed=True)
    pts = [(-3, 7), (0, 1), (2, -3), (5, -9)]
    assert aggregate(k, pts).coeffs == (1, -2)


# -- config strings


@pytest.mark.parametrize("kind", SMALL_KINDS + [LinReg(2, 8, 4, True), RSquared((1, -2, 3), 5, False)],
                         ids=kind_id)
def test_config_string_round_trip(kind):
    back = parse_kind(kind.config_string())
    assert back == kind and type(back) is type(kind)


@pytest.mark.parametrize("text", ["nope:b=1", "sum", "sum:b=x", "sum:b=4,zz=1", "sum:b", "countmin:eps=2,delta=0.1"])
def test_bad_config_strings(text):
    with pytest.raises(ConfigurationError):
        parse_kind(text)


def test_all_kinds_registered():
    assert len(KINDS) == 12


def test_parse_values():
    assert Sum(4).parse_value("0x0f") == 15
    assert BoolOr(4).parse_value("true") is True
    assert LinReg(2, 4).parse_value("1, 2,3") == (1, 2, 3)
    assert LinReg(1, 4, frac_bits=2).parse_value("0.5,1/4") == (Fraction(1, 2), Fraction(1, 4))
    assert CountMin(0.2, 0.1).parse_value("apple") == "apple"
    assert MostPopular(3).parse_value(" 101 ") == "101"


@given(st.lists(st.integers(0, 15), min_size=1, max_size=50))
def test_sum_property(xs):
    assert aggregate(Sum(4), xs).total == sum(xs)
