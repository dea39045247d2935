"""Affine-aggregatable encodings: encode, validity circuit, truncate, decode.

Each kind maps a client value to a vector in F^k whose first k' coordinates,
summed over clients, determine the statistic. The remaining coordinates
only exist so the validity circuit can check the encoding. All sums are
taken as integers in F_p, so every decoder refuses inputs whose sums could
have wrapped around the modulus.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import ClassVar, Sequence

from privagg.circuit import CircuitBuilder, ValidCircuit
from privagg.errors import (
    ConfigurationError,
    DecodeError,
    DomainError,
    LengthMismatch,
    NoMajority,
    OverflowRisk,
)
from privagg.field import Field

MASK64 = (1 << 64) - 1


def _bits(x: int, b: int) -> list[int]:
    return [(x >> i) & 1 for i in range(b)]


def _recompose(builder: CircuitBuilder, value: int, bits: Sequence[int]) -> None:
    """Assert every bit wire is 0/1 and ``value = sum 2^i bits[i]``."""
    for w in bits:
        builder.assert_bit(w)
    terms = [(value, 1)] + [(w, -(1 << i)) for i, w in enumerate(bits)]
    builder.assert_zero(builder.linear(terms))


def _unary_checks(builder: CircuitBuilder, wires: Sequence[int]) -> None:
    """Assert ``wires`` is (1, ..., 1, 0, ..., 0) with a leading 1.

    Each difference w_i - w_{i+1} (with w_k taken as 0) must be a bit; the
    differences then telescope to w_0 = 1, so exactly one of them is 1.
    """
    builder.assert_zero(builder.add_const(wires[0], -1))
    for i, w in enumerate(wires):
        diff = builder.sub(w, wires[i + 1]) if i + 1 < len(wires) else w
        builder.assert_bit(diff)


def _as_int(v) -> int:
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        try:
            return int(v.strip(), 0)
        except ValueError:
            raise DomainError(f"not an integer: {v!r}") from None
    raise DomainError(f"not an integer: {v!r}")


def _check_range(x: int, bound: int, what: str = "value") -> int:
    if not 0 <= x < bound:
        raise DomainError(f"{what} {x} outside [0, {bound})")
    return x


def _fmt(q) -> str:
    if isinstance(q, Fraction) and q.denominator != 1:
        return f"{q.numerator}/{q.denominator}"
    return str(int(q)) if isinstance(q, Fraction) else str(q)


# ---------------------------------------------------------------- results


class AggregateResult:
    def summary(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class SumResult(AggregateResult):
    total: int

    def summary(self):
        return f"sum={self.total}"


@dataclass(frozen=True)
class MeanResult(AggregateResult):
    mean: Fraction
    total: int

    def summary(self):
        return f"mean={_fmt(self.mean)} sum={self.total}"


@dataclass(frozen=True)
class VarianceResult(AggregateResult):
    mean: Fraction
    variance: Fraction

    def summary(self):
        return f"mean={_fmt(self.mean)} variance={_fmt(self.variance)}"


@dataclass(frozen=True)
class BoolResult(AggregateResult):
    value: bool

    def summary(self):
        return f"value={int(self.value)}"


@dataclass(frozen=True)
class MinMaxResult(AggregateResult):
    """``value`` is None when no client contributed; ``upper`` bounds approximate results."""

    value: int | None
    upper: int | None = None

    @property
    def empty(self) -> bool:
        return self.value is None

    def summary(self):
        if self.value is None:
            return "value=empty"
        if self.upper is None:
            return f"value={self.value}"
        return f"value={self.value} upper={self.upper}"


@dataclass(frozen=True)
class CountsResult(AggregateResult):
    counts: tuple[int, ...]

    def summary(self):
        return "counts=" + ",".join(map(str, self.counts))


@dataclass(frozen=True)
class CountMinResult(AggregateResult):
    kind: "CountMin"
    table: tuple[tuple[int, ...], ...]

    def estimate(self, item) -> int:
        return min(self.table[r][self.kind.bucket(r, item)] for r in range(self.kind.rows))

    def summary(self):
        return "table=" + "/".join(",".join(map(str, row)) for row in self.table)


@dataclass(frozen=True)
class PopularResult(AggregateResult):
    bits: str

    def summary(self):
        return f"popular={self.bits}"


@dataclass(frozen=True)
class LinRegResult(AggregateResult):
    coeffs: tuple[Fraction, ...]
    x_mean: tuple[Fraction, ...]
    x_cov: tuple[tuple[Fraction, ...], ...]

    def summary(self):
        return "coeffs=" + ",".join(_fmt(c) for c in self.coeffs)


@dataclass(frozen=True)
class RSquaredResult(AggregateResult):
    r2: Fraction
    y_mean: Fraction
    y_var: Fraction

    def summary(self):
        return f"r2={_fmt(self.r2)} y_mean={_fmt(self.y_mean)} y_var={_fmt(self.y_var)}"


# ---------------------------------------------------------------- kinds


class AfeKind:
    """Base class; concrete kinds are frozen dataclasses."""

    name: ClassVar[str] = ""

    @property
    def k(self) -> int:
        raise NotImplementedError

    @property
    def k_prime(self) -> int:
        return self.k

    def encode(self, field: Field, x, rng=None) -> list[int]:
        raise NotImplementedError

    def _build(self) -> ValidCircuit:
        raise NotImplementedError

    @cached_property
    def circuit(self) -> ValidCircuit:
        return self._build()

    def valid_circuit(self) -> ValidCircuit:
        return self.circuit

    def truncate(self, encoding: Sequence[int]) -> list[int]:
        if len(encoding) != self.k:
            raise LengthMismatch(f"{self.name} encodings have length {self.k}, got {len(encoding)}")
        return list(encoding[:self.k_prime])

    def per_client_bound(self) -> int:
        """Largest value a valid client can add to any truncated coordinate."""
        raise NotImplementedError

    def check_capacity(self, field: Field, n: int) -> None:
        if n * self.per_client_bound() >= field.modulus:
            raise OverflowRisk(
                f"{self.name}: {n} clients could wrap the modulus {field.modulus}")

    def decode(self, field: Field, sigma: Sequence[int], n: int) -> AggregateResult:
        if len(sigma) != self.k_prime:
            raise LengthMismatch(f"{self.name} aggregates have length {self.k_prime}")
        if n < 0:
            raise DecodeError("negative client count")
        self.check_capacity(field, n)
        return self._decode([v % field.modulus for v in sigma], n)

    def _decode(self, sigma: list[int], n: int) -> AggregateResult:
        raise NotImplementedError

    def parse_value(self, text: str):
        return _as_int(text)

    def config_string(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.config_string()


def _params(**kw) -> str:
    return ",".join(f"{k}={v}" for k, v in kw.items())


@dataclass(frozen=True)
class Sum(AfeKind):
    """Sum of b-bit integers: (x, bits of x), truncated to x."""

    b: int
    name: ClassVar[str] = "sum"

    def __post_init__(self):
        if self.b < 1:
            raise ConfigurationError("b must be positive")

    @property
    def k(self):
        return self.b + 1

    @property
    def k_prime(self):
        return 1

    def encode(self, field, x, rng=None):
        x = _check_range(_as_int(x), 1 << self.b)
        return [x] + _bits(x, self.b)

    def _build(self):
        c = CircuitBuilder(self.k, f"sum[b={self.b}]")
        _recompose(c, 0, range(1, self.b + 1))
        return c.build()

    def per_client_bound(self):
        return (1 << self.b) - 1

    def _decode(self, sigma, n):
        return SumResult(sigma[0])

    def config_string(self):
        return f"{self.name}:{_params(b=self.b)}"


@dataclass(frozen=True)
class Mean(Sum):
    name: ClassVar[str] = "mean"

    def _decode(self, sigma, n):
        if n == 0:
            raise DecodeError("mean of zero clients")
        return MeanResult(Fraction(sigma[0], n), sigma[0])


@dataclass(frozen=True)
class Variance(AfeKind):
    """(x, x^2, bits of x), truncated to (x, x^2)."""

    b: int
    name: ClassVar[str] = "variance"

    def __post_init__(self):
        if self.b < 1:
            raise ConfigurationError("b must be positive")

    @property
    def k(self):
        return self.b + 2

    @property
    def k_prime(self):
        return 2

    def encode(self, field, x, rng=None):
        x = _check_range(_as_int(x), 1 << self.b)
        return [x, x * x] + _bits(x, self.b)

    def _build(self):
        c = CircuitBuilder(self.k, f"variance[b={self.b}]")
        _recompose(c, 0, range(2, self.b + 2))
        c.assert_product(0, 0, 1)
        return c.build()

    def per_client_bound(self):
        return ((1 << self.b) - 1) ** 2

    def _decode(self, sigma, n):
        if n == 0:
            raise DecodeError("variance of zero clients")
        mean = Fraction(sigma[0], n)
        return VarianceResult(mean, Fraction(sigma[1], n) - mean * mean)

    def config_string(self):
        return f"{self.name}:{_params(b=self.b)}"


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if isinstance(text, int):
        if text not in (0, 1):
            raise DomainError(f"not a boolean: {text}")
        return bool(text)
    t = str(text).strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise DomainError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class BoolOr(AfeKind):
    """True encodes as lam random bits, False as zeros; any nonzero sum means True.

    Every vector is accepted; the result is wrong with probability at most
    2^-lam (all true clients drew the zero string).
    """

    lam: int
    name: ClassVar[str] = "or"
    _true_encodes_random: ClassVar[bool] = True

    def __post_init__(self):
        if self.lam < 1:
            raise ConfigurationError("lam must be positive")

    @property
    def k(self):
        return self.lam

    def encode(self, field, x, rng=None):
        x = _parse_bool(x)
        if x == self._true_encodes_random:
            if rng is None:
                raise ConfigurationError(f"{self.name} encoding needs an rng")
            return rng.bits(self.lam)
        return [0] * self.lam

    def _build(self):
        return CircuitBuilder(self.k, f"{self.name}[lam={self.lam}]").build()

    def per_client_bound(self):
        return 1

    def _decode(self, sigma, n):
        return BoolResult(any(sigma))

    def parse_value(self, text):
        return _parse_bool(text)

    def config_string(self):
        return f"{self.name}:{_params(lam=self.lam)}"


@dataclass(frozen=True)
class BoolAnd(BoolOr):
    name: ClassVar[str] = "and"
    _true_encodes_random: ClassVar[bool] = False

    def _decode(self, sigma, n):
        return BoolResult(not any(sigma))


class _Unary(AfeKind):
    """Unary encoding over ``slots`` buckets: (1, [j >= 1], ..., [j >= slots-1])."""

    slots: int

    @property
    def k(self):
        return self.slots

    def _bucket(self, x: int) -> int:
        raise NotImplementedError

    def _encode_bucket(self, j: int) -> list[int]:
        if not self.is_max:
            j = self.slots - 1 - j
        return [1 if i <= j else 0 for i in range(self.slots)]

    def _build(self):
        c = CircuitBuilder(self.k, self.config_string())
        _unary_checks(c, list(range(self.k)))
        return c.build()

    def per_client_bound(self):
        return 1

    def _top_bucket(self, sigma) -> int | None:
        if sigma[0] == 0:
            return None
        top = max(i for i, v in enumerate(sigma) if v)
        return top if self.is_max else self.slots - 1 - top


@dataclass(frozen=True)
class MinMaxExact(_Unary):
    """Exact max (or min) of integers in [0, B).

    The aggregate holds, for every threshold, how many clients reach it, so
    the decoder learns those counts in addition to the extremum.
    """

    B: int
    is_max: bool = True
    name: ClassVar[str] = "minmax"

    def __post_init__(self):
        if self.B < 2:
            raise ConfigurationError("B must be at least 2")

    @property
    def slots(self):
        return self.B

    def encode(self, field, x, rng=None):
        return self._encode_bucket(_check_range(_as_int(x), self.B))

    def _decode(self, sigma, n):
        return MinMaxResult(self._top_bucket(sigma))

    def config_string(self):
        return f"{self.name}:{_params(B=self.B, max=int(self.is_max))}"


@dataclass(frozen=True)
class MinMaxApprox(_Unary):
    """c-approximate max (or min) over geometric bins [0, c), [c, c^2), ...

    The result ``value`` is the lower end of the extremal bin (0 for the
    first bin) and ``upper`` its exclusive upper end, so
    value <= true extremum < c * max(value, 1).
    """

    B: int
    c: int = 2
    is_max: bool = True
    name: ClassVar[str] = "approx-minmax"

    def __post_init__(self):
        if self.B < 2 or self.c < 2:
            raise ConfigurationError("need B >= 2 and c >= 2")

    def bin_of(self, x: int) -> int:
        j, edge = 0, self.c
        while x >= edge:
            j += 1
            edge *= self.c
        return j

    def bin_bounds(self, j: int) -> tuple[int, int]:
        return (0 if j == 0 else self.c ** j), self.c ** (j + 1)

    @property
    def slots(self):
        return self.bin_of(self.B - 1) + 1

    def encode(self, field, x, rng=None):
        return self._encode_bucket(self.bin_of(_check_range(_as_int(x), self.B)))

    def _decode(self, sigma, n):
        j = self._top_bucket(sigma)
        if j is None:
            return MinMaxResult(None)
        lo, hi = self.bin_bounds(j)
        return MinMaxResult(lo, min(hi, self.B))

    def config_string(self):
        return f"{self.name}:{_params(B=self.B, c=self.c, max=int(self.is_max))}"


@dataclass(frozen=True)
class FreqCount(AfeKind):
    """One-hot encoding of a value in [0, B); the aggregate is the histogram."""

    B: int
    name: ClassVar[str] = "freq"

    def __post_init__(self):
        if self.B < 1:
            raise ConfigurationError("B must be positive")

    @property
    def k(self):
        return self.B

    def encode(self, field, x, rng=None):
        x = _check_range(_as_int(x), self.B)
        return [1 if i == x else 0 for i in range(self.B)]

    def _build(self):
        c = CircuitBuilder(self.k, f"freq[B={self.B}]")
        _one_hot(c, range(self.B))
        return c.build()

    def per_client_bound(self):
        return 1

    def _decode(self, sigma, n):
        return CountsResult(tuple(sigma))

    def config_string(self):
        return f"{self.name}:{_params(B=self.B)}"


def _one_hot(c: CircuitBuilder, wires) -> None:
    wires = list(wires)
    for w in wires:
        c.assert_bit(w)
    c.assert_zero(c.linear([(w, 1) for w in wires], -1))


def item_key(item) -> int:
    """64-bit key of an item: integers are used directly, strings are hashed."""
    if isinstance(item, bool):
        item = int(item)
    if isinstance(item, int):
        return item & MASK64
    if isinstance(item, str):
        item = item.encode()
    if isinstance(item, (bytes, bytearray)):
        return int.from_bytes(hashlib.blake2b(bytes(item), digest_size=8).digest(), "little")
    raise DomainError(f"cannot hash item {item!r}")


@dataclass(frozen=True)
class CountMin(AfeKind):
    """Count-min sketch: ``rows`` one-hot vectors of ``width`` buckets.

    Row hashes are multiply-add-shift functions of a 64-bit item key whose
    multipliers derive from ``seed``, so clients and decoder agree.
    """

    eps: float
    delta: float
    seed: int = 0
    name: ClassVar[str] = "countmin"

    def __post_init__(self):
        if not (0 < self.eps < 1 and 0 < self.delta < 1):
            raise ConfigurationError("eps and delta must lie in (0, 1)")

    @property
    def rows(self) -> int:
        return max(1, math.ceil(math.log(1 / self.delta)))

    @property
    def width(self) -> int:
        return math.ceil(math.e / self.eps)

    @cached_property
    def _hash_params(self) -> tuple[tuple[int, int], ...]:
        out = []
        for r in range(self.rows):
            d = hashlib.sha256(f"countmin:{self.seed}:{r}".encode()).digest()
            a = int.from_bytes(d[:8], "little") | 1
            b = int.from_bytes(d[8:16], "little")
            out.append((a, b))
        return tuple(out)

    def bucket(self, row: int, item) -> int:
        a, b = self._hash_params[row]
        h = (a * item_key(item) + b) & MASK64
        return (h * self.width) >> 64

    @property
    def k(self):
        return self.rows * self.width

    def encode(self, field, x, rng=None):
        out = [0] * self.k
        for r in range(self.rows):
            out[r * self.width + self.bucket(r, x)] = 1
        return out

    def _build(self):
        c = CircuitBuilder(self.k, self.config_string())
        for r in range(self.rows):
            _one_hot(c, range(r * self.width, (r + 1) * self.width))
        return c.build()

    def per_client_bound(self):
        return 1

    def _decode(self, sigma, n):
        w = self.width
        return CountMinResult(self, tuple(tuple(sigma[r * w:(r + 1) * w]) for r in range(self.rows)))

    def parse_value(self, text):
        try:
            return int(text, 0)
        except ValueError:
            return text

    def config_string(self):
        return f"{self.name}:{_params(eps=self.eps, delta=self.delta, seed=self.seed)}"


@dataclass(frozen=True)
class MostPopular(AfeKind):
    """Bitwise majority of b-bit strings; correct when one string has a strict majority."""

    b: int
    name: ClassVar[str] = "popular"

    def __post_init__(self):
        if self.b < 1:
            raise ConfigurationError("b must be positive")

    @property
    def k(self):
        return self.b

    def _to_bits(self, x) -> list[int]:
        if isinstance(x, str):
            s = x.strip()
            if len(s) != self.b or set(s) - {"0", "1"}:
                raise DomainError(f"expected a {self.b}-bit string, got {x!r}")
            return [int(ch) for ch in s]
        if isinstance(x, (list, tuple)):
            if len(x) != self.b or any(v not in (0, 1) for v in x):
                raise DomainError(f"expected {self.b} bits")
            return list(x)
        v = _check_range(_as_int(x), 1 << self.b)
        return [int(ch) for ch in format(v, f"0{self.b}b")]

    def encode(self, field, x, rng=None):
        return self._to_bits(x)

    def _build(self):
        c = CircuitBuilder(self.k, f"popular[b={self.b}]")
        for i in range(self.b):
            c.assert_bit(i)
        return c.build()

    def per_client_bound(self):
        return 1

    def _decode(self, sigma, n):
        out = []
        for count in sigma:
            if 2 * count == n:
                raise NoMajority("bit count exactly n/2")
            out.append("1" if 2 * count > n else "0")
        return PopularResult("".join(out))

    def parse_value(self, text):
        return text.strip()

    def config_string(self):
        return f"{self.name}:{_params(b=self.b)}"


def _solve_exact(a: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination over the rationals with partial pivoting."""
    n = len(a)
    m = [row[:] + [v] for row, v in zip(a, rhs)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[piv][col] == 0:
            raise DecodeError("singular normal equations (degenerate design)")
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            if f:
                for c in range(col, n + 1):
                    m[r][c] -= f * m[col][c]
    out = [Fraction(0)] * n
    for r in range(n - 1, -1, -1):
        acc = m[r][n] - sum(m[r][c] * out[c] for c in range(r + 1, n))
        out[r] = acc / m[r][r]
    return out


@dataclass(frozen=True)
class LinReg(AfeKind):
    """Least-squares fit y ~ c0 + sum c_j x_j from aggregated moments.

    Values are b-bit integers. With ``frac_bits`` f > 0 the inputs are
    reals stored as round(v * 2^f); with ``signed`` they are offset by
    2^(b-1) so negative values fit. The encoding is
    (x_1..x_d, x_j x_k for j <= k, y, x_j y for j, bits of every x_j, bits of y)
    and everything before the bits is aggregated.
    """

    d: int
    b: int
    frac_bits: int = 0
    signed: bool = False
    name: ClassVar[str] = "linreg"

    def __post_init__(self):
        if self.d < 1 or self.b < 1 or self.frac_bits < 0:
            raise ConfigurationError("need d >= 1, b >= 1, frac_bits >= 0")

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(j, k) for j in range(self.d) for k in range(j, self.d)]

    @property
    def k_prime(self):
        d = self.d
        return d + d * (d + 1) // 2 + 1 + d

    @property
    def k(self):
        return self.k_prime + (self.d + 1) * self.b

    @property
    def offset(self) -> int:
        return 1 << (self.b - 1) if self.signed else 0

    def quantize(self, v) -> int:
        """Fixed-point integer code of a real value (before the offset)."""
        if self.frac_bits == 0 and isinstance(v, int):
            return v
        q = Fraction(v) * (1 << self.frac_bits)
        return math.floor(q + Fraction(1, 2))

    def _code(self, v) -> int:
        code = self.quantize(v) + self.offset
        return _check_range(code, 1 << self.b, "encoded value")

    def encode(self, field, x, rng=None):
        *xs, y = self._unpack(x)
        xs = [self._code(v) for v in xs]
        y = self._code(y)
        out = list(xs)
        out += [xs[j] * xs[k] for j, k in self.pairs]
        out.append(y)
        out += [v * y for v in xs]
        for v in xs + [y]:
            out += _bits(v, self.b)
        return out

    def _unpack(self, x):
        if isinstance(x, str):
            x = self.parse_value(x)
        x = tuple(x)
        if len(x) != self.d + 1:
            raise DomainError(f"expected {self.d} features and a target")
        return x

    def _build(self):
        d, b = self.d, self.b
        c = CircuitBuilder(self.k, self.config_string())
        xs = list(range(d))
        prod_base = d
        y = d + len(self.pairs)
        xy_base = y + 1
        bit_base = self.k_prime
        for i, w in enumerate(xs + [y]):
            _recompose(c, w, range(bit_base + i * b, bit_base + (i + 1) * b))
        for t, (j, k) in enumerate(self.pairs):
            c.assert_product(xs[j], xs[k], prod_base + t)
        for j in range(d):
            c.assert_product(xs[j], y, xy_base + j)
        return c.build()

    def per_client_bound(self):
        return ((1 << self.b) - 1) ** 2

    def _decode(self, sigma, n):
        d, o = self.d, self.offset
        if n == 0:
            raise DecodeError("regression over zero clients")
        sx = sigma[:d]
        sxx = dict(zip(self.pairs, sigma[d:d + len(self.pairs)]))
        sy = sigma[d + len(self.pairs)]
        sxy = sigma[d + len(self.pairs) + 1:]
        # remove the offset: sum (u - o)(v - o) = suv - o su - o sv + n o^2
        mx = [v - n * o for v in sx]
        my = sy - n * o

        def xx(j, k):
            j, k = min(j, k), max(j, k)
            return sxx[(j, k)] - o * sx[j] - o * sx[k] + n * o * o

        def xy(j):
            return sxy[j] - o * sx[j] - o * sy + n * o * o

        size = d + 1
        a = [[Fraction(0)] * size for _ in range(size)]
        rhs = [Fraction(0)] * size
        a[0][0] = Fraction(n)
        rhs[0] = Fraction(my)
        for j in range(d):
            a[0][j + 1] = a[j + 1][0] = Fraction(mx[j])
            rhs[j + 1] = Fraction(xy(j))
            for k in range(d):
                a[j + 1][k + 1] = Fraction(xx(j, k))
        coeffs = _solve_exact(a, rhs)
        scale = Fraction(1, 1 << self.frac_bits)
        coeffs[0] *= scale
        mean = [Fraction(v, n) * scale for v in mx]
        cov = tuple(tuple(Fraction(xx(j, k), n) * scale * scale - mean[j] * mean[k]
                          for k in range(d)) for j in range(d))
        return LinRegResult(tuple(coeffs), tuple(mean), cov)

    def parse_value(self, text):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        conv = (lambda s: int(s, 0)) if self.frac_bits == 0 else Fraction
        try:
            return tuple(conv(p) for p in parts)
        except ValueError:
            raise DomainError(f"bad tuple literal {text!r}") from None

    def config_string(self):
        return f"{self.name}:{_params(d=self.d, b=self.b, frac=self.frac_bits, signed=int(self.signed))}"


@dataclass(frozen=True)
class RSquared(AfeKind):
    """Coefficient of determination of a fixed integer linear model.

    The encoding is (y, y^2, (y - yhat)^2, x_1..x_d) followed, when
    ``range_check`` is on, by the bits of every x_j and of y; the first
    three coordinates are aggregated.
    """

    coeffs: tuple[int, ...]
    b: int
    range_check: bool = True
    name: ClassVar[str] = "rsquared"

    def __post_init__(self):
        if len(self.coeffs) < 2 or self.b < 1:
            raise ConfigurationError("need an intercept, at least one slope, and b >= 1")
        object.__setattr__(self, "coeffs", tuple(int(c) for c in self.coeffs))

    @property
    def d(self):
        return len(self.coeffs) - 1

    @property
    def k_prime(self):
        return 3

    @property
    def k(self):
        extra = (self.d + 1) * self.b if self.range_check else 0
        return 3 + self.d + extra

    def predict(self, xs: Sequence[int]) -> int:
        return self.coeffs[0] + sum(c * v for c, v in zip(self.coeffs[1:], xs))

    def encode(self, field, x, rng=None):
        if isinstance(x, str):
            x = self.parse_value(x)
        x = tuple(_as_int(v) for v in x)
        if len(x) != self.d + 1:
            raise DomainError(f"expected {self.d} features and a target")
        *xs, y = x
        for v in x:
            _check_range(v, 1 << self.b)
        res = y - self.predict(xs)
        out = [y, y * y, res * res] + list(xs)
        if self.range_check:
            for v in list(xs) + [y]:
                out += _bits(v, self.b)
        return [v % field.modulus for v in out]

    def _build(self):
        d, b = self.d, self.b
        c = CircuitBuilder(self.k, self.config_string())
        y, yy, rr = 0, 1, 2
        xs = list(range(3, 3 + d))
        c.assert_product(y, y, yy)
        res = c.linear([(y, 1)] + [(w, -cf) for w, cf in zip(xs, self.coeffs[1:])],
                       -self.coeffs[0])
        c.assert_product(res, res, rr)
        if self.range_check:
            base = 3 + d
            for i, w in enumerate(xs + [y]):
                _recompose(c, w, range(base + i * b, base + (i + 1) * b))
        return c.build()

    def per_client_bound(self):
        if not self.range_check:
            raise OverflowRisk("without range checks the aggregate cannot be bounded")
        top = (1 << self.b) - 1
        worst = top + abs(self.coeffs[0]) + sum(abs(c) for c in self.coeffs[1:]) * top
        return max(top * top, worst * worst)

    def check_capacity(self, field, n):
        if not self.range_check:
            return
        super().check_capacity(field, n)

    def _decode(self, sigma, n):
        if n == 0:
            raise DecodeError("R^2 over zero clients")
        sy, syy, srr = sigma
        mean = Fraction(sy, n)
        ss_tot = syy - Fraction(sy * sy, n)
        if ss_tot == 0:
            if srr == 0:
                return RSquaredResult(Fraction(1), mean, Fraction(0))
            raise DecodeError("R^2 undefined: constant target with nonzero residuals")
        return RSquaredResult(1 - srr / ss_tot, mean, ss_tot / n)

    def parse_value(self, text):
        try:
            return tuple(int(p, 0) for p in text.replace(" ", "").split(",") if p)
        except ValueError:
            raise DomainError(f"bad tuple literal {text!r}") from None

    def config_string(self):
        coeffs = ";".join(map(str, self.coeffs))
        return f"{self.name}:{_params(coeffs=coeffs, b=self.b, range=int(self.range_check))}"


# ---------------------------------------------------------------- parsing

KINDS = {cls.name: cls for cls in (Sum, Mean, Variance, BoolOr, BoolAnd, MinMaxExact,
                                   MinMaxApprox, FreqCount, CountMin, MostPopular, LinReg,
                                   RSquared)}


def _flag(v: str) -> bool:
    return v.strip().lower() in ("1", "true", "yes")


def parse_kind(text: str) -> AfeKind:
    """Parse ``name:key=value,...`` (the form produced by ``config_string``)."""
    name, _, rest = text.strip().partition(":")
    name = name.strip().lower()
    if name not in KINDS:
        raise ConfigurationError(f"unknown statistic {name!r}")
    kw = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigurationError(f"bad parameter {item!r}")
        kw[key.strip()] = val.strip()
    try:
        kind = _construct(name, kw)
    except KeyError as exc:
        raise ConfigurationError(f"{name}: missing parameter {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None
    if kw:
        raise ConfigurationError(f"{name}: unknown parameters {sorted(kw)}")
    return kind


def _construct(name: str, kw: dict) -> AfeKind:
    if name in ("sum", "mean", "variance", "popular"):
        return KINDS[name](int(kw.pop("b")))
    if name in ("or", "and"):
        return KINDS[name](int(kw.pop("lam")))
    if name == "minmax":
        return MinMaxExact(int(kw.pop("B")), _flag(kw.pop("max", "1")))
    if name == "approx-minmax":
        return MinMaxApprox(int(kw.pop("B")), int(kw.pop("c", "2")), _flag(kw.pop("max", "1")))
    if name == "freq":
        return FreqCount(int(kw.pop("B")))
    if name == "countmin":
        return CountMin(float(kw.pop("eps")), float(kw.pop("delta")), int(kw.pop("seed", "0")))
    if name == "linreg":
        return LinReg(int(kw.pop("d")), int(kw.pop("b")), int(kw.pop("frac", "0")),
                      _flag(kw.pop("signed", "0")))
    coeffs = tuple(int(c) for c in kw.pop("coeffs").split(";"))
    return RSquared(coeffs, int(kw.pop("b")), _flag(kw.pop("range", "1")))
