"""Prime-field arithmetic and the polynomial operations used by the proofs.

Field elements are plain Python ints kept in canonical form ``0 <= v < p``;
vectors are lists of such ints. A :class:`Field` carries the modulus and
its wire width and provides the scalar operations, while the vector and
polynomial loops go through :mod:`privagg.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from privagg import kernels
from privagg.errors import (
    ConfigurationError,
    DuplicateDomainPoint,
    LengthMismatch,
    ZeroInverse,
)

# Circuits in a production field must satisfy |F| >= PRODUCTION_MARGIN * (2M + 2).
PRODUCTION_MARGIN = 1 << 30


def _two_adicity(p: int) -> int:
    v, q = 0, p - 1
    while q % 2 == 0:
        q //= 2
        v += 1
    return v


class Field:
    """The prime field F_p.

    ``production`` marks profiles that must keep the soundness error small;
    small test fields leave it off so failure probabilities are observable.
    """

    __slots__ = ("modulus", "two_adicity", "width", "production", "name")

    def __init__(self, modulus: int, *, production: bool = False,
                 name: str | None = None, check_prime: bool = True):
        if modulus <= 2:
            raise ConfigurationError(f"modulus must be an odd prime, got {modulus}")
        if check_prime:
            from sympy import isprime

            if not isprime(modulus):
                raise ConfigurationError(f"modulus {modulus} is not prime")
        self.modulus = modulus
        self.two_adicity = _two_adicity(modulus)
        self.width = (modulus.bit_length() + 7) // 8
        self.production = production
        self.name = name or f"F_{modulus}"

    def __repr__(self):
        return f"Field({self.modulus}, name={self.name!r})"

    def __eq__(self, other):
        return isinstance(other, Field) and other.modulus == self.modulus

    def __hash__(self):
        return hash(("Field", self.modulus))

    # scalar arithmetic

    def elem(self, x: int) -> int:
        return x % self.modulus

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.modulus

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.modulus

    def mul(self, a: int, b: int) -> int:
        return a * b % self.modulus

    def neg(self, a: int) -> int:
        return -a % self.modulus

    def inv(self, a: int) -> int:
        a %= self.modulus
        if a == 0:
            raise ZeroInverse("0 has no inverse")
        return pow(a, -1, self.modulus)

    def div(self, a: int, b: int) -> int:
        return a * self.inv(b) % self.modulus

    def pow(self, a: int, e: int) -> int:
        return pow(a, e, self.modulus)

    # vectors

    def vec_add(self, a: Sequence[int], b: Sequence[int]) -> list[int]:
        if len(a) != len(b):
            raise LengthMismatch(f"{len(a)} != {len(b)}")
        return kernels.vec_add(a, b, self.modulus)

    def vec_sub(self, a: Sequence[int], b: Sequence[int]) -> list[int]:
        if len(a) != len(b):
            raise LengthMismatch(f"{len(a)} != {len(b)}")
        return kernels.vec_sub(a, b, self.modulus)

    def dot(self, a: Sequence[int], b: Sequence[int]) -> int:
        if len(a) != len(b):
            raise LengthMismatch(f"{len(a)} != {len(b)}")
        return kernels.dot(a, b, self.modulus)

    # wire encoding: fixed-width little-endian

    def to_bytes(self, a: int) -> bytes:
        return a.to_bytes(self.width, "little")

    def from_bytes(self, data: bytes) -> int:
        v = int.from_bytes(data, "little")
        if v >= self.modulus:
            raise ValueError("non-canonical field element")
        return v

    def vec_to_bytes(self, xs: Sequence[int]) -> bytes:
        w = self.width
        return b"".join(x.to_bytes(w, "little") for x in xs)

    def vec_from_bytes(self, data: bytes) -> list[int]:
        w = self.width
        if len(data) % w:
            raise ValueError("byte length is not a multiple of the element width")
        out = [int.from_bytes(data[i:i + w], "little") for i in range(0, len(data), w)]
        if any(v >= self.modulus for v in out):
            raise ValueError("non-canonical field element")
        return out

    @property
    def sample_bound(self) -> int:
        """Largest multiple of p that fits in ``width`` bytes."""
        return (256 ** self.width // self.modulus) * self.modulus

    def check_circuit_size(self, m: int) -> None:
        """Reject multiplication-gate counts this field cannot support."""
        if 2 * m + 1 > self.modulus - 1:
            raise ConfigurationError(
                f"{self.name} too small for M={m}: need 2M+1 distinct points "
                f"plus room for r outside {{0..M}}")
        if self.production and self.modulus < PRODUCTION_MARGIN * (2 * m + 2):
            raise ConfigurationError(
                f"{self.name}: |F| < 2^30 * (2M+2) for M={m}")


F101 = Field(101, name="F101", check_prime=False)
F31 = Field(15 * 2**27 + 1, name="F31", check_prime=False)
GOLDILOCKS = Field(2**64 - 2**32 + 1, production=True, name="goldilocks",
                   check_prime=False)

NAMED_FIELDS = {f.name: f for f in (F101, F31, GOLDILOCKS)}


def field_by_name_or_modulus(text: str) -> Field:
    text = text.strip()
    for name, f in NAMED_FIELDS.items():
        if name.lower() == text.lower():
            return f
    try:
        p = int(text, 0)
    except ValueError:
        raise ConfigurationError(f"unknown field {text!r}") from None
    for f in NAMED_FIELDS.values():
        if f.modulus == p:
            return f
    return Field(p, production=p.bit_length() >= 64)


def inverse(field: Field, a: int) -> int:
    return field.inv(a)


# Lagrange rows


@dataclass(frozen=True)
class LagrangeRow:
    domain: tuple[int, ...]
    target: int
    coeffs: tuple[int, ...]


def lagrange_coefficients(field: Field, domain: Sequence[int], r: int) -> LagrangeRow:
    """Constants c_t with P(r) = sum_t c_t P(domain[t]) for deg P < len(domain)."""
    p = field.modulus
    dom = tuple(d % p for d in domain)
    r %= p
    if len(set(dom)) != len(dom):
        raise DuplicateDomainPoint("interpolation domain has repeated points")
    if dom == tuple(range(len(dom))):
        return LagrangeRow(dom, r, _consecutive_row(p, len(dom), r))
    if r in dom:
        return LagrangeRow(dom, r, tuple(int(d == r) for d in dom))
    coeffs = []
    for i, xi in enumerate(dom):
        num, den = 1, 1
        for j, xj in enumerate(dom):
            if i != j:
                num = num * (r - xj) % p
                den = den * (xi - xj) % p
        coeffs.append(num * pow(den, -1, p) % p)
    return LagrangeRow(dom, r, tuple(coeffs))


@lru_cache(maxsize=256)
def _consecutive_row(p: int, n: int, r: int) -> tuple[int, ...]:
    # domain {0..n-1}; barycentric weights w_j = (-1)^(n-1-j) / (j! (n-1-j)!)
    if r < n:
        return tuple(int(j == r) for j in range(n))
    w = _bary_weights(p, n - 1)
    ell = 1
    for j in range(n):
        ell = ell * (r - j) % p
    return tuple(ell * wj % p * pow(r - j, -1, p) % p for j, wj in enumerate(w))


@lru_cache(maxsize=64)
def _bary_weights(p: int, m: int) -> tuple[int, ...]:
    fact = [1] * (m + 1)
    for i in range(1, m + 1):
        fact[i] = fact[i - 1] * i % p
    out = []
    for j in range(m + 1):
        w = pow(fact[j] * fact[m - j] % p, -1, p)
        out.append(w if (m - j) % 2 == 0 else (-w) % p)
    return tuple(out)


def interpolate_eval(field: Field, row: LagrangeRow, values: Sequence[int]) -> int:
    if len(values) != len(row.coeffs):
        raise LengthMismatch(f"expected {len(row.coeffs)} values, got {len(values)}")
    return kernels.dot(row.coeffs, values, field.modulus)


@lru_cache(maxsize=64)
def _extension_tables(p: int, m: int):
    w = list(_bary_weights(p, m))
    inv = [0] + [pow(d, -1, p) for d in range(1, 2 * m + 1)]
    ells = []
    ell = 1
    for j in range(m + 1):
        ell = ell * (m + 1 - j) % p
    for x in range(m + 1, 2 * m + 1):
        ells.append(ell)
        # ell(x+1) = ell(x) * (x+1) / (x-m)
        ell = ell * (x + 1) % p * inv[x - m] % p
    return w, inv, ells


def extend_consecutive(field: Field, ys: Sequence[int]) -> list[int]:
    """Given P(0..m), return P(m+1..2m) for the unique P with deg P <= m."""
    m = len(ys) - 1
    if m == 0:
        return []
    p = field.modulus
    w, inv, ells = _extension_tables(p, m)
    z = [wj * y % p for wj, y in zip(w, ys)]
    return kernels.extend_consecutive(z, inv, ells, p)


# Polynomials


@dataclass(frozen=True)
class Polynomial:
    """Coefficients lowest degree first; trailing zeros allowed."""

    field: Field
    coeffs: tuple[int, ...]

    def __init__(self, field: Field, coeffs: Sequence[int]):
        p = field.modulus
        object.__setattr__(self, "field", field)
        object.__setattr__(self, "coeffs", tuple(c % p for c in coeffs))

    def degree(self) -> int:
        """Index of the last nonzero coefficient; -1 for the zero polynomial."""
        for i in range(len(self.coeffs) - 1, -1, -1):
            if self.coeffs[i]:
                return i
        return -1

    def is_zero(self) -> bool:
        return self.degree() < 0

    def __call__(self, x: int) -> int:
        return kernels.poly_eval(self.coeffs, x, self.field.modulus)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return poly_mul(self, other)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        n = max(len(self.coeffs), len(other.coeffs))
        a = list(self.coeffs) + [0] * (n - len(self.coeffs))
        b = list(other.coeffs) + [0] * (n - len(other.coeffs))
        return Polynomial(self.field, kernels.vec_add(a, b, self.field.modulus))

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        n = max(len(self.coeffs), len(other.coeffs))
        a = list(self.coeffs) + [0] * (n - len(self.coeffs))
        b = list(other.coeffs) + [0] * (n - len(other.coeffs))
        return Polynomial(self.field, kernels.vec_sub(a, b, self.field.modulus))

    def same_as(self, other: "Polynomial") -> bool:
        d = self.degree()
        return d == other.degree() and self.coeffs[:d + 1] == other.coeffs[:d + 1]


NTT_THRESHOLD = 64


def poly_mul(a: Polynomial, b: Polynomial, *, fft: bool | None = None) -> Polynomial:
    """Product of two polynomials.

    ``fft=None`` picks the NTT path for large inputs when the field has
    enough two-adicity; the result is identical to schoolbook either way.
    """
    field = a.field
    la, lb = len(a.coeffs), len(b.coeffs)
    if la == 0 or lb == 0:
        return Polynomial(field, [])
    n = la + lb - 1
    size = 1 << (n - 1).bit_length()
    ntt_ok = size.bit_length() - 1 <= field.two_adicity
    if fft is None:
        fft = ntt_ok and min(la, lb) > NTT_THRESHOLD
    if fft:
        if not ntt_ok:
            raise ConfigurationError(f"{field.name} lacks a 2^{size.bit_length() - 1} root of unity")
        return Polynomial(field, _ntt_mul(field, list(a.coeffs), list(b.coeffs))[:n])
    return Polynomial(field, kernels.poly_mul(a.coeffs, b.coeffs, field.modulus))


@lru_cache(maxsize=16)
def _generator(p: int) -> int:
    from sympy.ntheory import primitive_root

    return primitive_root(p)


def _ntt(vals: list[int], root: int, p: int) -> list[int]:
    n = len(vals)
    a = list(vals)
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            a[i], a[j] = a[j], a[i]
    length = 2
    while length <= n:
        w_len = pow(root, n // length, p)
        half = length // 2
        ws = [1] * half
        for k in range(1, half):
            ws[k] = ws[k - 1] * w_len % p
        for start in range(0, n, length):
            for k in range(half):
                u = a[start + k]
                v = a[start + k + half] * ws[k] % p
                a[start + k] = (u + v) % p
                a[start + k + half] = (u - v) % p
        length <<= 1
    return a


def _ntt_mul(field: Field, a: list[int], b: list[int]) -> list[int]:
    p = field.modulus
    n = len(a) + len(b) - 1
    size = 1 << (n - 1).bit_length()
    root = pow(_generator(p), (p - 1) // size, p)
    fa = _ntt(a + [0] * (size - len(a)), root, p)
    fb = _ntt(b + [0] * (size - len(b)), root, p)
    prod = [x * y % p for x, y in zip(fa, fb)]
    out = _ntt(prod, pow(root, -1, p), p)
    n_inv = pow(size, -1, p)
    return [x * n_inv % p for x in out]


def interpolate(field: Field, domain: Sequence[int], values: Sequence[int]) -> Polynomial:
    """Minimal-degree polynomial through ``(domain[i], values[i])``."""
    p = field.modulus
    if len(domain) != len(values):
        raise LengthMismatch(f"{len(domain)} points vs {len(values)} values")
    dom = [d % p for d in domain]
    if len(set(dom)) != len(dom):
        raise DuplicateDomainPoint("interpolation domain has repeated points")
    n = len(dom)
    if n == 0:
        return Polynomial(field, [])
    # master = prod (t - x_j), lowest degree first
    master = [1]
    for xj in dom:
        nxt = [0] * (len(master) + 1)
        for i, c in enumerate(master):
            nxt[i] = (nxt[i] - xj * c) % p
            nxt[i + 1] = (nxt[i + 1] + c) % p
        master = nxt
    out = [0] * n
    for i, xi in enumerate(dom):
        # synthetic division of master by (t - x_i)
        q = [0] * n
        carry = 0
        for k in range(n, 0, -1):
            carry = (master[k] + carry * xi) % p if k < n else master[k]
            q[k - 1] = carry
        den = 1
        for j, xj in enumerate(dom):
            if j != i:
                den = den * (xi - xj) % p
        scale = values[i] * pow(den, -1, p) % p
        if scale:
            for k in range(n):
                out[k] = (out[k] + scale * q[k]) % p
    return Polynomial(field, out)
