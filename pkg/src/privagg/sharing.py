"""Additive secret sharing, PRG-compressed shares, and the seedable RNG.

The PRG is AES-128 in counter mode with an all-zero nonce; its output is
cut into ``width``-byte little-endian chunks and rejection-sampled below
the largest multiple of p that fits, then reduced mod p.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from privagg import kernels
from privagg.errors import LengthMismatch, MalformedShare, MissingShare, TooFewServers
from privagg.field import Field

KEY_SIZE = 16
_ZERO_NONCE = bytes(16)
_CHUNK = 1 << 14


def _keystream(key: bytes):
    return Cipher(algorithms.AES(key), modes.CTR(_ZERO_NONCE)).encryptor()


def prg_expand(field: Field, key: bytes, length: int) -> list[int]:
    """Deterministically expand a 16-byte key into ``length`` field elements."""
    if len(key) != KEY_SIZE:
        raise ValueError("PRG key must be 16 bytes")
    if length == 0:
        return []
    enc = _keystream(key)
    w, p, bound = field.width, field.modulus, field.sample_bound
    # a little slack for rejections; refill from the same stream if short
    need = length * w + (length * w >> 2) + 16
    out, used = kernels.bytes_to_field(enc.update(bytes(need)), w, p, bound, length)
    while len(out) < length:
        more, _ = kernels.bytes_to_field(enc.update(bytes(_CHUNK)), w, p, bound,
                                         length - len(out))
        out.extend(more)
    return out


class Rng:
    """Seedable CSPRNG (AES-CTR keystream).

    With ``seed=None`` the key comes from ``os.urandom``; otherwise it is
    derived from the seed so runs are reproducible.
    """

    def __init__(self, seed: int | bytes | str | None = None):
        if seed is None:
            key = os.urandom(KEY_SIZE)
        else:
            if isinstance(seed, int):
                seed = seed.to_bytes(16, "big", signed=True)
            elif isinstance(seed, str):
                seed = seed.encode()
            key = hashlib.sha256(b"privagg-rng" + seed).digest()[:KEY_SIZE]
        self._enc = _keystream(key)
        self._buf = b""
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._buf):
            rest = self._buf[self._pos:]
            self._buf = rest + self._enc.update(bytes(max(_CHUNK, n)))
            self._pos = 0
        out = self._buf[self._pos:self._pos + n]
        self._pos += n
        return out

    def random_bytes(self, n: int) -> bytes:
        return self._take(n)

    def key(self) -> bytes:
        return self._take(KEY_SIZE)

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        nbytes = ((n - 1).bit_length() + 7) // 8
        bound = (256 ** nbytes // n) * n
        while True:
            v = int.from_bytes(self._take(nbytes), "little")
            if v < bound:
                return v % n

    def bits(self, n: int) -> list[int]:
        raw = self._take((n + 7) // 8)
        return [(raw[i >> 3] >> (i & 7)) & 1 for i in range(n)]

    def element(self, field: Field) -> int:
        return self.elements(field, 1)[0]

    def elements(self, field: Field, n: int) -> list[int]:
        w, p, bound = field.width, field.modulus, field.sample_bound
        out: list[int] = []
        while len(out) < n:
            want = n - len(out)
            raw_len = want * w + (want * w >> 3) + w
            if self._pos + raw_len > len(self._buf):
                rest = self._buf[self._pos:]
                self._buf = rest + self._enc.update(bytes(max(_CHUNK, raw_len)))
                self._pos = 0
            got, used = kernels.bytes_to_field(
                memoryview(self._buf)[self._pos:self._pos + raw_len], w, p, bound, want)
            self._pos += used
            out.extend(got)
        return out

    def nonzero_element(self, field: Field) -> int:
        while True:
            v = self.element(field)
            if v:
                return v


@dataclass(frozen=True)
class ShareVector:
    """One server's additive share of a vector.

    Exactly one of ``values`` (explicit) or ``key`` (PRG seed) is set.
    """

    server_index: int
    length: int
    values: tuple[int, ...] | None = None
    key: bytes | None = None

    @property
    def seeded(self) -> bool:
        return self.key is not None

    def expand(self, field: Field) -> list[int]:
        if self.key is not None:
            return prg_expand(field, self.key, self.length)
        return list(self.values)

    def to_bytes(self, field: Field) -> bytes:
        if self.key is not None:
            return b"\x01" + self.key + struct.pack(">I", self.length)
        return b"\x00" + struct.pack(">I", self.length) + field.vec_to_bytes(self.values)

    @classmethod
    def from_bytes(cls, field: Field, data: bytes, offset: int = 0,
                   server_index: int = 0) -> tuple["ShareVector", int]:
        """Parse one share starting at ``offset``; return it and the end offset."""
        if offset >= len(data):
            raise MalformedShare("missing share tag")
        tag = data[offset]
        if tag == 1:
            end = offset + 1 + KEY_SIZE + 4
            if end > len(data):
                raise MalformedShare("truncated seeded share")
            key = bytes(data[offset + 1:offset + 1 + KEY_SIZE])
            (length,) = struct.unpack(">I", data[end - 4:end])
            return cls(server_index, length, key=key), end
        if tag == 0:
            if offset + 5 > len(data):
                raise MalformedShare("truncated explicit share header")
            (length,) = struct.unpack(">I", data[offset + 1:offset + 5])
            end = offset + 5 + length * field.width
            if end > len(data):
                raise MalformedShare("truncated explicit share body")
            try:
                vals = field.vec_from_bytes(bytes(data[offset + 5:end]))
            except ValueError as exc:
                raise MalformedShare(str(exc)) from exc
            return cls(server_index, length, values=tuple(vals)), end
        raise MalformedShare(f"unknown share tag {tag}")


def split(field: Field, x: Sequence[int], s: int, rng: Rng) -> list[ShareVector]:
    if s < 2:
        raise TooFewServers(f"need at least 2 servers, got {s}")
    n = len(x)
    shares = []
    acc = [0] * n
    for i in range(s - 1):
        vals = rng.elements(field, n)
        acc = kernels.vec_add(acc, vals, field.modulus)
        shares.append(ShareVector(i, n, values=tuple(vals)))
    last = kernels.vec_sub(list(x), acc, field.modulus)
    shares.append(ShareVector(s - 1, n, values=tuple(last)))
    return shares


def split_prg(field: Field, x: Sequence[int], s: int, rng: Rng) -> list[ShareVector]:
    """Shares 0..s-2 are PRG keys; the last share is explicit."""
    if s < 2:
        raise TooFewServers(f"need at least 2 servers, got {s}")
    n = len(x)
    p = field.modulus
    shares = []
    last = list(x)
    for i in range(s - 1):
        key = rng.key()
        last = kernels.vec_sub(last, prg_expand(field, key, n), p)
        shares.append(ShareVector(i, n, key=key))
    shares.append(ShareVector(s - 1, n, values=tuple(last)))
    return shares


def split_scalars(field: Field, xs: Sequence[int], s: int, rng: Rng) -> list[list[int]]:
    """Explicit additive sharing of a short vector; returns per-server lists."""
    if s < 2:
        raise TooFewServers(f"need at least 2 servers, got {s}")
    p = field.modulus
    out = [rng.elements(field, len(xs)) for _ in range(s - 1)]
    last = list(xs)
    for sh in out:
        last = kernels.vec_sub(last, sh, p)
    out.append(last)
    return out


def combine(field: Field, shares: Sequence[ShareVector | Sequence[int]]) -> list[int]:
    if not shares:
        raise MissingShare("no shares to combine")
    vecs = [sh.expand(field) if isinstance(sh, ShareVector) else list(sh) for sh in shares]
    n = len(vecs[0])
    acc = [0] * n
    for v in vecs:
        if len(v) != n:
            raise LengthMismatch("shares have different lengths")
        acc = kernels.vec_add(acc, v, field.modulus)
    return acc


@dataclass(frozen=True)
class BeaverTriple:
    a: int
    b: int
    c: int

    def is_valid(self, field: Field) -> bool:
        return field.mul(self.a, self.b) == self.c % field.modulus


@dataclass(frozen=True)
class BeaverTripleShare:
    a: int
    b: int
    c: int


def random_triple(field: Field, rng: Rng) -> BeaverTriple:
    a, b = rng.elements(field, 2)
    return BeaverTriple(a, b, field.mul(a, b))


def split_triple(field: Field, t: BeaverTriple, s: int, rng: Rng) -> list[BeaverTripleShare]:
    parts = split_scalars(field, [t.a, t.b, t.c], s, rng)
    return [BeaverTripleShare(*v) for v in parts]
