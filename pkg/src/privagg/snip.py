"""Secret-shared non-interactive proofs of circuit validity.

The client evaluates the validity circuit, builds randomized polynomials
f and g through the inputs of the multiplication gates and sends shares of
h = f * g in point-value form at 0..2M, plus a Beaver triple. Servers
replay the circuit on their shares, evaluate their shares of f, g and h at
a secret point r with precomputed Lagrange rows, and run one Beaver
multiplication to check r * (f(r) g(r) - h(r)) == 0. The check wires of
the circuit are folded into one random linear combination that must also
be zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

from privagg import kernels
from privagg.circuit import (
    CircuitBuilder,
    ValidCircuit,
    batch_combine,
    derive_wire_shares,
    eval_circuit,
    is_valid,
    mul_io,
)
from privagg.errors import (
    ArityMismatch,
    BadTripleProof,
    ConfigurationError,
    InvalidInput,
    LengthMismatch,
    MissingRound,
    MissingShare,
    RotationExhausted,
)
from privagg.field import (
    Field,
    LagrangeRow,
    extend_consecutive,
    interpolate,
    lagrange_coefficients,
)
from privagg.sharing import (
    BeaverTriple,
    BeaverTripleShare,
    Rng,
    ShareVector,
    random_triple,
    split,
    split_prg,
    split_scalars,
)

DEFAULT_ROTATION_BUDGET = 1024


@dataclass
class Proof:
    """The client's plaintext proof before sharing."""

    f0: int
    g0: int
    h_points: list[int]
    triple: BeaverTriple


@dataclass(frozen=True)
class SnipProofShare:
    f0: int
    g0: int
    h_points: ShareVector
    triple: BeaverTripleShare

    def to_bytes(self, field: Field) -> bytes:
        t = self.triple
        return (field.vec_to_bytes([self.f0, self.g0, t.a, t.b, t.c])
                + self.h_points.to_bytes(field))

    @classmethod
    def from_bytes(cls, field: Field, data: bytes, offset: int = 0,
                   server_index: int = 0) -> tuple["SnipProofShare", int]:
        from privagg.errors import MalformedShare

        w = field.width
        end = offset + 5 * w
        if end > len(data):
            raise MalformedShare("truncated proof scalars")
        try:
            f0, g0, a, b, c = field.vec_from_bytes(bytes(data[offset:end]))
        except ValueError as exc:
            raise MalformedShare(str(exc)) from exc
        h, end = ShareVector.from_bytes(field, data, end, server_index)
        return cls(f0, g0, h, BeaverTripleShare(a, b, c)), end


def prove_plain(c: ValidCircuit, field: Field, x: Sequence[int], rng: Rng, *,
                check: bool = True, blind: bool = True) -> Proof:
    """Build the plaintext proof for ``x``.

    ``check=False`` lets test adversaries prove false statements honestly;
    ``blind=False`` fixes f(0) = g(0) = 0 (a deliberately broken prover).
    """
    trace = eval_circuit(c, field, x)
    if check and not is_valid(c, trace):
        raise InvalidInput("input does not satisfy the validity circuit")
    u, v = mul_io(c, trace)
    if blind:
        u0, v0 = rng.elements(field, 2)
    else:
        u0 = v0 = 0
    f_pts = [u0] + u
    g_pts = [v0] + v
    f_pts += extend_consecutive(field, f_pts)
    g_pts += extend_consecutive(field, g_pts)
    p = field.modulus
    h = [a * b % p for a, b in zip(f_pts, g_pts)]
    return Proof(u0, v0, h, random_triple(field, rng))


def share_proof(field: Field, proof: Proof, s: int, rng: Rng) -> list[SnipProofShare]:
    t = proof.triple
    scalars = split_scalars(field, [proof.f0, proof.g0, t.a, t.b, t.c], s, rng)
    h_shares = split_prg(field, proof.h_points, s, rng)
    return [SnipProofShare(sc[0], sc[1], h, BeaverTripleShare(sc[2], sc[3], sc[4]))
            for sc, h in zip(scalars, h_shares)]


def prove(c: ValidCircuit, field: Field, x: Sequence[int], s: int, rng: Rng,
          ) -> tuple[list[ShareVector], list[SnipProofShare]]:
    field.check_circuit_size(c.M)
    proof = prove_plain(c, field, x, rng)
    return split_prg(field, x, s, rng), share_proof(field, proof, s, rng)


@dataclass
class VerifierConfig:
    """Identity-test point r with its precomputed Lagrange rows.

    Rotation replaces the whole object, so in-flight sessions holding the
    old one keep a consistent view.
    """

    field: Field
    M: int
    r: int
    Q: int | None = DEFAULT_ROTATION_BUDGET
    generation: int = 0
    r_uses: int = 0
    row_f: LagrangeRow = dc_field(init=False, repr=False)
    row_h: LagrangeRow = dc_field(init=False, repr=False)

    def __post_init__(self):
        self.field.check_circuit_size(self.M)
        self.r %= self.field.modulus
        if self.r <= self.M:
            raise ConfigurationError(f"r={self.r} lies in the interpolation domain 0..{self.M}")
        self.row_f = lagrange_coefficients(self.field, range(self.M + 1), self.r)
        self.row_h = lagrange_coefficients(self.field, range(2 * self.M + 1), self.r)

    @classmethod
    def random(cls, field: Field, M: int, rng: Rng, Q: int | None = DEFAULT_ROTATION_BUDGET,
               generation: int = 0) -> "VerifierConfig":
        return cls(field, M, sample_r(field, M, rng), Q, generation)

    @property
    def exhausted(self) -> bool:
        return self.Q is not None and self.r_uses >= self.Q


def sample_r(field: Field, M: int, rng: Rng) -> int:
    """Uniform r outside {0, ..., M}."""
    return M + 1 + rng.randbelow(field.modulus - M - 1)


def rotate_r(cfg: VerifierConfig, rng: Rng) -> VerifierConfig:
    return VerifierConfig.random(cfg.field, cfg.M, rng, cfg.Q, cfg.generation + 1)


@dataclass
class Round1State:
    d_share: int
    e_share: int
    rh_share: int
    check_shares: list[int]
    triple: BeaverTripleShare


def _round1_inputs(c, cfg, x_share, proof_share, const_holder):
    field = cfg.field
    # check declared lengths first so a hostile seeded share cannot force a huge expansion
    if proof_share.h_points.length != 2 * c.M + 1:
        raise LengthMismatch(f"expected {2 * c.M + 1} h points, got {proof_share.h_points.length}")
    if isinstance(x_share, ShareVector) and x_share.length != c.input_count:
        raise ArityMismatch(f"circuit takes {c.input_count} inputs, got {x_share.length}")
    x = x_share.expand(field) if isinstance(x_share, ShareVector) else list(x_share)
    h = proof_share.h_points.expand(field)
    f_pts, g_pts, checks = derive_wire_shares(c, field, x, h[1:c.M + 1],
                                              leader=const_holder)
    return [proof_share.f0] + f_pts, [proof_share.g0] + g_pts, h, checks


def _consume(cfg: VerifierConfig) -> None:
    if cfg.exhausted:
        raise RotationExhausted(f"r used {cfg.r_uses} times (budget {cfg.Q})")
    cfg.r_uses += 1


def verifier_round1(cfg: VerifierConfig, c: ValidCircuit, x_share, proof_share: SnipProofShare,
                    *, const_holder: bool, consume: bool = True) -> Round1State:
    """Local work of one server; ``const_holder`` is true for share index 0."""
    if consume:
        _consume(cfg)
    f_pts, g_pts, h, checks = _round1_inputs(c, cfg, x_share, proof_share, const_holder)
    p = cfg.field.modulus
    fr = kernels.dot(cfg.row_f.coeffs, f_pts, p)
    gr = kernels.dot(cfg.row_f.coeffs, g_pts, p)
    hr = kernels.dot(cfg.row_h.coeffs, h, p)
    return _finish_round1(cfg, fr, gr, hr, checks, proof_share.triple)


def verifier_round1_unoptimized(cfg: VerifierConfig, c: ValidCircuit, x_share,
                                proof_share: SnipProofShare, *, const_holder: bool,
                                consume: bool = True) -> Round1State:
    """Reference path: interpolate [f], [g], [h] fully, then evaluate at r."""
    if consume:
        _consume(cfg)
    field = cfg.field
    f_pts, g_pts, h, checks = _round1_inputs(c, cfg, x_share, proof_share, const_holder)
    f = interpolate(field, range(c.M + 1), f_pts)
    g = interpolate(field, range(c.M + 1), g_pts)
    hp = interpolate(field, range(2 * c.M + 1), h)
    return _finish_round1(cfg, f(cfg.r), g(cfg.r), hp(cfg.r), checks, proof_share.triple)


def _finish_round1(cfg, fr, gr, hr, checks, triple):
    p = cfg.field.modulus
    r = cfg.r
    return Round1State(
        d_share=(fr - triple.a) % p,
        e_share=(r * gr - triple.b) % p,
        rh_share=r * hr % p,
        check_shares=checks,
        triple=triple,
    )


def verifier_round2(field: Field, state: Round1State, d: int, e: int, s: int,
                    batch_coeffs: Sequence[int]) -> tuple[int, int]:
    """Return (sigma share, batched check share)."""
    p = field.modulus
    t = state.triple
    sigma = (d * e % p * field.inv(s) + d * t.b + e * t.a + t.c - state.rh_share) % p
    return sigma, batch_combine(field, state.check_shares, batch_coeffs)


def decide(field: Field, sigma_shares: Sequence[int], batch_shares: Sequence[int],
           s: int | None = None) -> bool:
    if s is not None and (len(sigma_shares) != s or len(batch_shares) != s):
        raise MissingShare(f"expected {s} round-2 shares")
    p = field.modulus
    return sum(sigma_shares) % p == 0 and sum(batch_shares) % p == 0


def verify(cfg: VerifierConfig, c: ValidCircuit, x_shares: Sequence, proof_shares:
           Sequence[SnipProofShare], batch_coeffs: Sequence[int], *,
           optimized: bool = True,
           tamper: Callable[[int, int], int] | None = None) -> bool:
    """Run both verification rounds for all servers in-process.

    ``tamper(i, sigma)`` lets a test server replace its sigma share.
    """
    field = cfg.field
    s = len(x_shares)
    if len(proof_shares) != s:
        raise MissingShare("one proof share per server is required")
    round1 = verifier_round1 if optimized else verifier_round1_unoptimized
    _consume(cfg)
    states = [round1(cfg, c, xs, ps, const_holder=(i == 0), consume=False)
              for i, (xs, ps) in enumerate(zip(x_shares, proof_shares))]
    p = field.modulus
    d = sum(st.d_share for st in states) % p
    e = sum(st.e_share for st in states) % p
    sigmas, batches = [], []
    for i, st in enumerate(states):
        sg, bt = verifier_round2(field, st, d, e, s, batch_coeffs)
        if tamper is not None:
            sg = tamper(i, sg)
        sigmas.append(sg)
        batches.append(bt)
    return decide(field, sigmas, batches, s)


def random_batch_coeffs(field: Field, c: ValidCircuit, rng: Rng) -> list[int]:
    return rng.elements(field, len(c.checks))


# Server-side validity evaluation with client-supplied triples


def triple_circuit(m: int) -> ValidCircuit:
    """Accepts (a_1, b_1, c_1, ..., a_m, b_m, c_m) iff c_t = a_t * b_t for all t."""
    b = CircuitBuilder(3 * m, name=f"triples[{m}]")
    for t in range(m):
        b.assert_product(3 * t, 3 * t + 1, 3 * t + 2)
    return b.build()


@dataclass
class MpcUpload:
    x_shares: list[list[int]]
    triple_shares: list[list[int]]
    triple_proof: list[SnipProofShare]


def mpc_client_upload(c: ValidCircuit, field: Field, x: Sequence[int], s: int, rng: Rng, *,
                      bad_triple: int | None = None) -> MpcUpload:
    """Client side: shares of x, M multiplication triples, and a SNIP for the triples.

    ``bad_triple=t`` corrupts triple t (for tests).
    """
    flat = []
    for _ in range(c.M):
        t = random_triple(field, rng)
        flat.extend([t.a, t.b, t.c])
    if bad_triple is not None:
        flat[3 * bad_triple + 2] = (flat[3 * bad_triple + 2] + 1) % field.modulus
    tc = triple_circuit(c.M)
    proof = prove_plain(tc, field, flat, rng, check=bad_triple is None)
    t_shares = split(field, flat, s, rng)
    x_sh = split(field, x, s, rng)
    return MpcUpload([sh.expand(field) for sh in x_sh],
                     [sh.expand(field) for sh in t_shares],
                     share_proof(field, proof, s, rng))


@dataclass
class MpcReport:
    accepted: bool
    rounds: int


def _broadcast_sum(field: Field, parts: Sequence[int], s: int) -> int:
    if len(parts) != s:
        raise MissingRound(f"expected {s} broadcast shares, got {len(parts)}")
    return sum(parts) % field.modulus


def mpc_validate(c: ValidCircuit, field: Field, x_shares: Sequence[Sequence[int]],
                 client_triples: Sequence[Sequence[int]], triple_proof: Sequence[SnipProofShare],
                 triple_cfg: VerifierConfig, rng: Rng) -> MpcReport:
    """Evaluate the validity circuit jointly with Beaver multiplication.

    The triples are first checked with a SNIP over the triple circuit; a
    failed check raises :class:`BadTripleProof`. Multiplication gates are
    then evaluated one broadcast round per multiplicative depth level.
    Secure only against honest-but-curious servers.
    """
    s = len(x_shares)
    p = field.modulus
    tc = triple_circuit(c.M)
    if triple_cfg.M != tc.M:
        raise ConfigurationError("triple verifier configured for a different circuit")
    if not verify(triple_cfg, tc, [list(t) for t in client_triples], triple_proof,
                  random_batch_coeffs(field, tc, rng)):
        raise BadTripleProof("client multiplication triples are not well formed")

    n = c.input_count
    ops, left, right, consts = c.compiled(field)
    wires = [list(xs) + [0] * len(ops) for xs in x_shares]
    level = [0] * (n + len(ops))
    gate_level = []
    for g in range(len(ops)):
        if ops[g] == kernels.OP_MUL:
            lv = max(level[left[g]], level[right[g]]) + 1
        elif ops[g] == kernels.OP_ADD:
            lv = max(level[left[g]], level[right[g]])
        else:
            lv = level[left[g]]
        level[n + g] = lv
        gate_level.append(lv)
    mul_slot = {g: t for t, g in enumerate(c.mul_gate_index)}
    depth = max(gate_level)
    rounds = 0
    for lv in range(depth + 1):
        muls = [g for g in range(len(ops)) if gate_level[g] == lv and ops[g] == kernels.OP_MUL]
        if muls:
            rounds += 1
            ds, es = [], []
            for g in muls:
                t = mul_slot[g]
                ds.append(_broadcast_sum(field, [
                    (wires[i][left[g]] - client_triples[i][3 * t]) % p for i in range(s)], s))
                es.append(_broadcast_sum(field, [
                    (wires[i][right[g]] - client_triples[i][3 * t + 1]) % p for i in range(s)], s))
            inv_s = field.inv(s)
            for g, d, e in zip(muls, ds, es):
                t = mul_slot[g]
                for i in range(s):
                    a, b, cc = client_triples[i][3 * t:3 * t + 3]
                    wires[i][n + g] = (d * e % p * inv_s + d * b + e * a + cc) % p
        for g in range(len(ops)):
            if gate_level[g] != lv or ops[g] == kernels.OP_MUL:
                continue
            for i in range(s):
                w = wires[i]
                op = ops[g]
                if op == kernels.OP_ADD:
                    w[n + g] = (w[left[g]] + w[right[g]]) % p
                elif op == kernels.OP_MULC:
                    w[n + g] = w[left[g]] * consts[g] % p
                else:
                    w[n + g] = (w[left[g]] + (consts[g] if i == 0 else 0)) % p
    coeffs = random_batch_coeffs(field, c, rng)
    total = _broadcast_sum(field, [
        batch_combine(field, [wires[i][w] for w in c.checks], coeffs) for i in range(s)], s)
    return MpcReport(total == 0, rounds)
