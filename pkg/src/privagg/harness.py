"""Deterministic simulation of clients and servers, plus statistical probes.

:func:`run_simulation` drives real :class:`~privagg.protocol.Server`
objects over a discrete-event network that serializes every message to
its wire frame, so byte counts and decoding paths are the deployed ones.
Adversarial clients reuse the honest prover and inject one mutation;
adversarial servers tamper with their round-2 share or drop messages.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from collections import Counter
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Sequence

from privagg import afe, snip
from privagg.afe import AfeKind
from privagg.circuit import derive_wire_shares
from privagg.errors import DecodeError, NoMajority, PrivaggError, WireError
from privagg.field import Field
from privagg.protocol import DeploymentConfig, Server, Submission, publish
from privagg.sharing import BeaverTriple, Rng, ShareVector, split_prg
from privagg.transport import (
    AccPublish,
    Message,
    MsgType,
    encode_frame,
    decode_frame,
)

CLIENT_STRATEGIES = (
    "malformed-encoding",  # coordinate, delta: false statement, honest polynomials
    "inconsistent-x",      # server, coordinate, delta: shift one server's x share after proving
    "bad-triple",          # alpha: c <- c + alpha
    "shifted-h",           # point, delta
    "wrong-f0g0",          # delta
    "false-data",          # value: an honest submission of a different valid value
    "out-of-range",        # value: first coordinate replaced, proof generated anyway
    "garbage-upload",      # server: that server receives an unparseable upload
)
SERVER_STRATEGIES = ("tamper-sigma", "drop-round")


@dataclass(frozen=True)
class AdversarySpec:
    """``target`` is the client index for client strategies, the server id otherwise."""

    role: str
    strategy: str
    target: int = 0
    params: tuple = ()

    def __post_init__(self):
        known = CLIENT_STRATEGIES if self.role == "client" else SERVER_STRATEGIES
        if self.role not in ("client", "server") or self.strategy not in known:
            raise ValueError(f"unknown adversary {self.role}/{self.strategy}")

    @property
    def p(self) -> dict:
        return dict(self.params)

    @classmethod
    def parse(cls, line: str) -> "AdversarySpec":
        """``role strategy target [key=value ...]``, e.g. ``client bad-triple 3 alpha=1``."""
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"bad adversary line {line!r}")
        params = []
        for item in parts[3:]:
            k, _, v = item.partition("=")
            params.append((k, _literal(v)))
        return cls(parts[0], parts[1], int(parts[2]), tuple(params))


def _literal(v: str):
    try:
        return int(v, 0)
    except ValueError:
        return v


# ---------------------------------------------------------------- forging


def forge_submission(cfg: DeploymentConfig, x, spec: AdversarySpec | None, rng: Rng) -> Submission:
    field, c, s, kind = cfg.field, cfg.circuit, cfg.servers, cfg.kind
    p = field.modulus
    prm = spec.p if spec else {}
    st = spec.strategy if spec else None
    if st == "false-data":
        x = prm["value"]
    enc = kind.encode(field, x, rng)
    if st == "malformed-encoding":
        i = prm.get("coordinate", 0)
        enc[i] = (enc[i] + prm.get("delta", 1)) % p
    elif st == "out-of-range":
        enc[0] = prm["value"] % p
    proof = snip.prove_plain(c, field, enc, rng, check=st not in ("malformed-encoding", "out-of-range"))
    if st == "bad-triple":
        t = proof.triple
        proof.triple = BeaverTriple(t.a, t.b, (t.c + prm.get("alpha", 1)) % p)
    elif st == "shifted-h":
        t = prm.get("point", 0)
        proof.h_points[t] = (proof.h_points[t] + prm.get("delta", 1)) % p
    elif st == "wrong-f0g0":
        proof.f0 = (proof.f0 + prm.get("delta", 1)) % p
    shares = split_prg(field, enc, s, rng)
    if st == "inconsistent-x":
        j = prm.get("server", s - 1)
        vals = shares[j].expand(field)
        i = prm.get("coordinate", 0)
        vals[i] = (vals[i] + prm.get("delta", 1)) % p
        shares[j] = ShareVector(j, len(vals), values=tuple(vals))
    return Submission(rng.random_bytes(16), shares, snip.share_proof(field, proof, s, rng))


def garble_frame(frame: bytes) -> bytes:
    """Overwrite the tail of a frame so its payload no longer parses."""
    return frame[:-3] + b"\xff\xff\xff"


# ---------------------------------------------------------------- simulation


@dataclass
class RunReport:
    accepted: list  # per input: True / False / None (no verdict)
    aggregate: object = None
    error: str | None = None
    client_bytes: int = 0
    server_bytes: int = 0
    server_bytes_per_submission: dict = dc_field(default_factory=dict)
    control_bytes: int = 0
    messages: int = 0
    sim_time: float = 0.0
    transcript_digest: str = ""
    log: list = dc_field(default_factory=list)
    server_stats: list = dc_field(default_factory=list)

    def summary(self) -> str:
        acc = self.accepted
        lines = [
            f"submissions={len(acc)}",
            f"accepted={sum(1 for a in acc if a)}",
            f"rejected={sum(1 for a in acc if a is False)}",
            f"undecided={sum(1 for a in acc if a is None)}",
            f"verdicts={''.join('A' if a else ('R' if a is False else '?') for a in acc)}",
        ]
        if self.aggregate is not None:
            lines.append(f"aggregate={self.aggregate.summary()}")
        if self.error is not None:
            lines.append(f"error={self.error}")
        per = sorted(set(self.server_bytes_per_submission.values()))
        lines += [
            f"client_bytes={self.client_bytes}",
            f"server_bytes={self.server_bytes}",
            f"server_bytes_per_submission={','.join(map(str, per))}",
            f"messages={self.messages}",
            f"transcript={self.transcript_digest}",
        ]
        return "\n".join(lines) + "\n"


class SimNetwork:
    """Discrete-event network: every frame is encoded, delayed, decoded.

    ``drop(src, dst, msg)`` returns True to lose a message; ``latency``
    gives the one-way delay for a (src, dst) pair.
    """

    def __init__(self, cfg: DeploymentConfig, servers: Sequence[Server], *, latency=0.001,
                 drop=None, corrupt=None):
        self.cfg = cfg
        self.servers = servers
        self.latency = latency
        self.drop = drop
        self.corrupt = corrupt
        self.now = 0.0
        self._events: list = []
        self._seq = 0
        self.inbox: dict = {}
        self.hasher = hashlib.sha256()
        self.stats = Counter()
        self.per_nonce = Counter()
        self.log: list[str] = []

    def _delay(self, src, dst) -> float:
        return self.latency(src, dst) if callable(self.latency) else self.latency

    def send(self, src, dst, msg: Message, at: float | None = None) -> None:
        cfg = self.cfg
        frame = encode_frame(msg, cfg.field, cfg.epoch, cfg.mac_key)
        if self.corrupt is not None:
            frame = self.corrupt(src, dst, msg, frame)
        self.stats["messages"] += 1
        if src[0] == "server" and dst[0] == "server":
            nonce = getattr(msg, "nonce", None)
            if nonce is not None:
                self.stats["server_bytes"] += len(frame)
                self.per_nonce[nonce] += len(frame)
            else:
                self.stats["control_bytes"] += len(frame)
        elif src[0] == "client":
            self.stats["client_bytes"] += len(frame)
        if self.drop is not None and self.drop(src, dst, msg):
            self.log.append(f"{self.now:.6f} drop {type(msg).__name__} {src}->{dst}")
            return
        when = (self.now if at is None else at) + self._delay(src, dst)
        self._seq += 1
        heapq.heappush(self._events, (when, self._seq, src, dst, frame))

    def emit(self, server: Server, outputs) -> None:
        for dst, msg in outputs:
            self.send(("server", server.id), dst, msg)

    def run(self) -> None:
        leader = self.servers[self.cfg.leader]
        while True:
            if not self._events:
                deadlines = [s.deadline for s in leader.sessions.values() if s.started]
                if not deadlines:
                    return
                self.now = max(self.now, min(deadlines))
                self.emit(leader, leader.tick(self.now))
                continue
            when, _, src, dst, frame = heapq.heappop(self._events)
            self.now = when
            self.hasher.update(repr((src, dst)).encode() + frame)
            try:
                msg, _ = decode_frame(frame, self.cfg.field, self.cfg.mac_key)
            except WireError as exc:
                self.log.append(f"{when:.6f} undecodable frame {src}->{dst}: {exc}")
                continue
            self.log.append(f"{when:.6f} {type(msg).__name__} {src}->{dst}")
            if dst[0] == "server":
                target = self.servers[dst[1]]
                self.emit(target, target.handle(src, msg, when))
                self.emit(leader, leader.tick(when))
            else:
                self.inbox.setdefault(dst, []).append(msg)


def run_simulation(cfg: DeploymentConfig, inputs: Sequence, adversaries: Sequence[AdversarySpec] = (),
                   seed: int = 0, *, validate: bool = True, interval: float = 0.0005,
                   latency=0.001) -> RunReport:
    """Run ``len(inputs)`` clients against ``cfg.servers`` in-process servers."""
    root = Rng(f"sim:{seed}")
    servers = [Server(cfg, i, Rng(root.key())) for i in range(cfg.servers)]
    for srv in servers:
        srv.validation = validate
    client_adv = {a.target: a for a in adversaries if a.role == "client"}
    server_adv = [a for a in adversaries if a.role == "server"]
    nonces: dict[bytes, int] = {}
    drop_rules = []
    for a in server_adv:
        prm = a.p
        if a.strategy == "tamper-sigma":
            delta = prm.get("delta", 1)
            servers[a.target].tamper_sigma = lambda s, d=delta: s + d
        else:
            mtype = prm.get("msg", "DE_BCAST")
            code = getattr(MsgType, mtype) if isinstance(mtype, str) else int(mtype)
            drop_rules.append((a.target, code, prm.get("client")))

    def drop(src, dst, msg):
        for sid, code, client in drop_rules:
            if msg.msg_type != code or sid not in (src[1], dst[1]):
                continue
            if client is None or nonces.get(getattr(msg, "nonce", None)) == client:
                return True
        return False

    garbage = {}

    def corrupt(src, dst, msg, frame):
        key = (getattr(msg, "nonce", None), dst)
        return garble_frame(frame) if key in garbage else frame

    net = SimNetwork(cfg, servers, latency=latency, drop=drop if drop_rules else None,
                     corrupt=corrupt)
    for srv in servers:
        net.emit(srv, srv.start(0.0))
    report = RunReport([None] * len(inputs))
    for i, x in enumerate(inputs):
        crng = Rng(root.key())
        spec = client_adv.get(i)
        try:
            sub = forge_submission(cfg, x, spec, crng)
        except PrivaggError as exc:
            report.log.append(f"client {i}: {type(exc).__name__}: {exc}")
            continue
        nonces[sub.nonce] = i
        if spec is not None and spec.strategy == "garbage-upload":
            garbage[(sub.nonce, ("server", spec.p.get("server", 1)))] = True
        for j, up in enumerate(sub.uploads()):
            net.send(("client", i), ("server", j), up, at=i * interval)
    net.run()
    for i in range(len(inputs)):
        for msg in net.inbox.get(("client", i), []):
            report.accepted[i] = msg.accept
    leader = servers[cfg.leader]
    net.emit(leader, leader.request_publish(("publisher", 0)))
    net.run()
    parts = [m for m in net.inbox.get(("publisher", 0), []) if isinstance(m, AccPublish)]
    try:
        report.aggregate = publish(parts, cfg)
    except PrivaggError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    report.client_bytes = net.stats["client_bytes"]
    report.server_bytes = net.stats["server_bytes"]
    report.control_bytes = net.stats["control_bytes"]
    report.server_bytes_per_submission = {nonces.get(n, -1): b for n, b in net.per_nonce.items()}
    report.messages = net.stats["messages"]
    report.sim_time = net.now
    report.transcript_digest = net.hasher.hexdigest()
    report.log = report.log + net.log
    report.server_stats = [dict(s.stats) for s in servers]
    return report


# ---------------------------------------------------------------- oracles


@dataclass(frozen=True)
class CountMinOracle:
    counts: dict
    table: tuple


def plaintext_oracle(kind: AfeKind, inputs: Sequence):
    """The statistic computed directly on plaintext values with exact arithmetic."""
    n = len(inputs)
    if isinstance(kind, (afe.Sum, afe.Mean, afe.Variance, afe.MinMaxExact, afe.MinMaxApprox,
                         afe.FreqCount)):
        bound = (1 << kind.b) if hasattr(kind, "b") else kind.B
        for v in inputs:
            if not isinstance(v, int) or not 0 <= v < bound:
                raise afe.DomainError(f"{v!r} outside the domain")
    if isinstance(kind, afe.Mean):
        if n == 0:
            raise DecodeError("empty input")
        return afe.MeanResult(Fraction(sum(inputs), n), sum(inputs))
    if isinstance(kind, afe.Sum):
        return afe.SumResult(sum(inputs))
    if isinstance(kind, afe.Variance):
        if n == 0:
            raise DecodeError("empty input")
        mean = Fraction(sum(inputs), n)
        return afe.VarianceResult(mean, sum((Fraction(v) - mean) ** 2 for v in inputs) / n)
    if isinstance(kind, afe.BoolAnd):
        return afe.BoolResult(all(bool(v) for v in inputs))
    if isinstance(kind, afe.BoolOr):
        return afe.BoolResult(any(bool(v) for v in inputs))
    if isinstance(kind, (afe.MinMaxExact, afe.MinMaxApprox)):
        if not inputs:
            return afe.MinMaxResult(None)
        return afe.MinMaxResult(max(inputs) if kind.is_max else min(inputs))
    if isinstance(kind, afe.FreqCount):
        tally = Counter(inputs)
        return afe.CountsResult(tuple(tally.get(i, 0) for i in range(kind.B)))
    if isinstance(kind, afe.CountMin):
        tally = Counter(inputs)
        table = [[0] * kind.width for _ in range(kind.rows)]
        for item, cnt in tally.items():
            for r in range(kind.rows):
                table[r][kind.bucket(r, item)] += cnt
        return CountMinOracle(dict(tally), tuple(tuple(row) for row in table))
    if isinstance(kind, afe.MostPopular):
        strings = [kind._to_bits(v) for v in inputs]
        if not strings:
            raise NoMajority("empty input")
        top, cnt = Counter("".join(map(str, s)) for s in strings).most_common(1)[0]
        if 2 * cnt <= n:
            raise NoMajority("no string is held by a strict majority")
        return afe.PopularResult(top)
    if isinstance(kind, afe.LinReg):
        return _linreg_oracle(kind.d, inputs)
    if isinstance(kind, afe.RSquared):
        ys = [Fraction(v[-1]) for v in inputs]
        if n == 0:
            raise DecodeError("empty input")
        mean = sum(ys) / n
        ss_tot = sum((y - mean) ** 2 for y in ys)
        ss_res = sum((Fraction(v[-1]) - kind.predict(v[:-1])) ** 2 for v in inputs)
        if ss_tot == 0:
            if ss_res:
                raise DecodeError("undefined")
            return afe.RSquaredResult(Fraction(1), mean, Fraction(0))
        return afe.RSquaredResult(1 - ss_res / ss_tot, mean, ss_tot / n)
    raise TypeError(f"no oracle for {kind!r}")


def _linreg_oracle(d: int, inputs) -> afe.LinRegResult:
    from sympy import Matrix, Rational

    n = len(inputs)
    rows = [[Rational(1)] + [Rational(Fraction(v)) for v in pt[:d]] for pt in inputs]
    ys = [Rational(Fraction(pt[d])) for pt in inputs]
    X = Matrix(rows)
    Y = Matrix(ys)
    gram = X.T * X
    if gram.det() == 0:
        raise DecodeError("singular design")
    beta = gram.LUsolve(X.T * Y)
    coeffs = tuple(Fraction(int(b.p), int(b.q)) for b in beta)
    xs = [[Fraction(v) for v in pt[:d]] for pt in inputs]
    mean = [sum(col) / n for col in zip(*xs)]
    cov = tuple(tuple(sum((row[j] - mean[j]) * (row[k] - mean[k]) for row in xs) / n
                      for k in range(d)) for j in range(d))
    return afe.LinRegResult(coeffs, tuple(mean), cov)


def agrees(kind: AfeKind, got, want) -> bool:
    """Does a decoded result meet the kind's contract relative to the oracle?"""
    if isinstance(kind, afe.MinMaxApprox):
        if want.value is None:
            return got.value is None
        lo = got.value
        return lo <= want.value < kind.c * max(lo, 1)
    if isinstance(kind, afe.CountMin):
        return got.table == want.table and all(got.estimate(i) >= c for i, c in want.counts.items())
    return got == want


# ---------------------------------------------------------------- inputs


def sample_input(kind: AfeKind, rng: Rng):
    if isinstance(kind, (afe.Sum, afe.Variance)):
        return rng.randbelow(1 << kind.b)
    if isinstance(kind, afe.BoolOr):
        return bool(rng.randbelow(2))
    if isinstance(kind, (afe.MinMaxExact, afe.MinMaxApprox, afe.FreqCount)):
        return rng.randbelow(kind.B)
    if isinstance(kind, afe.CountMin):
        return rng.randbelow(4 * kind.width)
    if isinstance(kind, afe.MostPopular):
        return format(rng.randbelow(1 << kind.b), f"0{kind.b}b")
    if isinstance(kind, afe.LinReg):
        top = 1 << kind.b
        return tuple(rng.randbelow(top) - kind.offset for _ in range(kind.d + 1))
    if isinstance(kind, afe.RSquared):
        return tuple(rng.randbelow(1 << kind.b) for _ in range(kind.d + 1))
    raise TypeError(kind)


def sample_inputs(kind: AfeKind, n: int, rng: Rng) -> list:
    """``n`` random domain values; MostPopular inputs always have a strict majority."""
    if isinstance(kind, afe.MostPopular) and n:
        major = sample_input(kind, rng)
        k = n // 2 + 1 + rng.randbelow(n - n // 2)
        vals = [major] * k + [sample_input(kind, rng) for _ in range(n - k)]
        order = sorted(range(n), key=lambda _: rng.randbelow(1 << 30))
        return [vals[i] for i in order]
    return [sample_input(kind, rng) for _ in range(n)]


def domain_values(kind: AfeKind) -> list:
    """Every domain value of a small deterministic kind (for enumeration)."""
    if isinstance(kind, (afe.Sum, afe.Variance)):
        return list(range(1 << kind.b))
    if isinstance(kind, (afe.MinMaxExact, afe.MinMaxApprox, afe.FreqCount)):
        return list(range(kind.B))
    if isinstance(kind, afe.MostPopular):
        return [format(v, f"0{kind.b}b") for v in range(1 << kind.b)]
    if isinstance(kind, afe.BoolOr):
        return [False, True]
    raise TypeError(f"{kind} has no small enumerable domain")


def _clear_pipeline(kind: AfeKind, field: Field, vals: Sequence) -> str:
    """Encode, truncate, sum and decode in the clear (deterministic kinds only)."""
    p = field.modulus
    sigma = [0] * kind.k_prime
    for v in vals:
        sigma = [(a + b) % p for a, b in zip(sigma, kind.truncate(kind.encode(field, v)))]
    try:
        return kind.decode(field, sigma, len(vals)).summary()
    except DecodeError:
        return "undecodable"


def reachable_outcomes(kind: AfeKind, honest: Sequence, adversaries: int, field: Field | None = None) -> set:
    """Summaries of f over honest inputs plus any valid (or omitted) adversarial inputs.

    Batches the oracle cannot summarize (an empty variance, no majority
    string) contribute whatever the encoding pipeline yields on them in the
    clear, or "undecodable" when that fails too.
    """
    from itertools import product

    from privagg.field import GOLDILOCKS

    field = field or GOLDILOCKS
    choices = domain_values(kind) + [None]
    out = set()
    for pick in product(choices, repeat=adversaries):
        vals = list(honest) + [v for v in pick if v is not None]
        try:
            out.add(plaintext_oracle(kind, vals).summary())
        except DecodeError:
            out.add(_clear_pipeline(kind, field, vals))
    return out


def adversary_grid(kind: AfeKind, field: Field) -> list[str]:
    """Client strategy lines (without role and target) covering every mutation family."""
    c = kind.circuit
    p = field.modulus
    lines = []
    for i in range(kind.k):
        lines += [f"malformed-encoding coordinate={i} delta={d}" for d in (1, p - 1)]
    lines += [f"inconsistent-x server={j} coordinate=0 delta=1" for j in (0, 1)]
    lines += ["bad-triple alpha=1", "wrong-f0g0 delta=1"]
    lines += [f"shifted-h point={t} delta=1" for t in sorted({0, 1, c.M, 2 * c.M})]
    lines += [f"garbage-upload server={j}" for j in (0, 1)]
    if isinstance(kind, (afe.Sum, afe.Variance)):
        lines += [f"out-of-range value={v}" for v in (1 << kind.b, p - 1)]
    elif isinstance(kind, (afe.MinMaxExact, afe.FreqCount)):
        lines += [f"out-of-range value={v}" for v in (2, p - 1)]
    return lines


@dataclass
class RobustnessReport:
    cases: int = 0
    violations: list = dc_field(default_factory=list)


def robustness_enumeration(kind: AfeKind, field: Field, max_clients: int = 6,
                           servers: int = 2, seed: int = 0) -> RobustnessReport:
    """Run every adversary line against every batch size up to ``max_clients``.

    Each batch has one or two adversarial clients (the same mutation, or the
    mutation plus an honest-looking false-data client); the published result
    must be one that some choice of valid or omitted adversarial inputs
    could have produced.
    """
    cfg = DeploymentConfig(field, servers, kind, min_batch=0)
    rng = Rng(f"robust:{seed}:{kind.config_string()}")
    domain = domain_values(kind)
    report = RobustnessReport()
    for line in adversary_grid(kind, field):
        for n in range(1, max_clients + 1):
            for adv_count in (1, 2):
                if adv_count > n:
                    continue
                honest = [domain[rng.randbelow(len(domain))] for _ in range(n - adv_count)]
                advs = [AdversarySpec.parse(f"client {line.split()[0]} {n - adv_count} "
                                            + " ".join(line.split()[1:]))]
                inputs = honest + [domain[0]] * adv_count
                if adv_count == 2:
                    alt = domain[rng.randbelow(len(domain))]
                    advs.append(AdversarySpec("client", "false-data", n - 1, (("value", alt),)))
                rep = run_simulation(cfg, inputs, advs, seed=rng.randbelow(1 << 30))
                got = rep.aggregate.summary() if rep.aggregate is not None else "undecodable"
                report.cases += 1
                if got not in reachable_outcomes(kind, honest, adv_count, field):
                    report.violations.append((line, n, adv_count, got))
    return report


# ---------------------------------------------------------------- soundness


@dataclass
class Rate:
    accepts: int
    trials: int
    bound: float

    @property
    def rate(self) -> float:
        return self.accepts / self.trials

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.bound * (1 - self.bound), 1e-12) / self.trials)

    @property
    def limit(self) -> float:
        return self.bound + 3 * self.sigma

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        """Wilson score interval for the true accept rate."""
        n, ph = self.trials, self.rate
        centre = (ph + z * z / (2 * n)) / (1 + z * z / n)
        half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        return max(0.0, centre - half), min(1.0, centre + half)

    @property
    def within(self) -> bool:
        return self.rate <= self.limit


FORGERY_FAMILIES = ("shifted-h", "wrong-f0g0", "bad-triple", "inconsistent-x", "malformed-encoding")


def _forged_proof(family: str, c, field: Field, x: list[int], s: int, rng: Rng):
    p = field.modulus
    enc = list(x)
    if family == "malformed-encoding":
        enc[0] = (enc[0] + 2) % p  # a bit of value 2: fails its check
    proof = snip.prove_plain(c, field, enc, rng, check=False)
    if family == "shifted-h":
        t = rng.randbelow(2 * c.M + 1)
        proof.h_points[t] = (proof.h_points[t] + rng.nonzero_element(field)) % p
    elif family == "wrong-f0g0":
        proof.f0 = (proof.f0 + rng.nonzero_element(field)) % p
    elif family == "bad-triple":
        t = proof.triple
        proof.triple = BeaverTriple(t.a, t.b, (t.c + rng.nonzero_element(field)) % p)
    shares = split_prg(field, enc, s, rng)
    if family == "inconsistent-x":
        vals = shares[-1].expand(field)
        i = rng.randbelow(len(vals))
        vals[i] = (vals[i] + rng.nonzero_element(field)) % p
        shares[-1] = ShareVector(s - 1, len(vals), values=tuple(vals))
    return shares, snip.share_proof(field, proof, s, rng)


def bit_circuit(m: int):
    """A circuit with exactly M multiplication gates: the Sum circuit with b = M."""
    return afe.Sum(m).circuit


def soundness_sweep(M: int, field: Field, forgeries: Sequence[str] = FORGERY_FAMILIES,
                    trials: int = 10_000, seed: int = 0, servers: int = 2) -> dict[str, Rate]:
    """Empirical accept rates of each forgery family, fresh r per trial."""
    kind = afe.Sum(M)
    c = kind.circuit
    rng = Rng(f"sound:{seed}:{M}:{field.modulus}")
    bound = (2 * M + 1) / field.modulus
    out = {}
    for fam in forgeries:
        accepts = 0
        for _ in range(trials):
            x = kind.encode(field, rng.randbelow(1 << M))
            cfg = snip.VerifierConfig.random(field, c.M, rng, Q=None)
            xs, ps = _forged_proof(fam, c, field, x, servers, rng)
            accepts += snip.verify(cfg, c, xs, ps, snip.random_batch_coeffs(field, c, rng))
        out[fam] = Rate(accepts, trials, bound)
    return out


def adaptive_forgery_rate(M: int, field: Field, q: int = 32, trials: int = 2000,
                          seed: int = 0, servers: int = 2) -> Rate:
    """Adaptive attack against a fixed r: each forgery is built to pass for a fresh set of
    M + 1 guessed r values, and every rejection rules its guesses out.

    The client proves an invalid input (a bit of value 2); h is replaced by
    f*g - Q with Q vanishing on the other multiplication points and on the
    guesses, so the checks pass and the identity holds exactly at the guesses.
    Returns the fraction of trials in which any of the q attempts was accepted.
    """
    kind = afe.Sum(M)
    c = kind.circuit
    p = field.modulus
    rng = Rng(f"adaptive:{seed}:{M}")
    wins = 0
    for _ in range(trials):
        cfg = snip.VerifierConfig.random(field, c.M, rng, Q=q)
        candidates = list(range(M + 1, p))
        for _attempt in range(q):
            if not candidates:
                break
            guesses = [candidates.pop(rng.randbelow(len(candidates)))
                       for _ in range(min(M + 1, len(candidates)))]
            xs, ps = _targeted_forgery(c, field, guesses, servers, rng)
            if snip.verify(cfg, c, xs, ps, snip.random_batch_coeffs(field, c, rng)):
                wins += 1
                break
    return Rate(wins, trials, min(1.0, (2 * M + 1) * q / p))


def _targeted_forgery(c, field: Field, guesses: list[int], s: int, rng: Rng):
    from privagg.field import Polynomial

    p = field.modulus
    M = c.M
    # value 2 written with "bit" 0 equal to 2: the recomposition holds, the bit check fails
    enc = [2, 2] + [0] * (M - 1)
    proof = snip.prove_plain(c, field, enc, rng, check=False)
    # Q: zero at mul points 2..M and at the guesses, Q(1) = h(1) so that h'(1) = 0
    roots = list(range(2, M + 1)) + guesses
    q_poly = Polynomial(field, [1])
    for r0 in roots:
        q_poly = q_poly * Polynomial(field, [(-r0) % p, 1])
    target = proof.h_points[1]
    scale = field.div(target, q_poly(1))
    proof.h_points = [(h - scale * q_poly(t)) % p for t, h in enumerate(proof.h_points)]
    shares = split_prg(field, enc, s, rng)
    return shares, snip.share_proof(field, proof, s, rng)


# ---------------------------------------------------------------- privacy


@dataclass
class ProbeReport:
    names: list[str]
    tv: list[float]
    trials: int

    @property
    def max_tv(self) -> float:
        return max(self.tv)

    def worst(self) -> tuple[str, float]:
        i = max(range(len(self.tv)), key=self.tv.__getitem__)
        return self.names[i], self.tv[i]


def total_variation(a: Counter, b: Counter, n: int) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0) - b.get(k, 0)) for k in keys) / n


def _observer_view(cfg: DeploymentConfig, x, rng: Rng, observer: int, *, blind: bool,
                   shift: int) -> list[int]:
    """One protocol run; returns everything ``observer`` receives.

    With ``shift`` != 0 the observer deviates: it adds ``shift`` to its
    shares of every multiplication gate's right input before round 1,
    which turns the verdict into a test of f(r) = 0.
    """
    field, c, s, kind = cfg.field, cfg.circuit, cfg.servers, cfg.kind
    p = field.modulus
    enc = kind.encode(field, x, rng)
    proof = snip.prove_plain(c, field, enc, rng, blind=blind)
    xs = split_prg(field, enc, s, rng)
    ps = snip.share_proof(field, proof, s, rng)
    vcfg = snip.VerifierConfig.random(field, c.M, rng, Q=None)
    coeffs = snip.random_batch_coeffs(field, c, rng)
    states = []
    for i in range(s):
        xi = xs[i].expand(field)
        h = ps[i].h_points.expand(field)
        f_pts, g_pts, checks = derive_wire_shares(c, field, xi, h[1:c.M + 1], leader=(i == 0))
        if i == observer and shift:
            g_pts = [(g + shift) % p for g in g_pts]
        fr = field.dot(vcfg.row_f.coeffs, [ps[i].f0] + f_pts)
        gr = field.dot(vcfg.row_f.coeffs, [ps[i].g0] + g_pts)
        hr = field.dot(vcfg.row_h.coeffs, h)
        states.append(snip._finish_round1(vcfg, fr, gr, hr, checks, ps[i].triple))
    d = sum(st.d_share for st in states) % p
    e = sum(st.e_share for st in states) % p
    r2 = [snip.verifier_round2(field, st, d, e, s, coeffs) for st in states]
    accept = snip.decide(field, [a for a, _ in r2], [b for _, b in r2])
    own = ps[observer]
    view = list(xs[observer].expand(field)) + [own.f0, own.g0] + own.h_points.expand(field)
    view += [own.triple.a, own.triple.b, own.triple.c, d, e]
    for i in range(s):
        if i != observer:
            view += [states[i].d_share, states[i].e_share, r2[i][0], r2[i][1]]
    view.append(int(accept))
    return view


def _view_names(cfg: DeploymentConfig, observer: int) -> list[str]:
    c = cfg.circuit
    names = [f"x[{i}]" for i in range(cfg.kind.k)] + ["f0", "g0"]
    names += [f"h({t})" for t in range(2 * c.M + 1)] + ["a", "b", "c", "d", "e"]
    for i in range(cfg.servers):
        if i != observer:
            names += [f"d_{i}", f"e_{i}", f"sigma_{i}", f"batch_{i}"]
    return names + ["verdict"]


def privacy_probe(cfg: DeploymentConfig, x0, x1, trials: int, observer: int = 0, *,
                  seed: int = 0, blind: bool = True, shift: int = 0) -> ProbeReport:
    """Per-coordinate total-variation distance between the observer's views under x0 and x1.

    ``blind=False`` runs a broken prover that fixes f(0) = g(0) = 0.
    ``shift`` makes the observer actively deviate (see :func:`_observer_view`).
    """
    names = _view_names(cfg, observer)
    hists = []
    for tag, x in (("a", x0), ("b", x1)):
        rng = Rng(f"probe:{seed}:{tag}")
        cols = [Counter() for _ in names]
        for _ in range(trials):
            for col, v in zip(cols, _observer_view(cfg, x, rng, observer, blind=blind, shift=shift)):
                col[v] += 1
        hists.append(cols)
    tv = [total_variation(a, b, trials) for a, b in zip(*hists)]
    return ProbeReport(names, tv, trials)


# ---------------------------------------------------------------- throughput


def _prove_verify_batch(args) -> int:
    cfg_text, values, seed = args
    cfg = DeploymentConfig.from_text(cfg_text)
    rng = Rng(seed)
    c = cfg.circuit
    vcfg = snip.VerifierConfig.random(cfg.field, c.M, rng, Q=None)
    ok = 0
    for v in values:
        enc = cfg.kind.encode(cfg.field, v, rng)
        xs, ps = snip.prove(c, cfg.field, enc, cfg.servers, rng)
        ok += snip.verify(vcfg, c, xs, ps, snip.random_batch_coeffs(cfg.field, c, rng))
    return ok


def measure_throughput(cfg: DeploymentConfig, values: Sequence, processes: int = 1) -> tuple[int, float]:
    """Prove and verify ``values``; returns (accepted, seconds). For benchmarking only."""
    import time

    start = time.perf_counter()
    if processes <= 1:
        ok = _prove_verify_batch((cfg.to_text(), list(values), "tp"))
    else:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [list(values[i::processes]) for i in range(processes)]
        with ProcessPoolExecutor(processes) as pool:
            ok = sum(pool.map(_prove_verify_batch,
                              [(cfg.to_text(), ch, f"tp{i}") for i, ch in enumerate(chunks)]))
    return ok, time.perf_counter() - start
