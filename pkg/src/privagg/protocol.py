"""Upload, validate, aggregate, publish.

:class:`Server` is a sans-IO state machine: every input (a message from a
peer, or the passage of time) returns the list of ``(destination,
message)`` pairs to send. Destinations are ``("server", id)`` or
``("client", handle)``. The harness and the TCP server both drive it.

Per submission the leader runs two round trips with every follower:
START -> ROUND1, then DE_BCAST -> ROUND2, followed by a one-way VERDICT.
The leader persists its verdict before broadcasting it, and a server only
adds a share to its accumulator on an accepting verdict, so a crashed
leader never leaves a partial accept behind.
"""

from __future__ import annotations

import hashlib
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

from privagg import snip
from privagg.afe import AfeKind, AggregateResult, parse_kind
from privagg.errors import (
    BatchTooSmall,
    ConfigurationError,
    CountMismatch,
    LengthMismatch,
    PrivaggError,
    SnapshotCorrupt,
)
from privagg.field import NAMED_FIELDS, Field, field_by_name_or_modulus
from privagg.sharing import Rng, ShareVector, prg_expand, split_prg
from privagg.snip import SnipProofShare, VerifierConfig
from privagg.transport import (
    DIGEST_SIZE,
    AccPublish,
    DeBroadcast,
    Message,
    PublishRequest,
    Rotate,
    Round1,
    Round2,
    Start,
    Upload,
    Verdict,
    encode_frame,
    read_snapshot,
    snapshot_bytes,
)

log = logging.getLogger("privagg.protocol")

Address = tuple  # ("server", id) | ("client", handle)


@dataclass(frozen=True)
class DeploymentConfig:
    field: Field
    servers: int
    kind: AfeKind
    leader: int = 0
    rotation: int | None = snip.DEFAULT_ROTATION_BUDGET
    min_batch: int = 1
    epoch: int = 1
    timeout: float = 5.0
    window: int = 64
    addresses: tuple[str, ...] = ()
    mac_key: bytes | None = None

    def __post_init__(self):
        if self.servers < 2:
            raise ConfigurationError("need at least 2 servers")
        if not 0 <= self.leader < self.servers:
            raise ConfigurationError(f"leader {self.leader} is not a server id")
        if self.addresses and len(self.addresses) != self.servers:
            raise ConfigurationError("one address per server is required")
        if self.rotation is not None and self.rotation < 1:
            raise ConfigurationError("rotation budget must be positive")
        if self.min_batch < 0 or self.window < 1 or self.timeout <= 0:
            raise ConfigurationError("bad min_batch, window or timeout")
        self.field.check_circuit_size(self.kind.circuit.M)

    @property
    def circuit(self):
        return self.kind.circuit

    def to_text(self) -> str:
        lines = [
            f"field = {self._field_text()}",
            f"servers = {self.servers}",
            f"leader = {self.leader}",
            f"kind = {self.kind.config_string()}",
            f"rotation = {self.rotation if self.rotation is not None else 'none'}",
            f"min_batch = {self.min_batch}",
            f"epoch = {self.epoch}",
            f"timeout = {self.timeout}",
            f"window = {self.window}",
        ]
        if self.addresses:
            lines.append("addresses = " + ",".join(self.addresses))
        if self.mac_key is not None:
            lines.append(f"mac_key = {self.mac_key.hex()}")
        return "\n".join(lines) + "\n"

    def _field_text(self) -> str:
        named = NAMED_FIELDS.get(self.field.name)
        return self.field.name if named == self.field else str(self.field.modulus)

    def digest(self) -> bytes:
        """Hash of the canonical config text, with the field given by its modulus."""
        canon = self.to_text().replace(f"field = {self._field_text()}\n",
                                       f"field = {self.field.modulus}\n", 1)
        return hashlib.sha256(canon.encode()).digest()

    @classmethod
    def from_text(cls, text: str) -> "DeploymentConfig":
        kv = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigurationError(f"line {n}: expected key = value")
            kv[key.strip().lower()] = val.strip()
        try:
            field = field_by_name_or_modulus(kv.pop("field", "goldilocks"))
            kind = parse_kind(kv.pop("kind"))
            servers = int(kv.pop("servers"))
            rot = kv.pop("rotation", str(snip.DEFAULT_ROTATION_BUDGET))
            mac = kv.pop("mac_key", None)
            addrs = kv.pop("addresses", "")
            cfg = cls(
                field=field, servers=servers, kind=kind,
                leader=int(kv.pop("leader", "0")),
                rotation=None if rot.lower() == "none" else int(rot),
                min_batch=int(kv.pop("min_batch", "1")),
                epoch=int(kv.pop("epoch", "1")),
                timeout=float(kv.pop("timeout", "5.0")),
                window=int(kv.pop("window", "64")),
                addresses=tuple(a.strip() for a in addrs.split(",") if a.strip()),
                mac_key=bytes.fromhex(mac) if mac else None,
            )
        except KeyError as exc:
            raise ConfigurationError(f"missing config key {exc.args[0]}") from None
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if kv:
            raise ConfigurationError(f"unknown config keys {sorted(kv)}")
        return cfg

    @classmethod
    def load(cls, path) -> "DeploymentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None


# ---------------------------------------------------------------- client


@dataclass
class Submission:
    nonce: bytes
    shares: list[ShareVector]
    proofs: list[SnipProofShare]

    def uploads(self) -> list[Upload]:
        return [Upload(self.nonce, sh, pr) for sh, pr in zip(self.shares, self.proofs)]

    def upload_bytes(self, cfg: DeploymentConfig) -> int:
        return sum(len(encode_frame(u, cfg.field, cfg.epoch, cfg.mac_key)) for u in self.uploads())


def client_submit(cfg: DeploymentConfig, x, rng: Rng) -> Submission:
    """Encode, prove and split ``x``; the encoding and h points travel PRG-compressed."""
    field, c, s = cfg.field, cfg.circuit, cfg.servers
    enc = cfg.kind.encode(field, x, rng)
    proof = snip.prove_plain(c, field, enc, rng)
    nonce = rng.random_bytes(16)
    return Submission(nonce, split_prg(field, enc, s, rng), snip.share_proof(field, proof, s, rng))


# ---------------------------------------------------------------- accumulators

_DIGEST_MOD = 1 << (8 * DIGEST_SIZE)


def nonce_digest(nonce: bytes) -> int:
    return int.from_bytes(hashlib.sha256(nonce).digest(), "big")


@dataclass
class Accumulator:
    """Running sum of accepted truncated shares and an order-free digest of their nonces."""

    values: list[int]
    count: int = 0
    digest: int = 0

    @classmethod
    def zero(cls, k_prime: int) -> "Accumulator":
        return cls([0] * k_prime)

    def digest_bytes(self) -> bytes:
        return self.digest.to_bytes(DIGEST_SIZE, "big")

    def to_message(self) -> AccPublish:
        return AccPublish(tuple(self.values), self.count, self.digest_bytes())

    @classmethod
    def from_message(cls, msg: AccPublish) -> "Accumulator":
        return cls(list(msg.values), msg.count, int.from_bytes(msg.digest, "big"))


def server_aggregate(acc: Accumulator, field: Field, kind: AfeKind, share: ShareVector | Sequence[int],
                     nonce: bytes) -> Accumulator:
    vals = share.expand(field) if isinstance(share, ShareVector) else list(share)
    t = kind.truncate(vals)
    p = field.modulus
    acc.values = [(a + b) % p for a, b in zip(acc.values, t)]
    acc.count += 1
    acc.digest = (acc.digest + nonce_digest(nonce)) % _DIGEST_MOD
    return acc


def publish(accs: Sequence[Accumulator | AccPublish], cfg: DeploymentConfig) -> AggregateResult:
    accs = [Accumulator.from_message(a) if isinstance(a, AccPublish) else a for a in accs]
    if len(accs) != cfg.servers:
        raise LengthMismatch(f"need {cfg.servers} accumulators, got {len(accs)}")
    counts = {a.count for a in accs}
    digests = {a.digest for a in accs}
    if len(counts) != 1 or len(digests) != 1:
        raise CountMismatch(f"servers disagree on the accepted set (counts {sorted(counts)})")
    n = counts.pop()
    if n < cfg.min_batch:
        raise BatchTooSmall(f"{n} accepted submissions, need {cfg.min_batch}")
    p = cfg.field.modulus
    sigma = [sum(col) % p for col in zip(*(a.values for a in accs))]
    return cfg.kind.decode(cfg.field, sigma, n)


# ---------------------------------------------------------------- persistence


class SnapshotLog:
    """Append-only record of verdicts and accumulator states for one epoch."""

    def __init__(self, path, cfg: DeploymentConfig):
        self.path = path
        self.cfg = cfg

    def load(self) -> tuple[Accumulator, dict[bytes, bool]]:
        acc = Accumulator.zero(self.cfg.kind.k_prime)
        verdicts: dict[bytes, bool] = {}
        if self.path is None or not os.path.exists(self.path):
            return acc, verdicts
        with open(self.path, "rb") as fh:
            data = fh.read()
        if not data:
            return acc, verdicts
        msgs = read_snapshot(data, self.cfg.field, self.cfg.epoch)
        pending = None
        for m in msgs:
            if isinstance(m, Verdict):
                if pending is not None:
                    raise SnapshotCorrupt("accepting verdict without accumulator record")
                if m.accept:
                    pending = m.nonce
                else:
                    verdicts[m.nonce] = False
            elif isinstance(m, AccPublish):
                if pending is None:
                    raise SnapshotCorrupt("accumulator record without verdict")
                new = Accumulator.from_message(m)
                expected = (acc.digest + nonce_digest(pending)) % _DIGEST_MOD
                if (new.count != acc.count + 1 or new.digest != expected
                        or len(new.values) != len(acc.values)):
                    raise SnapshotCorrupt("accumulator record inconsistent with verdict log")
                acc = new
                verdicts[pending] = True
                pending = None
            else:
                raise SnapshotCorrupt(f"unexpected record {type(m).__name__}")
        # a trailing accept without its accumulator record was never applied
        return acc, verdicts

    def append(self, nonce: bytes, accept: bool, acc: Accumulator | None) -> None:
        if self.path is None:
            return
        cfg = self.cfg
        frames = [encode_frame(Verdict(nonce, accept), cfg.field, cfg.epoch)]
        if accept:
            frames.append(encode_frame(acc.to_message(), cfg.field, cfg.epoch))
        new = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
        with open(self.path, "ab") as fh:
            fh.write(snapshot_bytes(frames) if new else b"".join(frames))
            fh.flush()
            os.fsync(fh.fileno())


# ---------------------------------------------------------------- servers


@dataclass
class _Session:
    nonce: bytes
    client: object = None
    upload: Upload | None = None
    generation: int | None = None
    state: snip.Round1State | None = None
    round1: dict = dc_field(default_factory=dict)
    round2: dict = dc_field(default_factory=dict)
    deadline: float = 0.0
    started: bool = False
    veto: bool = False


@dataclass
class _Generation:
    cfg: VerifierConfig
    batch_seed: bytes


class Server:
    """One aggregation server.

    ``snapshot`` is a path (or None to keep state in memory only). Set
    ``tamper_sigma`` to a callable to simulate a misbehaving server that
    alters its round-2 share.
    """

    KEEP_GENERATIONS = 4

    def __init__(self, cfg: DeploymentConfig, server_id: int, rng: Rng | None = None,
                 snapshot=None):
        if not 0 <= server_id < cfg.servers:
            raise ConfigurationError(f"server id {server_id} out of range")
        self.cfg = cfg
        self.id = server_id
        self.rng = rng or Rng()
        self.leader = server_id == cfg.leader
        self.log = SnapshotLog(snapshot, cfg)
        self.acc, self.verdicts = self.log.load()
        self.sessions: "OrderedDict[bytes, _Session]" = OrderedDict()
        self.queue: list[bytes] = []
        self.generations: dict[int, _Generation] = {}
        self.current_gen: int | None = None
        self.publish_waiters: list = []
        self.publish_parts: dict[int, AccPublish] = {}
        self.tamper_sigma: Callable[[int], int] | None = None
        self.validation = True  # False accepts everything (negative control only)
        self.now = 0.0
        self.stats = {"accepted": 0, "rejected": 0, "timeouts": 0, "duplicates": 0}

    # -- helpers

    @property
    def followers(self) -> list[int]:
        return [i for i in range(self.cfg.servers) if i != self.id]

    def _to_followers(self, msg: Message):
        return [(("server", i), msg) for i in self.followers]

    def _leader_addr(self):
        return ("server", self.cfg.leader)

    def _batch_coeffs(self, gen: _Generation, nonce: bytes) -> list[int]:
        key = hashlib.sha256(gen.batch_seed + nonce).digest()[:16]
        return prg_expand(self.cfg.field, key, len(self.cfg.circuit.checks))

    def _install(self, generation: int, r: int, seed: bytes) -> None:
        q = self.cfg.rotation if self.leader else None
        vcfg = VerifierConfig(self.cfg.field, self.cfg.circuit.M, r, q, generation)
        self.generations[generation] = _Generation(vcfg, seed)
        self.current_gen = generation
        for old in [g for g in self.generations if g <= generation - self.KEEP_GENERATIONS]:
            del self.generations[old]

    def _rotate(self) -> list:
        gen = 0 if self.current_gen is None else self.current_gen + 1
        r = snip.sample_r(self.cfg.field, self.cfg.circuit.M, self.rng)
        seed = self.rng.key()
        self._install(gen, r, seed)
        log.debug("server %d: rotated to generation %d", self.id, gen)
        return self._to_followers(Rotate(gen, r, seed))

    def start(self, now: float = 0.0) -> list:
        """Initial output: the leader announces its first verifier configuration."""
        self.now = now
        if self.leader:
            return self._rotate()
        return []

    def peer_connected(self, server_id: int) -> list:
        """Bring a (re)connected follower up to date."""
        if not self.leader or self.current_gen is None:
            return []
        gen = self.generations[self.current_gen]
        out = [(("server", server_id), Rotate(self.current_gen, gen.cfg.r, gen.batch_seed))]
        out += [(("server", server_id), Verdict(n, True)) for n, ok in self.verdicts.items() if ok]
        return out

    def resume(self) -> list:
        """After a restart: re-announce a fresh r and replay accepted verdicts."""
        out = self.start(self.now)
        if self.leader:
            for nonce, ok in self.verdicts.items():
                if ok:
                    out += self._to_followers(Verdict(nonce, True))
        return out

    # -- entry points

    def handle(self, src, msg: Message, now: float | None = None) -> list:
        if now is not None:
            self.now = now
        kind = src[0] if isinstance(src, tuple) else "client"
        try:
            if isinstance(msg, Upload):
                return self._on_upload(src, msg)
            if kind == "server" or kind == "publisher":
                return self._on_peer(src, msg)
        except PrivaggError as exc:
            log.warning("server %d: dropped %s from %s: %s", self.id, type(msg).__name__, src, exc)
            return []
        if isinstance(msg, PublishRequest):
            return self._on_publish_request(src)
        log.warning("server %d: unexpected %s from %s", self.id, type(msg).__name__, src)
        return []

    def tick(self, now: float) -> list:
        self.now = now
        if not self.leader:
            return []
        out = []
        for nonce, sess in list(self.sessions.items()):
            if sess.started and now >= sess.deadline:
                log.info("server %d: session %s timed out", self.id, nonce.hex()[:8])
                self.stats["timeouts"] += 1
                out += self._finalize(sess, False)
        out += self._pump()
        return out

    def _on_peer(self, src, msg):
        if isinstance(msg, PublishRequest):
            return self._on_publish_request(src)
        if self.leader:
            return self._leader_peer(src, msg)
        return self._follower_peer(src, msg)

    def _on_upload(self, src, msg: Upload) -> list:
        nonce = msg.nonce
        if nonce in self.verdicts or nonce in self.sessions and self.sessions[nonce].upload:
            self.stats["duplicates"] += 1
            return [(src, Verdict(nonce, False))] if self.leader else []
        sess = self.sessions.get(nonce)
        if sess is None:
            sess = self.sessions[nonce] = _Session(nonce)
        sess.upload = msg
        sess.client = src
        if self.leader:
            self.queue.append(nonce)
            return self._pump()
        if sess.generation is not None:
            return self._follower_round1(sess)
        return []

    # -- leader

    def _in_flight(self) -> int:
        return sum(1 for s in self.sessions.values() if s.started)

    def _pump(self) -> list:
        out = []
        while self.queue and self._in_flight() < self.cfg.window:
            nonce = self.queue.pop(0)
            sess = self.sessions.get(nonce)
            if sess is not None:
                out += self._leader_start(sess)
        if (self.publish_waiters and not self.publish_parts and not self.queue
                and not self._in_flight()):
            out += self._begin_publish()
        return out

    def _leader_start(self, sess: _Session) -> list:
        out = []
        if self.current_gen is None or self.generations[self.current_gen].cfg.exhausted:
            out += self._rotate()
        if not self.validation:
            sess.started = True
            return out + self._finalize(sess, True)
        gen = self.generations[self.current_gen]
        sess.generation = self.current_gen
        sess.started = True
        sess.deadline = self.now + self.cfg.timeout
        try:
            sess.state = snip.verifier_round1(gen.cfg, self.cfg.circuit, sess.upload.share,
                                              sess.upload.proof, const_holder=(self.id == 0))
        except PrivaggError as exc:
            log.info("server %d: cannot verify %s: %s", self.id, sess.nonce.hex()[:8], exc)
            return out + self._finalize(sess, False)
        return out + self._to_followers(Start(sess.nonce, sess.generation))

    def _leader_peer(self, src, msg) -> list:
        sid = src[1]
        sess = self.sessions.get(getattr(msg, "nonce", b""))
        if isinstance(msg, AccPublish):
            return self._on_acc_publish(sid, msg)
        if sess is None or not sess.started:
            return []
        if isinstance(msg, Verdict) and not msg.accept:
            return self._finalize(sess, False)  # follower could not verify its share
        if isinstance(msg, Round1) and sess.state is not None:
            sess.round1[sid] = (msg.d_share, msg.e_share)
            if len(sess.round1) == len(self.followers):
                p = self.cfg.field.modulus
                d = (sess.state.d_share + sum(v[0] for v in sess.round1.values())) % p
                e = (sess.state.e_share + sum(v[1] for v in sess.round1.values())) % p
                sess.round2[self.id] = self._round2(sess, d, e)
                return self._to_followers(DeBroadcast(sess.nonce, d, e))
            return []
        if isinstance(msg, Round2) and len(sess.round1) == len(self.followers):
            sess.round2[sid] = (msg.sigma_share, msg.batch_share)
            if len(sess.round2) == self.cfg.servers:
                ok = snip.decide(self.cfg.field, [v[0] for v in sess.round2.values()],
                                 [v[1] for v in sess.round2.values()], self.cfg.servers)
                return self._finalize(sess, ok)
        return []

    def _round2(self, sess: _Session, d: int, e: int) -> tuple[int, int]:
        gen = self.generations[sess.generation]
        sigma, batch = snip.verifier_round2(self.cfg.field, sess.state, d, e, self.cfg.servers,
                                            self._batch_coeffs(gen, sess.nonce))
        if self.tamper_sigma is not None:
            sigma = self.tamper_sigma(sigma) % self.cfg.field.modulus
        return sigma, batch

    def _finalize(self, sess: _Session, accept: bool) -> list:
        nonce = sess.nonce
        self.sessions.pop(nonce, None)
        if nonce in self.queue:
            self.queue.remove(nonce)
        if accept:
            server_aggregate(self.acc, self.cfg.field, self.cfg.kind, sess.upload.share, nonce)
            self.stats["accepted"] += 1
        else:
            self.stats["rejected"] += 1
        self.verdicts[nonce] = accept
        self.log.append(nonce, accept, self.acc)
        verdict = Verdict(nonce, accept)
        out = self._to_followers(verdict)
        if sess.client is not None:
            out.append((sess.client, verdict))
        return out + self._pump()

    # -- followers

    def _follower_peer(self, src, msg) -> list:
        if src != self._leader_addr():
            return []
        if isinstance(msg, Rotate):
            self._install(msg.generation, msg.r, msg.batch_seed)
            return []
        nonce = getattr(msg, "nonce", None)
        if isinstance(msg, Verdict):
            return self._follower_verdict(msg)
        sess = self.sessions.get(nonce)
        if isinstance(msg, Start):
            if nonce in self.verdicts:
                return [(self._leader_addr(), Verdict(nonce, False))]
            if sess is None:
                sess = self.sessions[nonce] = _Session(nonce)
            sess.generation = msg.generation
            if sess.upload is not None:
                return self._follower_round1(sess)
            return []
        if isinstance(msg, DeBroadcast) and sess is not None and sess.state is not None:
            sigma, batch = self._round2(sess, msg.d, msg.e)
            return [(self._leader_addr(), Round2(nonce, sigma, batch))]
        return []

    def _follower_round1(self, sess: _Session) -> list:
        gen = self.generations.get(sess.generation)
        try:
            if gen is None:
                raise ConfigurationError(f"unknown verifier generation {sess.generation}")
            sess.state = snip.verifier_round1(gen.cfg, self.cfg.circuit, sess.upload.share,
                                              sess.upload.proof, const_holder=(self.id == 0))
        except PrivaggError as exc:
            log.info("server %d: cannot verify %s: %s", self.id, sess.nonce.hex()[:8], exc)
            return [(self._leader_addr(), Verdict(sess.nonce, False))]
        return [(self._leader_addr(), Round1(sess.nonce, sess.state.d_share, sess.state.e_share))]

    def _follower_verdict(self, msg: Verdict) -> list:
        nonce = msg.nonce
        if nonce in self.verdicts:
            return []
        sess = self.sessions.pop(nonce, None)
        if msg.accept:
            if sess is None or sess.upload is None:
                log.error("server %d: accept for unknown submission %s", self.id, nonce.hex()[:8])
                return []
            server_aggregate(self.acc, self.cfg.field, self.cfg.kind, sess.upload.share, nonce)
            self.stats["accepted"] += 1
        else:
            self.stats["rejected"] += 1
        self.verdicts[nonce] = msg.accept
        self.log.append(nonce, msg.accept, self.acc)
        return []

    # -- publishing

    def request_publish(self, requester) -> list:
        """Leader: wait for in-flight sessions, then gather every accumulator for ``requester``."""
        if not self.leader:
            raise ConfigurationError("only the leader coordinates publishing")
        self.publish_waiters.append(requester)
        return self._pump()

    def _on_publish_request(self, src) -> list:
        if self.leader and src != self._leader_addr():
            return self.request_publish(src)
        return [(src, self.acc.to_message())]

    def _begin_publish(self) -> list:
        self.publish_parts = {self.id: self.acc.to_message()}
        return self._to_followers(PublishRequest())

    def _on_acc_publish(self, sid: int, msg: AccPublish) -> list:
        if not self.publish_waiters:
            return []
        self.publish_parts[sid] = msg
        if len(self.publish_parts) < self.cfg.servers:
            return []
        parts = [self.publish_parts[i] for i in range(self.cfg.servers)]
        out = [(w, m) for w in self.publish_waiters for m in parts]
        self.publish_waiters = []
        self.publish_parts = {}
        return out


def from_server(server: Server, outputs: list) -> list:
    """Tag a server's outputs with their source address."""
    return [(("server", server.id), dst, msg) for dst, msg in outputs]


def deliver_all(servers: Sequence[Server], pending: list, *, now: float = 0.0,
                drop: Callable[[object, object, Message], bool] | None = None) -> list:
    """Deliver ``(src, dst, msg)`` triples between in-process servers until quiet.

    Returns the triples addressed to clients or publishers.
    """
    pending = list(pending)
    to_clients = []
    while pending:
        src, dst, msg = pending.pop(0)
        if dst[0] != "server":
            to_clients.append((src, dst, msg))
            continue
        if drop is not None and drop(src, dst, msg):
            continue
        target = servers[dst[1]]
        pending += from_server(target, target.handle(src, msg, now))
    return to_clients
