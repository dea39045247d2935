"""Framed binary wire format, channels, and the snapshot file.

Frame layout::

    length (4, big endian) | type (1) | epoch (4, big endian) | payload [| tag (32)]

``length`` counts the payload only. When a MAC key is configured, an
HMAC-SHA256 tag over header and payload follows the payload. Field
elements inside payloads are fixed-width little endian; every other
integer is big endian.
"""

from __future__ import annotations

import hashlib
import hmac
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, ClassVar

from privagg.errors import (
    BadMac,
    ChannelTimeout,
    ConnectionClosed,
    LengthOverflow,
    MalformedShare,
    SnapshotCorrupt,
    Truncated,
    UnknownType,
    WireError,
)
from privagg.field import Field
from privagg.sharing import ShareVector
from privagg.snip import SnipProofShare

HEADER = struct.Struct(">IBI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 1 << 24
TAG_SIZE = 32
NONCE_SIZE = 16
DIGEST_SIZE = 32
SNAPSHOT_MAGIC = b"PRIV1"


class MsgType:
    UPLOAD = 0x01
    ROUND1 = 0x02
    DE_BCAST = 0x03
    ROUND2 = 0x04
    VERDICT = 0x05
    ACC_PUBLISH = 0x06
    ROTATE = 0x07
    START = 0x08
    PUBLISH_REQ = 0x09
    HELLO = 0x0A


def _take_elems(field: Field, payload: bytes, offset: int, count: int) -> tuple[list[int], int]:
    end = offset + count * field.width
    if end > len(payload):
        raise Truncated("payload too short")
    try:
        return field.vec_from_bytes(payload[offset:end]), end
    except ValueError as exc:
        raise WireError(str(exc)) from exc


def _nonce(payload: bytes) -> bytes:
    if len(payload) < NONCE_SIZE:
        raise Truncated("payload too short for a nonce")
    return bytes(payload[:NONCE_SIZE])


def _expect_end(payload: bytes, end: int) -> None:
    if end != len(payload):
        raise WireError(f"{len(payload) - end} trailing payload bytes")


class Message:
    msg_type: ClassVar[int]

    def payload(self, field: Field) -> bytes:
        raise NotImplementedError

    @classmethod
    def parse(cls, field: Field, payload: bytes) -> "Message":
        raise NotImplementedError


@dataclass(frozen=True)
class Upload(Message):
    nonce: bytes
    share: ShareVector
    proof: SnipProofShare
    msg_type: ClassVar[int] = MsgType.UPLOAD

    def payload(self, field):
        return self.nonce + self.share.to_bytes(field) + self.proof.to_bytes(field)

    @classmethod
    def parse(cls, field, payload):
        nonce = _nonce(payload)
        try:
            share, end = ShareVector.from_bytes(field, payload, NONCE_SIZE)
            proof, end = SnipProofShare.from_bytes(field, payload, end)
        except MalformedShare as exc:
            raise WireError(f"malformed upload: {exc}") from exc
        _expect_end(payload, end)
        return cls(nonce, share, proof)


class _PairMessage(Message):
    """A nonce followed by two field elements."""

    def _pair(self) -> tuple[int, int]:
        raise NotImplementedError

    def payload(self, field):
        return self.nonce + field.vec_to_bytes(self._pair())

    @classmethod
    def parse(cls, field, payload):
        nonce = _nonce(payload)
        (a, b), end = _take_elems(field, payload, NONCE_SIZE, 2)
        _expect_end(payload, end)
        return cls(nonce, a, b)


@dataclass(frozen=True)
class Round1(_PairMessage):
    nonce: bytes
    d_share: int
    e_share: int
    msg_type: ClassVar[int] = MsgType.ROUND1

    def _pair(self):
        return self.d_share, self.e_share


@dataclass(frozen=True)
class DeBroadcast(_PairMessage):
    nonce: bytes
    d: int
    e: int
    msg_type: ClassVar[int] = MsgType.DE_BCAST

    def _pair(self):
        return self.d, self.e


@dataclass(frozen=True)
class Round2(_PairMessage):
    nonce: bytes
    sigma_share: int
    batch_share: int
    msg_type: ClassVar[int] = MsgType.ROUND2

    def _pair(self):
        return self.sigma_share, self.batch_share


@dataclass(frozen=True)
class Verdict(Message):
    nonce: bytes
    accept: bool
    msg_type: ClassVar[int] = MsgType.VERDICT

    def payload(self, field):
        return self.nonce + (b"\x01" if self.accept else b"\x00")

    @classmethod
    def parse(cls, field, payload):
        if len(payload) != NONCE_SIZE + 1:
            raise (Truncated if len(payload) < NONCE_SIZE + 1 else WireError)(
                "verdict payload must be 17 bytes")
        if payload[NONCE_SIZE] not in (0, 1):
            raise WireError("verdict flag must be 0 or 1")
        return cls(bytes(payload[:NONCE_SIZE]), payload[NONCE_SIZE] == 1)


@dataclass(frozen=True)
class AccPublish(Message):
    values: tuple[int, ...]
    count: int
    digest: bytes
    msg_type: ClassVar[int] = MsgType.ACC_PUBLISH

    def payload(self, field):
        return field.vec_to_bytes(self.values) + struct.pack(">Q", self.count) + self.digest

    @classmethod
    def parse(cls, field, payload):
        body = len(payload) - 8 - DIGEST_SIZE
        if body < 0:
            raise Truncated("accumulator payload too short")
        if body % field.width:
            raise WireError("accumulator body is not a whole number of elements")
        values, end = _take_elems(field, payload, 0, body // field.width)
        (count,) = struct.unpack(">Q", payload[end:end + 8])
        return cls(tuple(values), count, bytes(payload[end + 8:]))


@dataclass(frozen=True)
class Rotate(Message):
    """Leader announces a new identity-test point and batch-coefficient seed."""

    generation: int
    r: int
    batch_seed: bytes
    msg_type: ClassVar[int] = MsgType.ROTATE

    def payload(self, field):
        return struct.pack(">I", self.generation) + field.to_bytes(self.r) + self.batch_seed

    @classmethod
    def parse(cls, field, payload):
        if len(payload) < 4:
            raise Truncated("rotate payload too short")
        (gen,) = struct.unpack(">I", payload[:4])
        (r,), end = _take_elems(field, payload, 4, 1)
        if len(payload) - end != 16:
            raise (Truncated if len(payload) - end < 16 else WireError)("bad batch seed")
        return cls(gen, r, bytes(payload[end:]))


@dataclass(frozen=True)
class Start(Message):
    """Leader tells followers to verify ``nonce`` under verifier generation ``generation``."""

    nonce: bytes
    generation: int
    msg_type: ClassVar[int] = MsgType.START

    def payload(self, field):
        return self.nonce + struct.pack(">I", self.generation)

    @classmethod
    def parse(cls, field, payload):
        if len(payload) != NONCE_SIZE + 4:
            raise (Truncated if len(payload) < NONCE_SIZE + 4 else WireError)(
                "start payload must be 20 bytes")
        (gen,) = struct.unpack(">I", payload[NONCE_SIZE:])
        return cls(bytes(payload[:NONCE_SIZE]), gen)


@dataclass(frozen=True)
class PublishRequest(Message):
    msg_type: ClassVar[int] = MsgType.PUBLISH_REQ

    def payload(self, field):
        return b""

    @classmethod
    def parse(cls, field, payload):
        _expect_end(payload, 0)
        return cls()


ROLE_CLIENT, ROLE_SERVER, ROLE_PUBLISHER = 0, 1, 2


@dataclass(frozen=True)
class Hello(Message):
    role: int
    sender: int
    config_digest: bytes
    msg_type: ClassVar[int] = MsgType.HELLO

    def payload(self, field):
        return struct.pack(">BI", self.role, self.sender) + self.config_digest

    @classmethod
    def parse(cls, field, payload):
        if len(payload) != 5 + DIGEST_SIZE:
            raise (Truncated if len(payload) < 5 + DIGEST_SIZE else WireError)(
                "hello payload must be 37 bytes")
        role, sender = struct.unpack(">BI", payload[:5])
        return cls(role, sender, bytes(payload[5:]))


MESSAGE_TYPES: dict[int, type[Message]] = {
    cls.msg_type: cls for cls in (Upload, Round1, DeBroadcast, Round2, Verdict, AccPublish,
                                  Rotate, Start, PublishRequest, Hello)
}


def _tag(mac_key: bytes, data: bytes) -> bytes:
    return hmac.new(mac_key, data, hashlib.sha256).digest()


def encode_frame(msg: Message, field: Field, epoch: int, mac_key: bytes | None = None) -> bytes:
    payload = msg.payload(field)
    if len(payload) > MAX_PAYLOAD:
        raise LengthOverflow(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    frame = HEADER.pack(len(payload), msg.msg_type, epoch) + payload
    if mac_key is not None:
        frame += _tag(mac_key, frame)
    return frame


@dataclass(frozen=True)
class Frame:
    msg_type: int
    epoch: int
    payload: bytes


def frame_size(header: bytes, mac_key: bytes | None = None) -> int:
    """Total frame size given its first HEADER_SIZE bytes."""
    length, msg_type, _ = HEADER.unpack(header[:HEADER_SIZE])
    if length > MAX_PAYLOAD:
        raise LengthOverflow(f"declared payload {length} exceeds {MAX_PAYLOAD}")
    if msg_type not in MESSAGE_TYPES:
        raise UnknownType(f"unknown message type 0x{msg_type:02x}")
    return HEADER_SIZE + length + (TAG_SIZE if mac_key is not None else 0)


def split_frame(buf: bytes, mac_key: bytes | None = None) -> tuple[Frame, int] | None:
    """Parse one frame from the start of ``buf``; None if more bytes are needed."""
    if len(buf) < HEADER_SIZE:
        return None
    total = frame_size(buf, mac_key)
    if len(buf) < total:
        return None
    length, msg_type, epoch = HEADER.unpack(buf[:HEADER_SIZE])
    body_end = HEADER_SIZE + length
    if mac_key is not None:
        if not hmac.compare_digest(_tag(mac_key, bytes(buf[:body_end])), bytes(buf[body_end:total])):
            raise BadMac("frame authentication failed")
    return Frame(msg_type, epoch, bytes(buf[HEADER_SIZE:body_end])), total


def parse_frame(frame: Frame, field: Field) -> Message:
    return MESSAGE_TYPES[frame.msg_type].parse(field, frame.payload)


def decode_frame(data: bytes, field: Field, mac_key: bytes | None = None) -> tuple[Message, int]:
    """Decode exactly one frame; returns (message, epoch)."""
    if len(data) < HEADER_SIZE:
        raise Truncated("shorter than a frame header")
    got = split_frame(data, mac_key)
    if got is None:
        raise Truncated("frame shorter than its declared length")
    frame, used = got
    if used != len(data):
        raise WireError(f"{len(data) - used} bytes after the frame")
    return parse_frame(frame, field), frame.epoch


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self, mac_key: bytes | None = None):
        self.mac_key = mac_key
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        out = []
        while True:
            got = split_frame(self._buf, self.mac_key)
            if got is None:
                return out
            frame, used = got
            del self._buf[:used]
            out.append(frame)

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------- channels


class Channel:
    """Ordered, reliable frame pipe between two endpoints."""

    def send(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv(self, timeout: float | None = None) -> bytes:
        """Next whole frame; raises ChannelTimeout or ConnectionClosed."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


_CLOSED = object()


class InProcessChannel(Channel):
    """One end of an in-memory channel pair with optional scripted faults.

    ``script(frame_index, frame)`` is consulted for each outgoing frame and
    returns ``"deliver"``, ``"drop"``, ``"hold"`` (delay until the next
    frame has been sent, i.e. swap order), or a float delay in seconds.
    """

    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue",
                 script: Callable[[int, bytes], object] | None = None):
        self._inbox = inbox
        self._outbox = outbox
        self.script = script
        self._sent = 0
        self._held: list[bytes] = []
        self._closed = False

    @classmethod
    def pair(cls, script_a=None, script_b=None) -> tuple["InProcessChannel", "InProcessChannel"]:
        qa, qb = queue.Queue(), queue.Queue()
        return cls(qa, qb, script_a), cls(qb, qa, script_b)

    def send(self, frame: bytes) -> None:
        if self._closed:
            raise ConnectionClosed("channel closed")
        action = self.script(self._sent, frame) if self.script else "deliver"
        self._sent += 1
        if action == "drop":
            return
        if action == "hold":
            self._held.append(frame)
            return
        if isinstance(action, (int, float)) and not isinstance(action, bool) and action > 0:
            timer = threading.Timer(action, self._outbox.put, args=(frame,))
            timer.daemon = True
            timer.start()
        else:
            self._outbox.put(frame)
        while self._held:
            self._outbox.put(self._held.pop(0))

    def recv(self, timeout: float | None = None) -> bytes:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelTimeout("no frame before timeout") from None
        if item is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ConnectionClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, mac_key: bytes | None = None):
        self.sock = sock
        self.reader = FrameReader(mac_key)
        self.mac_key = mac_key
        self._frames: list[bytes] = []
        self._send_lock = threading.Lock()

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0,
                mac_key: bytes | None = None) -> "TcpChannel":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock, mac_key)

    def send(self, frame: bytes) -> None:
        try:
            with self._send_lock:
                self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionClosed(str(exc)) from exc

    def _rebuild(self, frame: Frame) -> bytes:
        raw = HEADER.pack(len(frame.payload), frame.msg_type, frame.epoch) + frame.payload
        return raw

    def recv(self, timeout: float | None = None) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._frames:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                raise ChannelTimeout("no frame before timeout")
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(1 << 16)
            except socket.timeout:
                raise ChannelTimeout("no frame before timeout") from None
            except OSError as exc:
                raise ConnectionClosed(str(exc)) from exc
            if not data:
                raise ConnectionClosed("peer closed the connection")
            for fr in self.reader.feed(data):
                raw = self._rebuild(fr)
                if self.mac_key is not None:
                    raw += _tag(self.mac_key, raw)
                self._frames.append(raw)
        return self._frames.pop(0)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


# ---------------------------------------------------------------- snapshots


def snapshot_bytes(frames: list[bytes]) -> bytes:
    return SNAPSHOT_MAGIC + b"".join(frames)


def read_snapshot(data: bytes, field: Field, epoch: int | None = None) -> list[Message]:
    """Parse a snapshot file into its messages.

    A trailing partial frame (interrupted write) is ignored; anything else
    that does not parse raises :class:`SnapshotCorrupt`.
    """
    if not data.startswith(SNAPSHOT_MAGIC):
        raise SnapshotCorrupt("bad snapshot magic")
    pos = len(SNAPSHOT_MAGIC)
    out = []
    while pos < len(data):
        try:
            got = split_frame(data[pos:])
        except WireError as exc:
            raise SnapshotCorrupt(f"bad frame at offset {pos}: {exc}") from exc
        if got is None:
            break
        frame, used = got
        if epoch is not None and frame.epoch != epoch:
            raise SnapshotCorrupt(f"snapshot frame from epoch {frame.epoch}, expected {epoch}")
        try:
            out.append(parse_frame(frame, field))
        except WireError as exc:
            raise SnapshotCorrupt(f"bad record at offset {pos}: {exc}") from exc
        pos += used
    return out
