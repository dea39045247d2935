"""TCP deployment: a threaded driver around the sans-IO server, plus client helpers.

Followers dial the leader and keep that connection open; clients and
publishers connect to servers directly. The first frame on every
connection is a HELLO carrying the sender's role and the config digest,
which must match. One handler thread owns the :class:`Server` object;
reader threads only decode frames and queue them.
"""

from __future__ import annotations

import itertools
import logging
import queue
import socket
import threading
import time

from privagg.errors import ConfigurationError, PrivaggError, WireError
from privagg.protocol import DeploymentConfig, Server, client_submit, publish
from privagg.sharing import Rng
from privagg.transport import (
    ROLE_CLIENT,
    ROLE_PUBLISHER,
    ROLE_SERVER,
    AccPublish,
    FrameReader,
    Hello,
    PublishRequest,
    TcpChannel,
    Verdict,
    decode_frame,
    encode_frame,
    parse_frame,
)

log = logging.getLogger("privagg.net")


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ConfigurationError(f"address {text!r} needs host:port")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ConfigurationError(f"bad port in {text!r}") from None


class _Conn:
    def __init__(self, sock: socket.socket, cid: int):
        self.sock = sock
        self.id = cid
        self.peer = None
        self.lock = threading.Lock()
        self.alive = True

    def send(self, data: bytes) -> bool:
        try:
            with self.lock:
                self.sock.sendall(data)
            return True
        except OSError:
            self.alive = False
            return False

    def close(self):
        self.alive = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class NetServer:
    """Serve one server id over TCP until :meth:`stop`."""

    def __init__(self, cfg: DeploymentConfig, server_id: int, listen: str | None = None,
                 snapshot=None, rng: Rng | None = None, tick: float = 0.05):
        self.cfg = cfg
        self.server = Server(cfg, server_id, rng, snapshot)
        if listen is None:
            if not cfg.addresses:
                raise ConfigurationError("no listen address configured")
            listen = cfg.addresses[server_id]
        self.listen_addr = parse_address(listen)
        self.tick_interval = tick
        self.events: "queue.Queue" = queue.Queue()
        self.conns: dict[int, _Conn] = {}
        self.server_conns: dict[int, _Conn] = {}
        self._ids = itertools.count(1)
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.sock: socket.socket | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def start(self) -> "NetServer":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind(self.listen_addr)
        except OSError:
            sock.close()
            raise
        sock.listen(128)
        sock.settimeout(0.2)
        self.sock = sock
        self.server.start(time.monotonic())  # followers learn r when they connect
        self._spawn(self._accept_loop)
        self._spawn(self._handler_loop)
        if not self.server.leader:
            self._spawn(self._dial_leader_loop)
        log.info("server %d listening on %s:%d", self.server.id, *self.address)
        return self

    def _spawn(self, fn, *args):
        t = threading.Thread(target=fn, args=args, daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        if self.sock is not None:
            self.sock.close()
        for c in list(self.conns.values()):
            c.close()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout=2)

    def serve_forever(self) -> None:
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        finally:
            self.stop()

    # -- connections

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                s, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(None)
            self._register(s, None)

    def _register(self, s: socket.socket, peer) -> _Conn:
        conn = _Conn(s, next(self._ids))
        conn.peer = peer
        self.conns[conn.id] = conn
        self._spawn(self._read_loop, conn)
        return conn

    def _dial_leader_loop(self):
        host, port = parse_address(self.cfg.addresses[self.cfg.leader])
        leader = self.cfg.leader
        while not self._stop.is_set():
            conn = self.server_conns.get(leader)
            if conn is not None and conn.alive:
                time.sleep(0.1)
                continue
            try:
                s = socket.create_connection((host, port), timeout=1.0)
            except OSError:
                time.sleep(0.1)
                continue
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(None)
            conn = _Conn(s, next(self._ids))
            conn.peer = ("server", leader)
            hello = Hello(ROLE_SERVER, self.server.id, self.cfg.digest())
            if not conn.send(self._frame(hello)):
                continue
            self.conns[conn.id] = conn
            self.server_conns[leader] = conn
            self._spawn(self._read_loop, conn)
            log.info("server %d connected to leader", self.server.id)

    def _read_loop(self, conn: _Conn):
        reader = FrameReader(self.cfg.mac_key)
        try:
            while not self._stop.is_set():
                data = conn.sock.recv(1 << 16)
                if not data:
                    break
                for frame in reader.feed(data):
                    if frame.epoch != self.cfg.epoch:
                        log.warning("frame from epoch %d ignored", frame.epoch)
                        continue
                    try:
                        msg = parse_frame(frame, self.cfg.field)
                    except WireError as exc:
                        log.warning("undecodable frame from %s: %s", conn.peer, exc)
                        continue
                    if conn.peer is None:
                        if not self._hello(conn, msg):
                            return
                        continue
                    self.events.put((conn, msg))
        except (OSError, PrivaggError) as exc:
            log.info("connection %s closed: %s", conn.peer, exc)
        finally:
            conn.close()
            self.conns.pop(conn.id, None)

    def _hello(self, conn: _Conn, msg) -> bool:
        if not isinstance(msg, Hello) or msg.config_digest != self.cfg.digest():
            log.warning("rejecting connection: bad hello or config digest")
            return False
        if msg.role == ROLE_SERVER:
            if not 0 <= msg.sender < self.cfg.servers or msg.sender == self.server.id:
                return False
            conn.peer = ("server", msg.sender)
            self.server_conns[msg.sender] = conn
            self.events.put((conn, "connected"))
        elif msg.role == ROLE_PUBLISHER:
            conn.peer = ("publisher", conn.id)
        else:
            conn.peer = ("client", conn.id)
        return True

    # -- the single writer

    def _frame(self, msg) -> bytes:
        return encode_frame(msg, self.cfg.field, self.cfg.epoch, self.cfg.mac_key)

    def _route(self, outputs):
        for dst, msg in outputs:
            if dst[0] == "server":
                conn = self.server_conns.get(dst[1])
            else:
                conn = self.conns.get(dst[1])
            if conn is None or not conn.alive or not conn.send(self._frame(msg)):
                log.debug("server %d: no route to %s for %s", self.server.id, dst, type(msg).__name__)

    def _handler_loop(self):
        srv = self.server
        while not self._stop.is_set():
            try:
                conn, msg = self.events.get(timeout=self.tick_interval)
            except queue.Empty:
                conn = msg = None
            now = time.monotonic()
            try:
                if msg == "connected":
                    self._route(srv.peer_connected(conn.peer[1]))
                elif msg is not None:
                    self._route(srv.handle(conn.peer, msg, now))
                self._route(srv.tick(now))
            except Exception:  # keep serving; the error is in the log
                log.exception("server %d: handler error", srv.id)


# ---------------------------------------------------------------- clients


class Client:
    """Keeps one connection per server and submits values sequentially."""

    def __init__(self, cfg: DeploymentConfig, rng: Rng | None = None, timeout: float | None = None):
        if not cfg.addresses:
            raise ConfigurationError("config has no server addresses")
        self.cfg = cfg
        self.rng = rng or Rng()
        self.timeout = timeout if timeout is not None else cfg.timeout * 3
        self.channels: list[TcpChannel | None] = [None] * cfg.servers

    def _channel(self, i: int, role: int = ROLE_CLIENT) -> TcpChannel:
        ch = self.channels[i]
        if ch is None:
            host, port = parse_address(self.cfg.addresses[i])
            ch = TcpChannel.connect(host, port, self.timeout, self.cfg.mac_key)
            ch.send(self._frame(Hello(role, 0, self.cfg.digest())))
            self.channels[i] = ch
        return ch

    def _frame(self, msg) -> bytes:
        return encode_frame(msg, self.cfg.field, self.cfg.epoch, self.cfg.mac_key)

    def reset(self) -> None:
        for ch in self.channels:
            if ch is not None:
                ch.close()
        self.channels = [None] * self.cfg.servers

    def send_submission(self, sub, corrupt=None) -> bool:
        """Upload a prepared submission and wait for the leader's verdict.

        ``corrupt`` optionally maps a server id to a function applied to the
        encoded upload frame before it is sent (fault injection).
        """
        corrupt = corrupt or {}
        try:
            for i, up in enumerate(sub.uploads()):
                frame = self._frame(up)
                if i in corrupt:
                    frame = corrupt[i](frame)
                self._channel(i).send(frame)
            lead = self._channel(self.cfg.leader)
            deadline = time.monotonic() + self.timeout
            while True:
                raw = lead.recv(max(0.0, deadline - time.monotonic()))
                msg, _ = decode_frame(raw, self.cfg.field, self.cfg.mac_key)
                if isinstance(msg, Verdict) and msg.nonce == sub.nonce:
                    return msg.accept
        except (OSError, PrivaggError):
            self.reset()
            raise

    def submit(self, x) -> bool:
        return self.send_submission(client_submit(self.cfg, x, self.rng))

    def close(self) -> None:
        self.reset()


def fetch_accumulators(cfg: DeploymentConfig, timeout: float | None = None) -> list[AccPublish]:
    """Ask the leader to gather every server's accumulator."""
    host, port = parse_address(cfg.addresses[cfg.leader])
    timeout = timeout if timeout is not None else cfg.timeout * 3
    ch = TcpChannel.connect(host, port, timeout, cfg.mac_key)
    try:
        frame = lambda m: encode_frame(m, cfg.field, cfg.epoch, cfg.mac_key)  # noqa: E731
        ch.send(frame(Hello(ROLE_PUBLISHER, 0, cfg.digest())))
        ch.send(frame(PublishRequest()))
        parts = []
        deadline = time.monotonic() + timeout
        while len(parts) < cfg.servers:
            msg, _ = decode_frame(ch.recv(max(0.0, deadline - time.monotonic())), cfg.field,
                                  cfg.mac_key)
            if isinstance(msg, AccPublish):
                parts.append(msg)
        return parts
    finally:
        ch.close()


def publish_remote(cfg: DeploymentConfig, timeout: float | None = None):
    return publish(fetch_accumulators(cfg, timeout), cfg)
