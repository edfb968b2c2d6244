"""Instant-messaging demo: framed TCP transport, handshake driver, AEAD chat.

Frame: ``length(4, big-endian) || kind(1) || body`` where length = 1 + len(body).
Chat bodies are ``sequence(8) || AES-256-GCM(key, nonce, text, aad=sequence)``
with ``nonce = direction(1) || 000000 || sequence(8)``.
"""

from __future__ import annotations

import datetime as dt
import logging
import os
import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable

from . import handshake, messages
from .handshake import Credential, SessionTable
from .messages import DEFAULT_FRESHNESS, MessageError
from .suite import AeadError, Suite, aead_open, aead_seal, hashed_id8

log = logging.getLogger(__name__)

KIND_HANDSHAKE = 0x01
KIND_CHAT = 0x02
MAX_FRAME = 16 * 1024 * 1024

DIRECTION_INITIATOR = 0x01
DIRECTION_RESPONDER = 0x02


class FrameError(Exception):
    pass


class ChannelError(Exception):
    pass


def encode_frame(kind: int, body: bytes) -> bytes:
    if 1 + len(body) > MAX_FRAME:
        raise FrameError(f"frame of {1 + len(body)} bytes exceeds {MAX_FRAME}")
    return struct.pack(">IB", 1 + len(body), kind) + body


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise EOFError("connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(stream: BinaryIO) -> tuple[int, bytes]:
    (length,) = struct.unpack(">I", _read_exact(stream, 4))
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    data = _read_exact(stream, length)
    return data[0], data[1:]


class Connection:
    """A socket speaking frames, optionally mirroring every frame to a transcript."""

    def __init__(self, sock: socket.socket, transcript: BinaryIO | None = None):
        self.sock = sock
        self.reader = sock.makefile("rb")
        self.transcript = transcript
        self._send_lock = threading.Lock()
        self._log_lock = threading.Lock()

    def _record(self, frame: bytes) -> None:
        if self.transcript is not None:
            with self._log_lock:
                self.transcript.write(frame)
                self.transcript.flush()

    def send(self, kind: int, body: bytes) -> None:
        frame = encode_frame(kind, body)
        with self._send_lock:
            self.sock.sendall(frame)
        self._record(frame)

    def recv(self, expect: int | None = None) -> tuple[int, bytes]:
        kind, body = read_frame(self.reader)
        self._record(encode_frame(kind, body))
        if expect is not None and kind != expect:
            raise FrameError(f"expected frame kind {expect}, got {kind}")
        return kind, body

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.reader.close()
        self.sock.close()


def _nonce(direction: int, sequence: int) -> bytes:
    return bytes([direction, 0, 0, 0]) + sequence.to_bytes(8, "big")


@dataclass
class SecureChannel:
    """AEAD chat over an established connection. Any failure ends the session."""

    conn: Connection
    key: bytes = field(repr=False)
    initiator: bool
    peer: str = ""
    _next_send: int = 0
    _last_recv: int = -1

    @property
    def fingerprint(self) -> str:
        return hashed_id8(self.key).hex()

    def seal(self, text: str) -> bytes:
        direction = DIRECTION_INITIATOR if self.initiator else DIRECTION_RESPONDER
        seq = self._next_send
        self._next_send += 1
        header = seq.to_bytes(8, "big")
        return header + aead_seal(self.key, _nonce(direction, seq), text.encode("utf-8"), header)

    def open(self, body: bytes) -> str:
        direction = DIRECTION_RESPONDER if self.initiator else DIRECTION_INITIATOR
        if len(body) < 8 + 16:
            raise ChannelError("chat envelope too short")
        seq = int.from_bytes(body[:8], "big")
        if seq <= self._last_recv:
            raise ChannelError(f"replayed or reordered message (sequence {seq} <= {self._last_recv})")
        try:
            text = aead_open(self.key, _nonce(direction, seq), body[8:], body[:8]).decode("utf-8")
        except (AeadError, UnicodeDecodeError) as exc:
            raise ChannelError(f"chat message rejected: {exc}") from None
        self._last_recv = seq
        return text

    def send_text(self, text: str) -> None:
        self.conn.send(KIND_CHAT, self.seal(text))

    def recv_text(self) -> str | None:
        """Next message, or None when the peer closed the connection."""
        try:
            _, body = self.conn.recv(KIND_CHAT)
        except EOFError:
            return None
        return self.open(body)

    def close(self) -> None:
        self.conn.close()


# -- handshake over the wire --------------------------------------------------------

@dataclass
class PeerConfig:
    credential: Credential
    suite: Suite
    ca_public: bytes
    freshness_window: dt.timedelta = DEFAULT_FRESHNESS
    clock: Callable[[], dt.datetime] = lambda: dt.datetime.now(dt.timezone.utc)

    @classmethod
    def with_env(cls, credential: Credential, suite: Suite, ca_public: bytes) -> PeerConfig:
        window = os.environ.get("PQKEX_FRESHNESS_WINDOW")
        return cls(credential, suite, ca_public,
                   dt.timedelta(seconds=float(window)) if window else DEFAULT_FRESHNESS)


def table_from_env() -> SessionTable:
    capacity = os.environ.get("PQKEX_TABLE_CAPACITY")
    return SessionTable(capacity=int(capacity)) if capacity else SessionTable()


def initiate(conn: Connection, cfg: PeerConfig) -> SecureChannel:
    session, r1 = handshake.initiator_start(cfg.credential, cfg.suite, cfg.clock())
    conn.send(KIND_HANDSHAKE, r1.encoded)
    _, raw = conn.recv(KIND_HANDSHAKE)
    r2 = messages.parse(raw)
    r3, key = handshake.initiator_on_response(session, r2, cfg.ca_public, cfg.clock(), cfg.freshness_window)
    conn.send(KIND_HANDSHAKE, r3.encoded)
    return SecureChannel(conn, key, initiator=True, peer=_peer_name(r2))


def _peer_name(msg) -> str:
    return next((c.subject for c in msg.certificates if not c.self_signed), "?")


def respond(conn: Connection, cfg: PeerConfig, table: SessionTable) -> SecureChannel:
    _, raw = conn.recv(KIND_HANDSHAKE)
    r1 = messages.parse(raw)
    r2 = handshake.responder_on_request(r1, cfg.credential, table, cfg.ca_public, cfg.clock(),
                                        cfg.freshness_window)
    conn.send(KIND_HANDSHAKE, r2.encoded)
    _, r3 = conn.recv(KIND_HANDSHAKE)
    key = handshake.responder_on_ack(r3, cfg.credential, table, cfg.ca_public, cfg.clock(),
                                     cfg.freshness_window)
    return SecureChannel(conn, key, initiator=False, peer=_peer_name(r1))


def connect(address: tuple[str, int], cfg: PeerConfig, timeout: float | None = 30.0,
            transcript: BinaryIO | None = None) -> SecureChannel:
    sock = socket.create_connection(address, timeout=timeout)
    conn = Connection(sock, transcript)
    try:
        channel = initiate(conn, cfg)
    except BaseException:
        conn.close()
        raise
    sock.settimeout(None)
    return channel


SessionHandler = Callable[[SecureChannel], None]


def echo_handler(channel: SecureChannel) -> None:
    """Send every received message straight back (used for tests and smoke runs)."""
    while (text := channel.recv_text()) is not None:
        channel.send_text(text)


class Server:
    """Accept loop; each connection gets its own thread and shares one session table."""

    def __init__(self, address: tuple[str, int], cfg: PeerConfig, handler: SessionHandler = echo_handler,
                 table: SessionTable | None = None, transcript: BinaryIO | None = None,
                 handshake_timeout: float = 30.0):
        self.cfg = cfg
        self.handler = handler
        self.table = table if table is not None else SessionTable()
        self.transcript = transcript
        self.handshake_timeout = handshake_timeout
        self.sock = socket.create_server(address)
        self.errors: list[Exception] = []
        self.fingerprints: list[str] = []
        self._closed = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def serve_forever(self) -> None:
        while not self._closed.is_set():
            try:
                sock, peer = self.sock.accept()
            except OSError:
                break
            t = threading.Thread(target=self._handle, args=(sock, peer), daemon=True)
            self._threads.append(t)
            t.start()

    def _handle(self, sock: socket.socket, peer) -> None:
        sock.settimeout(self.handshake_timeout)
        conn = Connection(sock, self.transcript)
        try:
            channel = respond(conn, self.cfg, self.table)
            sock.settimeout(None)
            self.fingerprints.append(channel.fingerprint)
            log.info("session with %s (%s:%s) established, key %s", channel.peer, *peer[:2], channel.fingerprint)
            self.handler(channel)
        except (MessageError, FrameError, ChannelError, EOFError, OSError) as exc:
            # no error message goes on the wire; the connection is just dropped
            log.warning("connection from %s:%s dropped: %s: %s", *peer[:2], type(exc).__name__, exc)
            self.errors.append(exc)
        finally:
            conn.close()

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def close(self) -> None:
        self._closed.set()
        self.sock.close()
        for t in self._threads:
            t.join(timeout=5)


def open_transcript(path: str | Path | None) -> BinaryIO | None:
    return open(path, "ab") if path else None
