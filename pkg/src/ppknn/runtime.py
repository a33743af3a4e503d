"""Two-party runtime: wire codec, transports, sessions and transcripts.

Wire format of one message (all integers big-endian)::

    version      1 byte   (0x01)
    tag          1 byte   (ProtocolTag)
    session_id   8 bytes
    sequence_no  4 bytes
    count        2 bytes  (number of payload integers)
    count x { length 4 bytes, magnitude `length` bytes, no leading zero byte }
    crc32        4 bytes  (over every preceding byte of the message)

Sequence number 0 is the session handshake.  Sequence number 0xFFFFFFFF is
reserved for control frames whose single payload integer is 0 (close) or
the wire code of an error (abort).
"""

from __future__ import annotations

import enum
import io
import queue
import secrets
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import (
    FrameCorrupt,
    PPKNNError,
    SequenceGap,
    SessionIdCollision,
    TransportDisconnected,
    from_wire_code,
)

VERSION = 0x01
CONTROL_SEQ = 0xFFFFFFFF
MAX_PAYLOAD_BYTES = 1 << 24
MAX_PAYLOAD_COUNT = 0xFFFF

_HEADER = struct.Struct(">BBQIH")
_U32 = struct.Struct(">I")


class ProtocolTag(enum.IntEnum):
    SM = 1
    SSED = 2
    SBD = 3
    LSB = 4
    SMIN = 5
    SMINN = 6
    PPKNN = 7
    RESULT = 8


class PartyRole(enum.Enum):
    P1 = "P1"
    P2 = "P2"


@dataclass(frozen=True)
class ProtocolMessage:
    session_id: int
    protocol_tag: ProtocolTag
    sequence_no: int
    payload: tuple[int, ...] = ()

    @property
    def is_control(self) -> bool:
        return self.sequence_no == CONTROL_SEQ


def _int_bytes(v: int) -> bytes:
    return v.to_bytes((v.bit_length() + 7) // 8, "big")


def encode_message(msg: ProtocolMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD_COUNT:
        raise ValueError("too many payload integers")
    parts = [
        _HEADER.pack(VERSION, int(msg.protocol_tag), msg.session_id, msg.sequence_no, len(msg.payload))
    ]
    size = 0
    for v in msg.payload:
        if v < 0:
            raise ValueError("payload integers must be nonnegative")
        raw = _int_bytes(v)
        size += len(raw)
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    if size > MAX_PAYLOAD_BYTES:
        raise ValueError("payload exceeds 2^24 bytes")
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def read_message(read: Callable[[int], bytes]) -> tuple[ProtocolMessage, bytes]:
    """Parse one message from ``read(n)``, which must return exactly n bytes or raise."""
    chunks = []

    def take(n: int) -> bytes:
        data = read(n)
        chunks.append(data)
        return data

    version, tag, sid, seq, count = _HEADER.unpack(take(_HEADER.size))
    if version != VERSION:
        raise FrameCorrupt(f"unsupported version {version}")
    try:
        tag = ProtocolTag(tag)
    except ValueError:
        raise FrameCorrupt(f"unknown protocol tag {tag}") from None
    payload = []
    size = 0
    for _ in range(count):
        (length,) = _U32.unpack(take(4))
        size += length
        if size > MAX_PAYLOAD_BYTES:
            raise FrameCorrupt("payload exceeds 2^24 bytes")
        raw = take(length)
        if raw[:1] == b"\x00":
            raise FrameCorrupt("non-canonical integer encoding")
        payload.append(int.from_bytes(raw, "big"))
    body = b"".join(chunks)
    (crc,) = _U32.unpack(read(4))
    if crc != zlib.crc32(body):
        raise FrameCorrupt("checksum mismatch")
    return ProtocolMessage(sid, tag, seq, tuple(payload)), body + _U32.pack(crc)


def decode_message(data: bytes) -> ProtocolMessage:
    buf = io.BytesIO(data)

    def read(n: int) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise FrameCorrupt("truncated frame")
        return chunk

    msg, _ = read_message(read)
    if buf.read(1):
        raise FrameCorrupt("trailing bytes after frame")
    return msg


# -- transports ---------------------------------------------------------------


class QueueTransport:
    """One end of an in-process bidirectional channel; build with :meth:`pair`."""

    _EOF = object()

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @classmethod
    def pair(cls) -> tuple["QueueTransport", "QueueTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)

    def send_bytes(self, data: bytes) -> None:
        if self._closed:
            raise TransportDisconnected("transport closed")
        self._outbox.put(bytes(data))

    def recv_message(self) -> ProtocolMessage:
        item = self._inbox.get()
        if item is self._EOF:
            self._closed = True
            raise TransportDisconnected("peer closed the channel")
        return decode_message(item)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(self._EOF)
            self._inbox.put(self._EOF)


class SocketTransport:
    """Stream-socket transport; messages are self-delimiting on the stream."""

    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._send_lock = threading.Lock()
        self._closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "SocketTransport":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        return cls(sock)

    def send_bytes(self, data: bytes) -> None:
        with self._send_lock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise TransportDisconnected(str(exc)) from exc

    def _read_exact(self, n: int, first: list) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except OSError as exc:
                raise TransportDisconnected(str(exc)) from exc
            if not chunk:
                if first[0] and not buf:
                    raise TransportDisconnected("peer closed the connection")
                raise FrameCorrupt("truncated frame")
            buf += chunk
        first[0] = False
        return bytes(buf)

    def recv_message(self) -> ProtocolMessage:
        first = [True]
        msg, _ = read_message(lambda n: self._read_exact(n, first))
        return msg

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def listen_socket(host: str, port: int) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen()
    return srv


# -- transcripts ----------------------------------------------------------------


@dataclass
class TranscriptEntry:
    direction: str
    message: ProtocolMessage
    wall_time: float


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)
    # (tag, kind, value) for every plaintext P2 obtained by decryption
    p2_view: list[tuple[ProtocolTag, str, int]] = field(default_factory=list)

    def record(self, direction: str, msg: ProtocolMessage) -> None:
        self.entries.append(TranscriptEntry(direction, msg, time.time()))

    def note_decryption(self, tag: ProtocolTag, value: int, kind: str = "blinded") -> None:
        self.p2_view.append((tag, kind, value))


# -- endpoint and sessions ------------------------------------------------------


class SessionClosed(Exception):
    """The peer closed the session normally."""


class Endpoint:
    """Demultiplexes one transport into sessions keyed by session_id."""

    def __init__(self, transport, *, record: bool = False):
        self.transport = transport
        self.record = record
        self._lock = threading.Lock()
        self._sessions: dict[int, queue.Queue] = {}
        self._opened: set[int] = set()
        self._incoming: queue.Queue = queue.Queue()
        self._failure: PPKNNError | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                msg = self.transport.recv_message()
            except PPKNNError as exc:
                self._fail(exc)
                return
            with self._lock:
                inbox = self._sessions.get(msg.session_id)
            if inbox is not None:
                if msg.sequence_no == 0 and msg.session_id not in self._opened:
                    self._send_control(msg.session_id, msg.protocol_tag, SessionIdCollision.wire_code)
                    continue
                if msg.is_control:
                    # free the id now so the peer may reuse it right after closing
                    self._unregister(msg.session_id, inbox)
                inbox.put(msg)
            elif msg.sequence_no == 0:
                self._incoming.put(msg)
            # frames for unknown sessions are dropped

    def _fail(self, exc: PPKNNError) -> None:
        with self._lock:
            self._failure = exc
            inboxes = list(self._sessions.values())
        for inbox in inboxes:
            inbox.put(exc)
        self._incoming.put(exc)
        if isinstance(exc, FrameCorrupt):
            self.transport.close()

    def _send_control(self, sid: int, tag: ProtocolTag, code: int) -> None:
        msg = ProtocolMessage(sid, tag, CONTROL_SEQ, (code,))
        try:
            self.transport.send_bytes(encode_message(msg))
        except PPKNNError:
            pass

    def _register(self, sid: int, opened: bool = False) -> queue.Queue:
        with self._lock:
            if self._failure is not None:
                raise type(self._failure)(str(self._failure))
            if sid in self._sessions:
                raise SessionIdCollision(f"session id {sid:#x} already active")
            inbox = queue.Queue()
            self._sessions[sid] = inbox
            if opened:
                self._opened.add(sid)
            return inbox

    def _unregister(self, sid: int, inbox: queue.Queue) -> None:
        with self._lock:
            if self._sessions.get(sid) is inbox:
                del self._sessions[sid]
                self._opened.discard(sid)

    def open_session(
        self,
        tag: ProtocolTag,
        hello: Sequence[int] = (),
        *,
        role: PartyRole = PartyRole.P1,
        session_id: int | None = None,
    ) -> "Session":
        sid = secrets.randbits(64) if session_id is None else session_id
        inbox = self._register(sid, opened=True)
        session = Session(self, sid, tag, role, inbox)
        session._send_raw(ProtocolMessage(sid, tag, 0, tuple(hello)))
        reply = session._next()
        if reply.is_control:
            session._handle_control(reply)
        if reply.sequence_no != 0:
            session.abort(SequenceGap(f"expected handshake, got seq {reply.sequence_no}"))
        session.peer_hello = reply.payload
        return session

    def accept_session(
        self,
        check: Callable[[ProtocolMessage], Sequence[int]] | None = None,
        *,
        role: PartyRole = PartyRole.P2,
        timeout: float | None = None,
    ) -> "Session":
        """Wait for the peer to open a session and acknowledge it.

        ``check`` validates the opening message and returns the reply payload;
        a raised :class:`PPKNNError` is sent back as an abort and re-raised.
        """
        try:
            item = self._incoming.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no session opened") from None
        if isinstance(item, PPKNNError):
            self._incoming.put(item)
            raise type(item)(str(item))
        inbox = self._register(item.session_id)
        session = Session(self, item.session_id, item.protocol_tag, role, inbox)
        session._recv_seq = 1
        if session.transcript is not None:
            session.transcript.record(session._incoming_dir, item)
        session.peer_hello = item.payload
        try:
            reply = tuple(check(item)) if check else ()
        except PPKNNError as exc:
            session.abort(exc)
        session._send_raw(ProtocolMessage(session.session_id, session.tag, 0, reply))
        return session

    def close(self) -> None:
        self.transport.close()


class Session:
    def __init__(self, endpoint: Endpoint, session_id: int, tag: ProtocolTag, role: PartyRole, inbox: queue.Queue):
        self.endpoint = endpoint
        self.session_id = session_id
        self.tag = tag
        self.role = role
        self.peer_hello: tuple[int, ...] = ()
        self.transcript = Transcript() if endpoint.record else None
        self._inbox = inbox
        self._send_seq = 0
        self._recv_seq = 0
        self._done = False
        if role is PartyRole.P1:
            self._outgoing_dir, self._incoming_dir = "P1->P2", "P2->P1"
        else:
            self._outgoing_dir, self._incoming_dir = "P2->P1", "P1->P2"

    def _send_raw(self, msg: ProtocolMessage) -> None:
        if self._done:
            raise TransportDisconnected("session already finished")
        self.endpoint.transport.send_bytes(encode_message(msg))
        if self.transcript is not None:
            self.transcript.record(self._outgoing_dir, msg)
        if not msg.is_control:
            self._send_seq = msg.sequence_no + 1

    def _next(self, timeout: float | None = None) -> ProtocolMessage:
        if self._done:
            raise TransportDisconnected("session already finished")
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no message from peer") from None
        if isinstance(item, PPKNNError):
            self._finish()
            raise type(item)(str(item))
        if self.transcript is not None:
            self.transcript.record(self._incoming_dir, item)
        if not item.is_control:
            if item.sequence_no != self._recv_seq:
                self.abort(SequenceGap(f"expected seq {self._recv_seq}, got {item.sequence_no}"))
            self._recv_seq += 1
        return item

    def _handle_control(self, msg: ProtocolMessage) -> None:
        code = msg.payload[0] if msg.payload else 0
        self._finish()
        if code == 0:
            raise SessionClosed()
        raise from_wire_code(code)(f"peer aborted session {self.session_id:#x}")

    def send(self, values: Iterable[int], tag: ProtocolTag | None = None) -> None:
        self._send_raw(ProtocolMessage(self.session_id, tag or self.tag, self._send_seq, tuple(values)))

    def recv_message(self, timeout: float | None = None) -> ProtocolMessage:
        msg = self._next(timeout)
        if msg.is_control:
            self._handle_control(msg)
        return msg

    def recv(self, timeout: float | None = None) -> list[int]:
        return list(self.recv_message(timeout).payload)

    def request(self, values: Iterable[int], tag: ProtocolTag | None = None) -> list[int]:
        self.send(values, tag)
        return self.recv()

    def abort(self, exc: PPKNNError):
        """Notify the peer, tear the session down and raise ``exc``."""
        if not self._done:
            self.endpoint._send_control(self.session_id, self.tag, exc.wire_code)
            self._finish()
        raise exc

    def close(self) -> None:
        if not self._done:
            self.endpoint._send_control(self.session_id, self.tag, 0)
            self._finish()

    def _finish(self) -> None:
        self._done = True
        self.endpoint._unregister(self.session_id, self._inbox)

    @property
    def closed(self) -> bool:
        return self._done

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_session(endpoint: Endpoint, role: PartyRole, protocol_tag: ProtocolTag, hello: Sequence[int] = ()) -> Session:
    return endpoint.open_session(protocol_tag, hello, role=role)
