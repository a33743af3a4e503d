"""Socket deployment of the two cloud parties and the querying user.

Topology: P2 listens; P1 connects to P2 and separately listens for users.
A user opens a PPKNN session to P1 and sends one request

    [mode, k, E(mask), E(q_1), ..., E(q_m)]

and receives ``[r_1, y_1, r_2, y_2, ...]`` tagged RESULT, where each r is
P1's blind and each y is P2's blinded share ``label + r + mask``.  Neither
cloud party sees the label in the clear; the user strips r and mask.
"""

from __future__ import annotations

import logging
import random
import secrets
import socket
import threading
from typing import Sequence

from .pipeline import EncryptedDatabase, EncryptedQuery, Mode, classify, encrypt_query
from .errors import DimensionError, KeyMismatch, PPKNNError, ProtocolAbort
from .oracle import majority_plain
from .paillier import Ciphertext, PublicKey, SecretKey, encrypt
from .protocols import DataHost, KeyHolder, ProtocolConfig
from .runtime import (
    Endpoint,
    PartyRole,
    ProtocolTag,
    SessionClosed,
    SocketTransport,
    listen_socket,
)

log = logging.getLogger(__name__)

MODE_CODES = {Mode.SECURE: 0, Mode.FAST: 1}
_MODES_BY_CODE = {v: k for k, v in MODE_CODES.items()}


def serve_p2(sk: SecretKey, host: str, port: int, *, concurrent: bool = False, record: bool = False,
             ready: threading.Event | None = None, max_connections: int | None = None) -> None:
    """Accept P1 connections one at a time and answer its requests."""
    keyholder = KeyHolder(sk)
    with listen_socket(host, port) as srv:
        if ready is not None:
            ready.set()
        served = 0
        while max_connections is None or served < max_connections:
            conn, addr = srv.accept()
            log.info("P1 connected from %s:%d", *addr)
            endpoint = Endpoint(SocketTransport(conn), record=record)
            keyholder.serve(endpoint, concurrent=concurrent)
            endpoint.close()
            served += 1


class P1Service:
    """P1 holding the encrypted database and a connection to P2."""

    def __init__(self, p2: Endpoint, pk: PublicKey, db: EncryptedDatabase, seed: int | None = None):
        self.p2 = p2
        self.pk = pk
        self.db = db
        self._seeds = random.Random(seed) if seed is not None else None
        self._lock = threading.Lock()

    def check_peer(self) -> None:
        """Open and close an empty session so P2 validates the public key."""
        session = self.p2.open_session(ProtocolTag.PPKNN, (self.pk.modulus_n,))
        session.close()

    def _config(self) -> ProtocolConfig:
        seed = self._seeds.getrandbits(64) if self._seeds is not None else None
        return ProtocolConfig(self.pk, self.db.l, seed)

    def answer(self, payload: Sequence[int]) -> list[int]:
        if len(payload) != 3 + self.db.m:
            raise DimensionError(f"query must carry {self.db.m} attributes")
        mode_code, k, mask, *q = payload
        if mode_code not in _MODES_BY_CODE:
            raise ProtocolAbort(f"unknown mode {mode_code}")
        with self._lock:
            host = DataHost.open(self.p2, self._config())
            try:
                result = classify(
                    host, self.db, EncryptedQuery([Ciphertext(c) for c in q]), k,
                    mode=_MODES_BY_CODE[mode_code], user_mask=Ciphertext(mask),
                )
            finally:
                if not host.session.closed:
                    host.close()
        out = []
        for d in result.deliveries:
            out += [d.blind, d.blinded]
        return out

    def _check_user(self, msg) -> tuple[int, ...]:
        if msg.payload and msg.payload[0] != self.pk.modulus_n:
            raise KeyMismatch("user encrypted under a different public key")
        return (self.pk.modulus_n, self.db.n, self.db.m, self.db.w, self.db.l)

    def serve_user(self, endpoint: Endpoint) -> None:
        while True:
            try:
                session = endpoint.accept_session(self._check_user)
            except PPKNNError:
                return
            try:
                while True:
                    msg = session.recv_message()
                    try:
                        reply = self.answer(msg.payload)
                    except PPKNNError as exc:
                        log.warning("query failed: %s", exc)
                        session.abort(exc)
                    session.send(reply, ProtocolTag.RESULT)
            except SessionClosed:
                pass
            except PPKNNError as exc:
                if not self.p2_alive():
                    raise
                log.info("user session ended: %s", exc)

    def p2_alive(self) -> bool:
        return self.p2._failure is None

    def serve_users(self, srv: socket.socket, max_connections: int | None = None) -> None:
        served = 0
        while max_connections is None or served < max_connections:
            conn, addr = srv.accept()
            log.info("user connected from %s:%d", *addr)
            endpoint = Endpoint(SocketTransport(conn))
            try:
                self.serve_user(endpoint)
            finally:
                endpoint.close()
            served += 1


def query_remote(
    host: str,
    port: int,
    pk: PublicKey,
    values: Sequence[int],
    k: int,
    mode: Mode = Mode.SECURE,
    rng=None,
) -> int:
    """Act as the user: encrypt the query, ask P1, reconstruct the label."""
    rng = rng or secrets.SystemRandom()
    endpoint = Endpoint(SocketTransport.connect(host, port))
    try:
        session = endpoint.open_session(ProtocolTag.PPKNN, (pk.modulus_n,), role=PartyRole.P1)
        _, n, m, w, l = session.peer_hello
        query: EncryptedQuery = encrypt_query(pk, values, m, l, rng)
        mask = rng.randrange(pk.modulus_n)
        payload = [MODE_CODES[mode], k, encrypt(pk, mask, rng).value]
        payload += [c.value for c in query.attributes]
        shares = session.request(payload)
        session.close()
    finally:
        endpoint.close()
    labels = [
        (blinded - blind - mask) % pk.modulus_n for blind, blinded in zip(shares[::2], shares[1::2])
    ]
    if not labels:
        raise ProtocolAbort("empty result")
    return labels[0] if mode is Mode.SECURE else majority_plain(labels)
