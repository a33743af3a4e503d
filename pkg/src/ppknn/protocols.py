"""Two-party sub-protocols: SM, SSED, encrypted LSB, SBD, SMIN and SMIN_n.

P1 (:class:`DataHost`) drives every protocol and only ever holds the public
key.  P2 (:class:`KeyHolder`) answers requests by decrypting blinded values.
Each P1 method is batched over independent inputs so that one round trip
carries a whole layer of work; the number of SM invocations is unaffected by
batching and is counted in :attr:`DataHost.sm_calls`.
"""

from __future__ import annotations

import contextlib
import random
import secrets
import threading
from dataclasses import dataclass, field
from math import gcd
from typing import Iterator, Sequence

from . import _arith
from .errors import (
    DimensionError,
    EmptyInput,
    InsecureParameters,
    KeyMismatch,
    PPKNNError,
    ProtocolAbort,
    TransportDisconnected,
)
from .paillier import (
    Ciphertext,
    PublicKey,
    SecretKey,
    add_plain,
    decrypt,
    encrypt,
    encrypt_with_secret,
    homomorphic_add,
    negate,
    random_unit,
    scalar_exp,
    small_scalar,
    subtract,
)
from .runtime import Endpoint, PartyRole, ProtocolTag, QueueTransport, Session, SessionClosed

EncryptedBits = list[Ciphertext]
EncryptedVector = list[Ciphertext]

DEFAULT_L = 32


def smin_sm_calls(l: int) -> int:
    """SM invocations made by one pairwise SMIN on l-bit inputs.

    l (XOR) + (l - 1) (prefix OR) + l (comparison bit) + l (bit select)
    + 1 (payload select).
    """
    return 4 * l


def smin_n_sm_calls(n: int, l: int) -> int:
    return (n - 1) * smin_sm_calls(l)


@dataclass
class ProtocolConfig:
    pk: PublicKey
    bit_budget_l: int = DEFAULT_L
    seed: int | None = None

    def __post_init__(self) -> None:
        check_headroom(self.pk, self.bit_budget_l)

    def make_rng(self) -> random.Random:
        return random.Random(self.seed) if self.seed is not None else secrets.SystemRandom()


def check_headroom(pk: PublicKey, l: int) -> None:
    if l < 1 or (1 << l) * 4 >= pk.modulus_n:
        raise InsecureParameters(f"bit budget l={l} violates 2^l * 4 < N")


@dataclass
class DataHost:
    """P1: holds the public key and encrypted data, drives all protocols."""

    session: Session
    config: ProtocolConfig
    literal_sm_unblinding: bool = False
    rng: random.Random = field(init=False)
    sm_calls: int = field(default=0, init=False)
    round_trips: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.rng = self.config.make_rng()

    @classmethod
    def open(
        cls,
        endpoint: Endpoint,
        config: ProtocolConfig,
        tag: ProtocolTag = ProtocolTag.PPKNN,
        **kwargs,
    ) -> "DataHost":
        sid = None
        if config.seed is not None:
            sid = random.Random(f"session:{config.seed}").getrandbits(64)
        session = endpoint.open_session(
            tag, (config.pk.modulus_n,), role=PartyRole.P1, session_id=sid
        )
        return cls(session, config, **kwargs)

    @property
    def pk(self) -> PublicKey:
        return self.config.pk

    @property
    def l(self) -> int:
        return self.config.bit_budget_l

    def close(self) -> None:
        self.session.close()

    # -- plumbing -------------------------------------------------------------

    def _request(self, tag: ProtocolTag, values: Sequence[int], expect: int) -> list[int]:
        self.round_trips += 1
        reply = self.session.request(values, tag)
        if len(reply) != expect:
            self.session.abort(ProtocolAbort(f"{tag.name}: expected {expect} values, got {len(reply)}"))
        return reply

    def _ciphertexts(self, tag: ProtocolTag, values: Sequence[int]) -> list[Ciphertext]:
        n, n2 = self.pk.modulus_n, self.pk.modulus_n_squared
        for v in values:
            if not 0 < v < n2 or gcd(v, n) != 1:
                self.session.abort(ProtocolAbort(f"{tag.name}: malformed ciphertext from peer"))
        return [Ciphertext(v) for v in values]

    def encrypt(self, m: int) -> Ciphertext:
        return encrypt(self.pk, m % self.pk.modulus_n, self.rng)

    def recompose(self, bits: Sequence[Ciphertext]) -> Ciphertext:
        """E(sum 2^i * bit_i) from LSB-first encrypted bits."""
        pk = self.pk
        acc = bits[0]
        for i, b in enumerate(bits[1:], 1):
            acc = homomorphic_add(pk, acc, small_scalar(pk, b, 1 << i))
        return acc

    # -- SM ---------------------------------------------------------------------

    def sm_many(self, pairs: Sequence[tuple[Ciphertext, Ciphertext]]) -> list[Ciphertext]:
        """Secure multiplication of each (E(a), E(b)) pair."""
        if not pairs:
            return []
        pk, n = self.pk, self.pk.modulus_n
        blinds, payload = [], []
        for ea, eb in pairs:
            ra, rb = self.rng.randrange(n), self.rng.randrange(n)
            blinds.append((ra, rb))
            payload.append(homomorphic_add(pk, ea, self.encrypt(ra)).value)
            payload.append(homomorphic_add(pk, eb, self.encrypt(rb)).value)
        reply = self._ciphertexts(ProtocolTag.SM, self._request(ProtocolTag.SM, payload, len(pairs)))
        self.sm_calls += len(pairs)
        out = []
        for h, (ea, eb), (ra, rb) in zip(reply, pairs, blinds):
            if self.literal_sm_unblinding:
                s = homomorphic_add(pk, h, ea)
                s = homomorphic_add(pk, s, small_scalar(pk, eb, n - rb))
                s = homomorphic_add(pk, s, self.encrypt(n - ra * rb))
            else:
                # h = ab + a*rb + b*ra + ra*rb
                s = homomorphic_add(pk, h, small_scalar(pk, ea, n - rb))
                s = homomorphic_add(pk, s, small_scalar(pk, eb, n - ra))
                s = add_plain(pk, s, -ra * rb)
            out.append(s)
        return out

    def sm(self, ea: Ciphertext, eb: Ciphertext) -> Ciphertext:
        return self.sm_many([(ea, eb)])[0]

    # -- SSED -------------------------------------------------------------------

    def ssed(self, ex: EncryptedVector, ey: EncryptedVector) -> Ciphertext:
        """E(|X - Y|^2) from attribute-wise encryptions; m SM calls."""
        if len(ex) != len(ey):
            raise DimensionError(f"vector lengths differ: {len(ex)} vs {len(ey)}")
        pk, n = self.pk, self.pk.modulus_n
        if not ex:
            return self.encrypt(0)
        diffs = [homomorphic_add(pk, x, scalar_exp(pk, y, n - 1)) for x, y in zip(ex, ey)]
        squares = self.sm_many([(d, d) for d in diffs])
        total = squares[0]
        for sq in squares[1:]:
            total = homomorphic_add(pk, total, sq)
        return total

    # -- SBD --------------------------------------------------------------------

    def encrypted_lsb_many(self, values: Sequence[Ciphertext]) -> list[Ciphertext]:
        """E(z mod 2) for each E(z) with z < 2^l."""
        if not values:
            return []
        pk = self.pk
        bound = pk.modulus_n // 4
        rs = [self.rng.randrange(bound) for _ in values]
        payload = [homomorphic_add(pk, ez, self.encrypt(r)).value for ez, r in zip(values, rs)]
        reply = self._ciphertexts(ProtocolTag.LSB, self._request(ProtocolTag.LSB, payload, len(values)))
        # y = z + r without wraparound, so z mod 2 = (y mod 2) xor (r mod 2)
        return [c if r % 2 == 0 else add_plain(pk, negate(pk, c), 1) for c, r in zip(reply, rs)]

    def encrypted_lsb(self, ez: Ciphertext) -> Ciphertext:
        return self.encrypted_lsb_many([ez])[0]

    def sbd_many(
        self, values: Sequence[Ciphertext], bits: int | None = None, verify: bool = True
    ) -> list[EncryptedBits]:
        """Bit-decompose each E(z), LSB first, by iterated LSB extraction and halving."""
        l = self.l if bits is None else bits
        if l > self.l:
            check_headroom(self.pk, l)
        pk = self.pk
        half = _arith.invert(2, pk.modulus_n)
        current = list(values)
        out: list[EncryptedBits] = [[] for _ in values]
        for i in range(l):
            lsbs = self.encrypted_lsb_many(current)
            for j, b in enumerate(lsbs):
                out[j].append(b)
                if i < l - 1:
                    # (z - z0) is even, so multiplying by 2^-1 mod N halves it exactly
                    current[j] = scalar_exp(pk, subtract(pk, current[j], b), half)
        if verify and values:
            self._verify_decomposition(values, out)
        return out

    def sbd(self, ez: Ciphertext, bits: int | None = None, verify: bool = True) -> EncryptedBits:
        return self.sbd_many([ez], bits, verify)[0]

    def _verify_decomposition(self, values: Sequence[Ciphertext], decomposed: Sequence[EncryptedBits]) -> None:
        pk = self.pk
        probes = []
        for ez, bits in zip(values, decomposed):
            diff = subtract(pk, self.recompose(bits), ez)
            probes.append(scalar_exp(pk, diff, random_unit(pk, self.rng)).value)
        flags = self._request(ProtocolTag.SBD, probes, len(probes))
        if any(f != 1 for f in flags):
            self.session.abort(ProtocolAbort("SBD recomposition check failed"))

    # -- SMIN -------------------------------------------------------------------

    def smin_many(
        self, pairs: Sequence[tuple[EncryptedBits, Ciphertext, EncryptedBits, Ciphertext]]
    ) -> list[tuple[EncryptedBits, Ciphertext]]:
        """Pairwise secure minimum with payload, batched over independent pairs.

        Ties keep the first input (bits and payload of u).
        """
        if not pairs:
            return []
        l = len(pairs[0][0])
        for u, _, v, _ in pairs:
            if len(u) != l or len(v) != l:
                raise DimensionError("SMIN inputs must share one bit length")
        pk = self.pk
        P = len(pairs)
        idx = [(p, i) for p in range(P) for i in range(l)]

        uv = self.sm_many([(pairs[p][0][i], pairs[p][2][i]) for p, i in idx])
        xor = [[None] * l for _ in range(P)]
        for (p, i), t in zip(idx, uv):
            u, v = pairs[p][0][i], pairs[p][2][i]
            xor[p][i] = homomorphic_add(pk, homomorphic_add(pk, u, v), small_scalar(pk, t, -2))

        # prefix OR from the most significant bit down
        pre = [[None] * l for _ in range(P)]
        for p in range(P):
            pre[p][l - 1] = xor[p][l - 1]
        for i in range(l - 2, -1, -1):
            prods = self.sm_many([(pre[p][i + 1], xor[p][i]) for p in range(P)])
            for p, t in enumerate(prods):
                s = homomorphic_add(pk, pre[p][i + 1], xor[p][i])
                pre[p][i] = subtract(pk, s, t)

        # first[i] = 1 exactly at the most significant differing position
        first = [
            [pre[p][i] if i == l - 1 else subtract(pk, pre[p][i], pre[p][i + 1]) for i in range(l)]
            for p in range(P)
        ]
        picks = self.sm_many([(first[p][i], pairs[p][0][i]) for p, i in idx])
        # gt = E(1 iff u > v): u holds the 1 at the first differing bit
        gt = []
        for p in range(P):
            acc = picks[p * l]
            for t in picks[p * l + 1:(p + 1) * l]:
                acc = homomorphic_add(pk, acc, t)
            gt.append(acc)

        sel_in = []
        for p, (u, pu, v, pv) in enumerate(pairs):
            sel_in.extend((gt[p], subtract(pk, v[i], u[i])) for i in range(l))
            sel_in.append((gt[p], subtract(pk, pv, pu)))
        sel = self.sm_many(sel_in)

        out = []
        for p, (u, pu, v, pv) in enumerate(pairs):
            chunk = sel[p * (l + 1):(p + 1) * (l + 1)]
            bits = [homomorphic_add(pk, u[i], chunk[i]) for i in range(l)]
            out.append((bits, homomorphic_add(pk, pu, chunk[l])))
        return out

    def smin(
        self, u: EncryptedBits, payload_u: Ciphertext, v: EncryptedBits, payload_v: Ciphertext
    ) -> tuple[EncryptedBits, Ciphertext]:
        return self.smin_many([(u, payload_u, v, payload_v)])[0]

    def smin_n(self, entries: Sequence[tuple[EncryptedBits, Ciphertext]]) -> tuple[EncryptedBits, Ciphertext]:
        """Tournament of pairwise SMINs; ties go to the earliest entry."""
        return Tournament(self, entries).winner


class Tournament:
    """SMIN_n bracket that keeps its inner nodes.

    Adjacent entries are paired level by level and an unpaired last entry
    moves up unchanged, so ties always resolve to the earliest entry.
    :meth:`replace` swaps one leaf and replays only the ceil(log2 n) matches
    on its path to the root.
    """

    def __init__(self, host: DataHost, entries: Sequence[tuple[EncryptedBits, Ciphertext]]):
        if not entries:
            raise EmptyInput("smin_n needs at least one entry")
        l = len(entries[0][0])
        if any(len(bits) != l for bits, _ in entries):
            raise DimensionError("smin_n entries must share one bit length")
        self.host = host
        self.levels = [list(entries)]
        while len(self.levels[-1]) > 1:
            below = self.levels[-1]
            pairs = [(*below[i], *below[i + 1]) for i in range(0, len(below) - 1, 2)]
            above = host.smin_many(pairs)
            if len(below) % 2:
                above.append(below[-1])
            self.levels.append(above)

    @property
    def winner(self) -> tuple[EncryptedBits, Ciphertext]:
        return self.levels[-1][0]

    def replace(self, index: int, entry: tuple[EncryptedBits, Ciphertext]) -> tuple[EncryptedBits, Ciphertext]:
        if len(entry[0]) != len(self.levels[0][0][0]):
            raise DimensionError("replacement has a different bit length")
        self.levels[0][index] = entry
        pos = index
        for depth in range(len(self.levels) - 1):
            below = self.levels[depth]
            left = pos - pos % 2
            if left + 1 < len(below):
                node = self.host.smin(*below[left], *below[left + 1])
            else:
                node = below[left]
            pos //= 2
            self.levels[depth + 1][pos] = node
        return self.winner


class KeyHolder:
    """P2: holds the secret key and answers blinded decryption requests."""

    def __init__(self, sk: SecretKey, rng=None):
        self.sk = sk
        self.pk = sk.public_key
        self.rng = rng or secrets.SystemRandom()
        self.transcripts = []
        self._lock = threading.Lock()

    def check_hello(self, msg) -> tuple[int, ...]:
        if msg.payload and msg.payload[0] != self.pk.modulus_n:
            raise KeyMismatch("peer uses a different public key")
        return (self.pk.modulus_n,)

    def _decrypt(self, session: Session, tag: ProtocolTag, value: int, kind: str = "blinded") -> int:
        m = decrypt(self.sk, Ciphertext(value))
        if session.transcript is not None:
            session.transcript.note_decryption(tag, m, kind)
        return m

    def _encrypt(self, m: int) -> int:
        return encrypt_with_secret(self.sk, m, self.rng).value

    def handle(self, session: Session, tag: ProtocolTag, payload: Sequence[int]) -> list[int]:
        n = self.pk.modulus_n
        dec = lambda v, kind="blinded": self._decrypt(session, tag, v, kind)  # noqa: E731
        if tag is ProtocolTag.SM:
            if len(payload) % 2:
                raise ProtocolAbort("SM payload must hold pairs")
            return [
                self._encrypt(dec(a) * dec(b) % n)
                for a, b in zip(payload[::2], payload[1::2])
            ]
        if tag is ProtocolTag.LSB:
            return [self._encrypt(dec(y) % 2) for y in payload]
        if tag is ProtocolTag.SBD:
            return [int(dec(c, "zero-test") == 0) for c in payload]
        if tag is ProtocolTag.PPKNN:
            for pos, c in enumerate(payload):
                if dec(c, "zero-test") == 0:
                    # decrypt the rest as well so the work does not depend on the position
                    for rest in payload[pos + 1:]:
                        dec(rest, "zero-test")
                    return [pos]
            raise ProtocolAbort("exclusion step found no zero")
        if tag is ProtocolTag.RESULT:
            if len(payload) not in (1, 2):
                raise ProtocolAbort("RESULT payload must be [share] or [share, mask]")
            value = dec(payload[0])
            if len(payload) == 2:
                value += dec(payload[1], "user-mask")
            return [value % n]
        raise ProtocolAbort(f"P2 has no handler for {tag.name}")

    def serve_session(self, session: Session) -> None:
        if session.transcript is not None:
            with self._lock:
                self.transcripts.append(session.transcript)
        while True:
            try:
                msg = session.recv_message()
            except SessionClosed:
                return
            try:
                reply = self.handle(session, msg.protocol_tag, msg.payload)
            except PPKNNError as exc:
                session.abort(exc)
            session.send(reply, msg.protocol_tag)

    def serve(self, endpoint: Endpoint, concurrent: bool = False) -> None:
        """Accept and serve sessions until the transport goes away."""
        while True:
            try:
                session = endpoint.accept_session(self.check_hello)
            except TransportDisconnected:
                return
            except PPKNNError:
                continue
            if concurrent:
                threading.Thread(target=self._serve_quietly, args=(session,), daemon=True).start()
            else:
                self._serve_quietly(session)

    def _serve_quietly(self, session: Session) -> None:
        try:
            self.serve_session(session)
        except PPKNNError:
            pass


@contextlib.contextmanager
def local_parties(
    sk: SecretKey,
    *,
    record: bool = False,
    p2_seed: int | None = None,
    transport_pair=None,
    concurrent: bool = True,
) -> Iterator[tuple[Endpoint, KeyHolder]]:
    """P2 served from a background thread; yields P1's endpoint and the P2 object."""
    t1, t2 = transport_pair or QueueTransport.pair()
    p1 = Endpoint(t1, record=record)
    p2 = Endpoint(t2, record=record)
    keyholder = KeyHolder(sk, random.Random(p2_seed) if p2_seed is not None else None)
    thread = threading.Thread(target=keyholder.serve, args=(p2, concurrent), daemon=True)
    thread.start()
    try:
        yield p1, keyholder
    finally:
        p1.close()
        thread.join(timeout=5)
