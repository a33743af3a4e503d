"""End-to-end privacy-preserving k-NN classification.

The data owner encrypts her table attribute-wise (label column included) and
hands it to P1.  A classification then runs, entirely under encryption:

1. SSED between the query and every record,
2. SBD of every distance,
3. k rounds of SMIN_n with the label as payload, each followed by an
   oblivious exclusion of the extracted record,
4. a homomorphic majority vote over the k extracted labels,
5. blinded delivery of the winning label to the user.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import (
    AttributeOutOfRange,
    ProtocolAbort,
    DimensionError,
    KOutOfRange,
    SchemaMismatch,
    WOutOfRange,
)
from .oracle import majority_plain
from .paillier import (
    Ciphertext,
    PublicKey,
    encrypt,
    homomorphic_add,
    random_unit,
    scalar_exp,
    subtract,
    add_plain,
    negate,
)
from .protocols import DataHost, EncryptedBits, Tournament, check_headroom
from .runtime import ProtocolTag

MAX_CLASSES = 16
DB_MAGIC = "ppknn-db v1"


class Mode(enum.Enum):
    SECURE = "secure-majority"
    FAST = "fast"


@dataclass
class PlainRecord:
    attributes: list[int]
    class_label: int


@dataclass
class EncryptedRecord:
    attributes: list[Ciphertext]
    label: Ciphertext


@dataclass
class EncryptedQuery:
    attributes: list[Ciphertext]


@dataclass
class EncryptedDatabase:
    records: list[EncryptedRecord]
    m: int
    w: int
    l: int

    @property
    def n(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class Delivery:
    """Two additive shares of one label: P1's blind and P2's blinded value."""

    blind: int
    blinded: int
    modulus: int

    def reconstruct(self, user_mask: int = 0) -> int:
        return (self.blinded - self.blind - user_mask) % self.modulus


@dataclass
class ExtractionTrace:
    """What P1 holds after the extraction rounds (ciphertexts and its own choices)."""

    distances: list[Ciphertext] = field(default_factory=list)
    extracted: list[Ciphertext] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)
    permutations: list[list[int]] = field(default_factory=list)
    labels: list[Ciphertext] = field(default_factory=list)


@dataclass
class ClassificationResult:
    k_used: int
    mode: Mode
    deliveries: list[Delivery]
    label: int | None = None
    trace: ExtractionTrace | None = None

    def reconstruct(self, user_mask: int = 0) -> int:
        """Label as the user recovers it from the delivery shares."""
        if self.mode is Mode.SECURE:
            return self.deliveries[0].reconstruct(user_mask)
        return majority_plain([d.reconstruct(user_mask) for d in self.deliveries])


def attribute_bits(l: int, m: int) -> int:
    """Largest l' with m * 2^(2 l') <= 2^l."""
    if m < 1:
        return l // 2
    bits = 0
    while m * (1 << (2 * (bits + 1))) <= (1 << l):
        bits += 1
    return bits


def _check_values(values: Sequence[int], m: int, l: int, what: str) -> None:
    if len(values) != m:
        raise DimensionError(f"{what} has {len(values)} attributes, expected {m}")
    limit = 1 << attribute_bits(l, m)
    for v in values:
        if not 0 <= v < limit:
            raise AttributeOutOfRange(f"{what} attribute {v} outside [0, {limit})")


def encrypt_database(
    pk: PublicKey, records: Sequence[PlainRecord], *, w: int, l: int = 32, rng=None
) -> EncryptedDatabase:
    check_headroom(pk, l)
    if not 1 <= w <= MAX_CLASSES:
        raise WOutOfRange(f"class count {w} outside [1, {MAX_CLASSES}]")
    m = len(records[0].attributes) if records else 0
    out = []
    for i, rec in enumerate(records):
        if len(rec.attributes) != m:
            raise SchemaMismatch(f"record {i} has {len(rec.attributes)} attributes, expected {m}")
        _check_values(rec.attributes, m, l, f"record {i}")
        if not 0 <= rec.class_label < w:
            raise SchemaMismatch(f"record {i} label {rec.class_label} outside [0, {w})")
        out.append(
            EncryptedRecord(
                [encrypt(pk, v, rng) for v in rec.attributes], encrypt(pk, rec.class_label, rng)
            )
        )
    return EncryptedDatabase(out, m, w, l)


def encrypt_query(pk: PublicKey, q: Sequence[int], m: int, l: int = 32, rng=None) -> EncryptedQuery:
    _check_values(q, m, l, "query")
    return EncryptedQuery([encrypt(pk, v, rng) for v in q])


def classify(
    host: DataHost,
    db: EncryptedDatabase,
    query: EncryptedQuery,
    k: int,
    *,
    mode: Mode = Mode.SECURE,
    user_mask: Ciphertext | None = None,
) -> ClassificationResult:
    """Run the full pipeline; ``host`` must be configured with the database's l."""
    n = db.n
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    if len(query.attributes) != db.m:
        raise DimensionError(f"query has {len(query.attributes)} attributes, database has {db.m}")
    if host.l != db.l:
        raise SchemaMismatch(f"host bit budget {host.l} differs from database l={db.l}")
    pk = host.pk
    trace = ExtractionTrace()

    distances = [host.ssed(rec.attributes, query.attributes) for rec in db.records]
    trace.distances = list(distances)
    bits = host.sbd_many(distances)
    labels = [rec.label for rec in db.records]

    extracted_labels = []
    bracket = Tournament(host, list(zip(bits, labels)))
    for round_no in range(k):
        min_bits, _ = bracket.winner
        d_min = host.recompose(min_bits)
        trace.extracted.append(d_min)
        idx = oblivious_exclude(host, distances, d_min, trace)
        # the payload is this label unless distances tie; taking the excluded
        # record's own label keeps the k labels from k distinct records
        extracted_labels.append(labels[idx])
        # the extracted record now carries the largest representable distance
        distances[idx] = host.encrypt((1 << db.l) - 1)
        if round_no < k - 1:
            bracket.replace(idx, ([host.encrypt(1) for _ in range(db.l)], labels[idx]))
    trace.labels = extracted_labels

    if mode is Mode.SECURE:
        winner = majority_label(host, extracted_labels, db.w)
        deliveries = [deliver_result(host, winner, user_mask)]
    else:
        deliveries = [deliver_result(host, lab, user_mask) for lab in extracted_labels]
    result = ClassificationResult(k, mode, deliveries, trace=trace)
    if user_mask is None:
        result.label = result.reconstruct()
    return result


def oblivious_exclude(
    host: DataHost, distances: Sequence[Ciphertext], d_min: Ciphertext, trace: ExtractionTrace | None = None
) -> int:
    """Index of a record whose distance equals ``d_min``.

    P2 sees each E(d_i - d_min) scaled by a fresh random unit, in a fresh
    random order, and reports the first zero.  Among tied records the
    permutation decides.
    """
    trace = trace if trace is not None else ExtractionTrace()
    pk = host.pk
    probes = [
        scalar_exp(pk, subtract(pk, d, d_min), random_unit(pk, host.rng)) for d in distances
    ]
    perm = list(range(len(distances)))
    host.rng.shuffle(perm)
    trace.permutations.append(perm)
    (pos,) = host._request(ProtocolTag.PPKNN, [probes[i].value for i in perm], 1)
    if not 0 <= pos < len(perm):
        host.session.abort(ProtocolAbort(f"exclusion position {pos} out of range"))
    idx = perm[pos]
    trace.excluded.append(idx)
    return idx


def majority_label(host: DataHost, k_labels: Sequence[Ciphertext], w: int) -> Ciphertext:
    """E(most frequent class) among encrypted labels; ties to the smallest class id."""
    if not 1 <= w <= MAX_CLASSES:
        raise WOutOfRange(f"class count {w} outside [1, {MAX_CLASSES}]")
    pk = host.pk
    k = len(k_labels)
    label_bits = max(1, (w - 1).bit_length())
    decomposed = host.sbd_many(list(k_labels), bits=label_bits)

    # equality bit of label j with class c: product over bits of (bit if c_i else 1 - bit)
    cells = [(j, c) for j in range(k) for c in range(w)]

    def literal(j: int, c: int, i: int) -> Ciphertext:
        b = decomposed[j][i]
        return b if (c >> i) & 1 else add_plain(pk, negate(pk, b), 1)

    acc = [literal(j, c, 0) for j, c in cells]
    for i in range(1, label_bits):
        acc = host.sm_many([(a, literal(j, c, i)) for a, (j, c) in zip(acc, cells)])

    gaps = []
    for c in range(w):
        freq = acc[c]
        for j in range(1, k):
            freq = homomorphic_add(pk, freq, acc[j * w + c])
        gaps.append(add_plain(pk, negate(pk, freq), k))  # k - freq_c, in [0, k]
    gap_bits = host.sbd_many(gaps, bits=k.bit_length())
    entries: list[tuple[EncryptedBits, Ciphertext]] = [
        (gap_bits[c], host.encrypt(c)) for c in range(w)
    ]
    _, winner = host.smin_n(entries)
    return winner


def deliver_result(
    host: DataHost, label: Ciphertext, user_mask: Ciphertext | None = None, blind: int | None = None
) -> Delivery:
    """Split the label into P1's blind r and P2's view (label + r [+ user mask])."""
    n = host.pk.modulus_n
    r = host.rng.randrange(n) if blind is None else blind
    payload = [homomorphic_add(host.pk, label, host.encrypt(r)).value]
    if user_mask is not None:
        payload.append(user_mask.value)
    (blinded,) = host._request(ProtocolTag.RESULT, payload, 1)
    return Delivery(r, blinded, n)


# -- database file -------------------------------------------------------------


def format_database(db: EncryptedDatabase) -> str:
    lines = [f"{DB_MAGIC}; n={db.n}; m={db.m}; w={db.w}; l={db.l}"]
    for rec in db.records:
        lines.append(" ".join(f"{c.value:x}" for c in [*rec.attributes, rec.label]))
    return "\n".join(lines) + "\n"


def parse_database(text: str, pk: PublicKey | None = None) -> EncryptedDatabase:
    lines = text.splitlines()
    if not lines:
        raise SchemaMismatch("empty database file")
    header = [part.strip() for part in lines[0].split(";")]
    if header[0] != DB_MAGIC:
        raise SchemaMismatch(f"not a {DB_MAGIC} file")
    meta = {}
    for part in header[1:]:
        key, _, value = part.partition("=")
        meta[key] = int(value)
    n, m, w, l = (meta[key] for key in ("n", "m", "w", "l"))
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != n:
        raise SchemaMismatch(f"header says n={n}, file has {len(body)} records")
    records = []
    for lineno, line in enumerate(body, 2):
        cells = [int(tok, 16) for tok in line.split(" ")]
        if len(cells) != m + 1:
            raise SchemaMismatch(f"line {lineno}: expected {m + 1} ciphertexts")
        if pk is not None and any(not 0 < c < pk.modulus_n_squared for c in cells):
            raise SchemaMismatch(f"line {lineno}: ciphertext not under this public key")
        cts = [Ciphertext(c) for c in cells]
        records.append(EncryptedRecord(cts[:-1], cts[-1]))
    return EncryptedDatabase(records, m, w, l)


def save_database(path: str | Path, db: EncryptedDatabase) -> None:
    Path(path).write_text(format_database(db))


def load_database(path: str | Path, pk: PublicKey | None = None) -> EncryptedDatabase:
    return parse_database(Path(path).read_text(), pk)
