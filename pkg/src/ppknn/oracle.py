"""Plaintext mirrors of every secure protocol, used as ground truth in tests."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Any, Sequence

from .errors import DimensionError, EmptyInput, KOutOfRange


class TieRule(enum.Enum):
    FIRST_INDEX = "first-index"
    SMALLEST_CLASS_ID = "smallest-class-id"


@dataclass(frozen=True)
class OracleConfig:
    tie_rule: TieRule = TieRule.SMALLEST_CLASS_ID
    l: int = 32


def binary_decompose(x: int, m: int) -> list[int]:
    """LSB-first bits of x, 0 <= x < 2^m."""
    if not 0 <= x < (1 << m):
        raise ValueError(f"{x} does not fit in {m} bits")
    bits = []
    for _ in range(m):
        bits.append(x % 2)
        x //= 2
    return bits


def recompose(bits: Sequence[int]) -> int:
    return sum(b << i for i, b in enumerate(bits))


def squared_distance(x: Sequence[int], y: Sequence[int]) -> int:
    if len(x) != len(y):
        raise DimensionError(f"vector lengths differ: {len(x)} vs {len(y)}")
    return sum((a - b) ** 2 for a, b in zip(x, y))


def min_n_plain(entries: Sequence[tuple[int, Any]]) -> tuple[int, Any]:
    """Minimum value with the payload of its first occurrence."""
    if not entries:
        raise EmptyInput("min_n_plain needs at least one entry")
    best = entries[0]
    for entry in entries[1:]:
        if entry[0] < best[0]:
            best = entry
    return best


def majority_plain(labels: Sequence[int]) -> int:
    """Most frequent label; ties go to the smallest class id."""
    if not labels:
        raise EmptyInput("no labels to vote on")
    counts = Counter(labels)
    top = max(counts.values())
    return min(c for c, f in counts.items() if f == top)


def nearest_indices(records, q: Sequence[int], k: int) -> list[int]:
    """Indices of the k nearest records, distance ties by first index."""
    if not 1 <= k <= len(records):
        raise KOutOfRange(f"k={k} outside [1, {len(records)}]")
    dists = [squared_distance(_attrs(r), q) for r in records]
    return sorted(range(len(records)), key=lambda i: (dists[i], i))[:k]


def knn_classify_plain(records, q: Sequence[int], k: int, config: OracleConfig | None = None) -> int:
    """Majority label over the k nearest records.

    ``records`` are :class:`~ppknn.pipeline.PlainRecord` objects or
    ``(attributes, label)`` tuples.  Distance ties at the k-th boundary
    resolve by first index; vote ties by ``config.tie_rule``.
    """
    config = config or OracleConfig()
    labels = [_label(records[i]) for i in nearest_indices(records, q, k)]
    if config.tie_rule is TieRule.SMALLEST_CLASS_ID:
        return majority_plain(labels)
    counts = Counter(labels)
    top = max(counts.values())
    return next(c for c in labels if counts[c] == top)


def achievable_labels(records, q: Sequence[int], k: int) -> set[int]:
    """Every label some tie-consistent choice of k nearest neighbours can produce."""
    if not 1 <= k <= len(records):
        raise KOutOfRange(f"k={k} outside [1, {len(records)}]")
    dists = sorted((squared_distance(_attrs(r), q), _label(r)) for r in records)
    boundary = dists[k - 1][0]
    fixed = [lab for d, lab in dists if d < boundary]
    tied = [lab for d, lab in dists if d == boundary]
    need = k - len(fixed)
    out = set()
    # the multiset of tied labels chosen is all that matters for the vote
    pool = Counter(tied)

    def walk(classes, i, chosen, left):
        if left == 0:
            out.add(majority_plain(fixed + chosen))
            return
        if i == len(classes):
            return
        c = classes[i]
        for take in range(min(pool[c], left) + 1):
            walk(classes, i + 1, chosen + [c] * take, left - take)

    walk(sorted(pool), 0, [], need)
    return out


def _attrs(record) -> Sequence[int]:
    return record.attributes if hasattr(record, "attributes") else record[0]


def _label(record) -> int:
    return record.class_label if hasattr(record, "class_label") else record[1]
