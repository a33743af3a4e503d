import itertools
import random

import pytest
from hypothesis import given, strategies as st

from ppknn import oracle
from ppknn.errors import DimensionError, EmptyInput, KOutOfRange
from ppknn.oracle import OracleConfig, TieRule


def naive_knn(records, q, k):
    """Sort by (distance, index), take k, vote with ties to the smaller class."""
    dist = lambda r: sum((a - b) * (a - b) for a, b in zip(r[0], q))  # noqa: E731
    order = sorted(range(len(records)), key=lambda i: (dist(records[i]), i))
    chosen = order[:k]
    votes = {}
    for i in chosen:
        votes[records[i][1]] = votes.get(records[i][1], 0) + 1
    best = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0][0]


class TestBinary:
    def test_examples(self):
        assert oracle.binary_decompose(5, 3) == [1, 0, 1]
        assert oracle.binary_decompose(0, 4) == [0, 0, 0, 0]
        assert oracle.binary_decompose(2**9 - 1, 9) == [1] * 9

    def test_matches_format(self):
        for x in range(256):
            assert oracle.binary_decompose(x, 8) == [int(c) for c in reversed(f"{x:08b}")]

    @given(st.integers(0, 2**64 - 1))
    def test_recompose_inverse(self, x):
        assert oracle.recompose(oracle.binary_decompose(x, 64)) == x

    @pytest.mark.parametrize("x,m", [(8, 3), (-1, 4)])
    def test_out_of_range(self, x, m):
        with pytest.raises(ValueError):
            oracle.binary_decompose(x, m)


class TestDistance:
    def test_examples(self):
        assert oracle.squared_distance((0, 0), (3, 4)) == 25
        assert oracle.squared_distance((7, 1, 9), (7, 1, 9)) == 0

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            oracle.squared_distance((1,), (1, 2))


class TestMin:
    def test_examples(self):
        assert oracle.min_n_plain([(7, "a"), (2, "b"), (9, "c"), (4, "d")]) == (2, "b")
        assert oracle.min_n_plain([(3, "x")]) == (3, "x")
        assert oracle.min_n_plain([(3, "a"), (3, "b")]) == (3, "a")

    def test_empty(self):
        with pytest.raises(EmptyInput):
            oracle.min_n_plain([])


class TestMajority:
    def test_examples(self):
        assert oracle.majority_plain([2, 2, 5]) == 2
        assert oracle.majority_plain([4]) == 4
        assert oracle.majority_plain([2, 1, 2, 1]) == 1

    def test_empty(self):
        with pytest.raises(EmptyInput):
            oracle.majority_plain([])


class TestKnn:
    def test_record_query_k1(self):
        records = [((1, 2), 0), ((5, 5), 1), ((9, 0), 2)]
        assert oracle.knn_classify_plain(records, (5, 5), 1) == 1

    def test_k_equals_n_is_global_majority(self):
        records = [((i, i), lab) for i, lab in enumerate([0, 1, 1, 2, 1, 0])]
        assert oracle.knn_classify_plain(records, (0, 0), 6) == 1

    def test_k_range(self):
        with pytest.raises(KOutOfRange):
            oracle.knn_classify_plain([((0,), 0)], (0,), 2)
        with pytest.raises(KOutOfRange):
            oracle.knn_classify_plain([((0,), 0)], (0,), 0)

    def test_first_seen_tie_rule(self):
        records = [((0,), 2), ((1,), 1)]
        assert oracle.knn_classify_plain(records, (0,), 2) == 1
        cfg = OracleConfig(tie_rule=TieRule.FIRST_INDEX)
        assert oracle.knn_classify_plain(records, (0,), 2, cfg) == 2

    def test_matches_naive(self):
        rng = random.Random(3)
        for _ in range(200):
            n, m = rng.randrange(1, 12), rng.randrange(1, 4)
            records = [([rng.randrange(6) for _ in range(m)], rng.randrange(3)) for _ in range(n)]
            q = [rng.randrange(6) for _ in range(m)]
            k = rng.randrange(1, n + 1)
            assert oracle.knn_classify_plain(records, q, k) == naive_knn(records, q, k)

    def test_achievable_labels_cover_every_tie_choice(self):
        rng = random.Random(8)
        for _ in range(100):
            n = rng.randrange(2, 8)
            records = [([rng.randrange(3)], rng.randrange(3)) for _ in range(n)]
            q = [rng.randrange(3)]
            k = rng.randrange(1, n + 1)
            d = [oracle.squared_distance(r[0], q) for r in records]
            kth = sorted(d)[k - 1]
            brute = set()
            for subset in itertools.combinations(range(n), k):
                ds = sorted(d[i] for i in subset)
                if ds == sorted(d)[:k] and max(ds) == kth:
                    brute.add(oracle.majority_plain([records[i][1] for i in subset]))
            assert oracle.achievable_labels(records, q, k) == brute
