"""Differential suites behind ``ppknn verify``.

Every suite runs a protocol in-process against fresh random inputs, decrypts
the result with the secret key, and compares with the plaintext oracle.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from . import pipeline as knn
from . import oracle
from .errors import PPKNNError
from .paillier import (
    PublicKey,
    SecretKey,
    decrypt,
    encrypt,
    homomorphic_add,
    keygen,
    scalar_exp,
)
from .protocols import DataHost, ProtocolConfig, local_parties
from .runtime import Endpoint, ProtocolTag


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def check(self, cond: bool, detail: str) -> None:
        self.total += 1
        if cond:
            self.passed += 1
        else:
            self.failures.append(detail)


def distinct_distance_dataset(rng: random.Random, n: int, m: int, bits: int, w: int):
    """Random records whose pairwise distinctness of query distances is checked per query."""
    return [
        knn.PlainRecord([rng.randrange(1 << bits) for _ in range(m)], rng.randrange(w))
        for _ in range(n)
    ]


def query_with_distinct_distances(rng: random.Random, records, m: int, bits: int) -> list[int]:
    while True:
        q = [rng.randrange(1 << bits) for _ in range(m)]
        dists = [oracle.squared_distance(r.attributes, q) for r in records]
        if len(set(dists)) == len(dists):
            return q


class Verifier:
    def __init__(self, pk: PublicKey, sk: SecretKey, endpoint: Endpoint, rng: random.Random,
                 literal_sm: bool = False):
        self.pk, self.sk, self.endpoint, self.rng = pk, sk, endpoint, rng
        self.literal_sm = literal_sm

    def host(self, tag: ProtocolTag, l: int = 32) -> DataHost:
        return DataHost.open(
            self.endpoint, ProtocolConfig(self.pk, l), tag, literal_sm_unblinding=self.literal_sm
        )

    def bits_value(self, bits) -> int:
        return oracle.recompose([decrypt(self.sk, b) for b in bits])

    def paillier(self, trials: int) -> SuiteResult:
        res = SuiteResult("paillier")
        pk, sk, rng = self.pk, self.sk, self.rng
        n = pk.modulus_n
        for m in [0, 1, n - 1] + [rng.randrange(n) for _ in range(trials)]:
            res.check(decrypt(sk, encrypt(pk, m)) == m, f"roundtrip m={m}")
        for _ in range(trials):
            a, b = rng.randrange(n), rng.randrange(n)
            got = decrypt(sk, homomorphic_add(pk, encrypt(pk, a), encrypt(pk, b)))
            res.check(got == (a + b) % n, f"add a={a} b={b}")
            got = decrypt(sk, scalar_exp(pk, encrypt(pk, a), b))
            res.check(got == a * b % n, f"scalar a={a} k={b}")
        return res

    def sm(self, trials: int) -> SuiteResult:
        res = SuiteResult("SM")
        host = self.host(ProtocolTag.SM)
        for _ in range(trials):
            a, b = self.rng.getrandbits(32), self.rng.getrandbits(32)
            got = decrypt(self.sk, host.sm(encrypt(self.pk, a), encrypt(self.pk, b)))
            res.check(got == a * b, f"a={a} b={b} got={got}")
        host.close()
        return res

    def ssed(self, trials: int) -> SuiteResult:
        res = SuiteResult("SSED")
        host = self.host(ProtocolTag.SSED)
        for _ in range(trials):
            x = [self.rng.getrandbits(16) for _ in range(5)]
            y = [self.rng.getrandbits(16) for _ in range(5)]
            ex = [encrypt(self.pk, v) for v in x]
            ey = [encrypt(self.pk, v) for v in y]
            got = decrypt(self.sk, host.ssed(ex, ey))
            res.check(got == oracle.squared_distance(x, y), f"X={x} Y={y} got={got}")
        host.close()
        return res

    def sbd(self, trials: int) -> SuiteResult:
        res = SuiteResult("SBD")
        host = self.host(ProtocolTag.SBD)
        zs = [self.rng.getrandbits(32) for _ in range(trials)]
        decomposed = host.sbd_many([encrypt(self.pk, z) for z in zs], 32)
        for z, bits in zip(zs, decomposed):
            got = [decrypt(self.sk, b) for b in bits]
            res.check(got == oracle.binary_decompose(z, 32), f"z={z} bits={got}")
        host.close()
        return res

    def smin(self, trials: int) -> SuiteResult:
        res = SuiteResult("SMIN")
        host = self.host(ProtocolTag.SMIN, 20)
        for _ in range(trials):
            u, v = self.rng.getrandbits(20), self.rng.getrandbits(20)
            ub, vb = host.sbd_many([encrypt(self.pk, u), encrypt(self.pk, v)], 20)
            bits, pay = host.smin(ub, encrypt(self.pk, 1), vb, encrypt(self.pk, 2))
            want = oracle.min_n_plain([(u, 1), (v, 2)])
            got = (self.bits_value(bits), decrypt(self.sk, pay))
            res.check(got == want, f"u={u} v={v} got={got}")
        host.close()
        return res

    def smin_n(self, trials: int, size: int = 25) -> SuiteResult:
        res = SuiteResult("SMIN_n")
        host = self.host(ProtocolTag.SMINN, 20)
        for _ in range(trials):
            vals = [self.rng.getrandbits(20) for _ in range(size)]
            bits = host.sbd_many([encrypt(self.pk, v) for v in vals], 20)
            entries = [(b, encrypt(self.pk, i)) for i, b in enumerate(bits)]
            mb, pay = host.smin_n(entries)
            want = oracle.min_n_plain([(v, i) for i, v in enumerate(vals)])
            got = (self.bits_value(mb), decrypt(self.sk, pay))
            res.check(got == want, f"values={vals} got={got}")
        host.close()
        return res

    def end_to_end(self, queries: int, n: int = 30, m: int = 4, attr_bits: int = 8, w: int = 3) -> SuiteResult:
        res = SuiteResult("PPkNN")
        l = 2 * attr_bits + (m - 1).bit_length()
        records = distinct_distance_dataset(self.rng, n, m, attr_bits, w)
        db = knn.encrypt_database(self.pk, records, w=w, l=l)
        for i in range(queries):
            k = (1, 3, 5)[i % 3]
            q = query_with_distinct_distances(self.rng, records, m, attr_bits)
            host = self.host(ProtocolTag.PPKNN, l)
            result = knn.classify(host, db, knn.encrypt_query(self.pk, q, m, l), k)
            host.close()
            want = oracle.knn_classify_plain(records, q, k)
            res.check(result.label == want, f"q={q} k={k} got={result.label} want={want}")
        return res


def run_all(trials: int = 20, bits: int = 512, seed: int | None = None, literal_sm: bool = False,
            report: Callable[[SuiteResult], None] | None = None) -> list[SuiteResult]:
    rng = random.Random(seed)
    pk, sk = keygen(bits, rng if seed is not None else None)
    results = []
    with local_parties(sk) as (endpoint, _):
        v = Verifier(pk, sk, endpoint, rng, literal_sm)
        for name, suite in (
            ("paillier", lambda: v.paillier(trials)),
            ("SM", lambda: v.sm(trials)),
            ("SSED", lambda: v.ssed(trials)),
            ("SBD", lambda: v.sbd(trials)),
            ("SMIN", lambda: v.smin(trials)),
            ("SMIN_n", lambda: v.smin_n(max(1, trials // 10))),
            ("PPkNN", lambda: v.end_to_end(max(1, trials // 10))),
        ):
            try:
                r = suite()
            except PPKNNError as exc:
                r = SuiteResult(name, 0, 1, [f"aborted: {exc.code}: {exc}"])
            results.append(r)
            if report:
                report(r)
    return results
