"""Compare the gmpy2 and pure-Python big-integer backends.

    python benchmarks/bench_backends.py [--bits 512] [--reps 200] [--classify]

Times the raw kernels (modular exponentiation modulo N^2, encryption, CRT
decryption), one SM round trip, and optionally one full classification
(n=30, m=4, l=18, k=3) under each available backend.  The backend can also
be pinned for any other run with ``PPKNN_BACKEND=python`` or ``=gmpy2``.
"""

import argparse
import random
import time

from ppknn import _arith
from ppknn.paillier import decrypt, encrypt, keygen
from ppknn.pipeline import PlainRecord, classify, encrypt_database, encrypt_query
from ppknn.protocols import DataHost, ProtocolConfig, local_parties


def timed(fn, reps):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps


def kernel_rows(pk, sk, reps):
    rng = random.Random(0)
    n2 = pk.modulus_n_squared
    base, exp = rng.randrange(n2), rng.randrange(pk.modulus_n)
    c = encrypt(pk, 12345)
    yield "powmod mod N^2", timed(lambda: _arith.powmod(base, exp, n2), reps)
    yield "encrypt", timed(lambda: encrypt(pk, 42), reps)
    yield "decrypt (CRT)", timed(lambda: decrypt(sk, c), reps)
    with local_parties(sk) as (endpoint, _):
        host = DataHost.open(endpoint, ProtocolConfig(pk, 32))
        a, b = encrypt(pk, 6), encrypt(pk, 7)
        yield "SM round trip", timed(lambda: host.sm(a, b), max(1, reps // 4))
        host.close()


def classify_row(pk, sk):
    rng = random.Random(1)
    records = [PlainRecord([rng.randrange(256) for _ in range(4)], rng.randrange(3)) for _ in range(30)]
    db = encrypt_database(pk, records, w=3, l=18)
    q = encrypt_query(pk, [rng.randrange(256) for _ in range(4)], 4, 18)
    with local_parties(sk) as (endpoint, _):
        host = DataHost.open(endpoint, ProtocolConfig(pk, 18))
        start = time.perf_counter()
        classify(host, db, q, 3)
        elapsed = time.perf_counter() - start
        host.close()
    return "classify n=30 k=3", elapsed


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--bits", type=int, default=512)
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--classify", action="store_true", help="also time one full classification")
    args = parser.parse_args()

    pk, sk = keygen(args.bits, random.Random(7))
    print(f"--- {args.bits}-bit modulus, {args.reps} reps per kernel ---")
    results = {}
    for name in _arith.available_backends():
        _arith.set_backend(name)
        rows = list(kernel_rows(pk, sk, args.reps))
        if args.classify:
            rows.append(classify_row(pk, sk))
        results[name] = dict(rows)
        for label, seconds in rows:
            print(f"{name:>7}  {label:<20} {seconds * 1e3:10.3f} ms")

    if set(results) == {"gmpy2", "python"}:
        print()
        for label in results["python"]:
            speedup = results["python"][label] / results["gmpy2"][label]
            print(f"speedup {label:<20} {speedup:6.1f}x")
    else:
        print("\ngmpy2 not installed; only the pure-Python backend was timed")


if __name__ == "__main__":
    main()
