"""``ppknn`` command-line tool.

Exit codes: 0 success, 1 protocol or verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import random
import sys
import time
from pathlib import Path

from . import _arith
from . import pipeline as knn
from .errors import InsecureParameters, PPKNNError
from .paillier import (
    DEFAULT_KEY_BITS,
    encrypt,
    keygen,
    load_public_key,
    load_secret_key,
    save_keys,
)
from .protocols import DataHost, ProtocolConfig, local_parties, smin_sm_calls
from .runtime import Endpoint, ProtocolTag, SocketTransport, listen_socket, parse_address
from .service import P1Service, query_remote, serve_p2

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
INSECURE_FLOOR = 512

log = logging.getLogger("ppknn")


class UsageError(Exception):
    pass


def _address(text: str) -> tuple[str, int]:
    try:
        return parse_address(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _check_key_bits(bits: int, insecure: bool) -> None:
    if bits < DEFAULT_KEY_BITS and not insecure:
        raise InsecureParameters(f"{bits}-bit keys need --insecure (default is {DEFAULT_KEY_BITS})")
    if bits < INSECURE_FLOOR:
        raise InsecureParameters(f"key size {bits} below the {INSECURE_FLOOR}-bit floor")


# -- keygen -----------------------------------------------------------------------


def cmd_keygen(args) -> int:
    _check_key_bits(args.bits, args.insecure)
    rng = random.Random(args.seed) if args.seed is not None else None
    pk, sk = keygen(args.bits, rng)
    pub, sec = save_keys(args.out, pk, sk, args.stem)
    print(f"wrote {pub} and {sec} ({pk.bit_length}-bit modulus)")
    return EXIT_OK


# -- encrypt-db -------------------------------------------------------------------


def read_dataset(path: str | Path) -> list[knn.PlainRecord]:
    """CSV rows of integer attributes with the class label last; a header row is skipped."""
    records = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [int(cell) for cell in row]
            except ValueError:
                if lineno == 1 and not records:
                    continue
                raise UsageError(f"{path}: line {lineno}: non-integer cell in {row!r}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise UsageError(f"{path}: line {lineno}: expected {width} columns, got {len(values)}")
            if len(values) < 2:
                raise UsageError(f"{path}: line {lineno}: need attributes plus a label")
            records.append(knn.PlainRecord(values[:-1], values[-1]))
    return records


def cmd_encrypt_db(args) -> int:
    pk = load_public_key(args.pub)
    records = read_dataset(args.csv)
    db = knn.encrypt_database(pk, records, w=args.classes, l=args.l)
    knn.save_database(args.out, db)
    print(f"n={db.n} m={db.m} w={db.w} l={db.l}")
    return EXIT_OK


# -- serve --------------------------------------------------------------------------


def cmd_serve(args) -> int:
    if args.role == "p2":
        if not args.listen or not args.key:
            raise UsageError("P2 needs --listen and --key")
        sk = load_secret_key(args.key)
        if args.pub and load_public_key(args.pub).modulus_n != sk.public_key.modulus_n:
            raise UsageError("--pub does not match --key")
        host, port = args.listen
        log.info("P2 listening on %s:%d", host, port)
        serve_p2(sk, host, port, concurrent=args.concurrent, record=args.record,
                 max_connections=args.max_connections)
        return EXIT_OK

    if not args.connect or not args.db or not args.pub or not args.listen:
        raise UsageError("P1 needs --connect, --listen, --db and --pub")
    pk = load_public_key(args.pub)
    db = knn.load_database(args.db, pk)
    user_host, user_port = args.listen
    srv = listen_socket(user_host, user_port)
    p2 = Endpoint(SocketTransport.connect(*args.connect), record=args.record)
    service = P1Service(p2, pk, db, args.seed)
    service.check_peer()
    log.info("P1 serving %d records; users on %s:%d", db.n, user_host, user_port)
    try:
        service.serve_users(srv, args.max_connections)
    finally:
        srv.close()
        p2.close()
    return EXIT_OK


# -- query --------------------------------------------------------------------------


def _values(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_query(args) -> int:
    if args.k < 1:
        raise UsageError(f"k-out-of-range: k must be at least 1, got {args.k}")
    pk = load_public_key(args.pub)
    values = [v for chunk in args.values for v in chunk]
    mode = knn.Mode.FAST if args.fast else knn.Mode.SECURE
    label = query_remote(*args.connect, pk, values, args.k, mode)
    print(label)
    return EXIT_OK


# -- verify -------------------------------------------------------------------------


def cmd_verify(args) -> int:
    from .verify import run_all

    literal = args.inject_fault == "literal-sm"

    def report(r):
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.passed}/{r.total}", flush=True)
        for detail in r.failures[:5]:
            print(f"    {detail}")

    results = run_all(args.trials, args.bits, args.seed, literal, report)
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


# -- bench --------------------------------------------------------------------------


def bench_rows(pk, sk, *, n: int, m: int, l: int, k: int, reps: int = 3, seed: int = 0):
    """Yield (protocol, n, m, l, k, millis, sm_calls) with per-invocation figures."""
    rng = random.Random(seed)
    attr_bits = knn.attribute_bits(l, m)
    with local_parties(sk) as (endpoint, _):
        host = DataHost.open(endpoint, ProtocolConfig(pk, l))

        def timed(fn):
            before = host.sm_calls
            start = time.perf_counter()
            for _ in range(reps):
                fn()
            millis = (time.perf_counter() - start) * 1000 / reps
            return millis, (host.sm_calls - before) // reps

        a, b = encrypt(pk, rng.getrandbits(l)), encrypt(pk, rng.getrandbits(l))
        yield ("sm", 1, 0, l, 0, *timed(lambda: host.sm(a, b)))
        x = [encrypt(pk, rng.getrandbits(attr_bits)) for _ in range(m)]
        y = [encrypt(pk, rng.getrandbits(attr_bits)) for _ in range(m)]
        yield ("ssed", 1, m, l, 0, *timed(lambda: host.ssed(x, y)))
        yield ("sbd", 1, 0, l, 0, *timed(lambda: host.sbd(a)))
        ub, vb = host.sbd(a), host.sbd(b)
        yield ("smin", 2, 0, l, 0, *timed(lambda: host.smin(ub, a, vb, b)))
        entries = [(ub, a)] * n
        yield ("smin_n", n, 0, l, 0, *timed(lambda: host.smin_n(entries)))
        records = [
            knn.PlainRecord([rng.getrandbits(attr_bits) for _ in range(m)], rng.randrange(3))
            for _ in range(n)
        ]
        db = knn.encrypt_database(pk, records, w=3, l=l)
        q = knn.encrypt_query(pk, [rng.getrandbits(attr_bits) for _ in range(m)], m, l)
        yield ("classify", n, m, l, k, *timed(lambda: knn.classify(host, db, q, k)))
        host.close()


def cmd_bench(args) -> int:
    if args.backend:
        _arith.set_backend(args.backend)
    if args.key:
        sk = load_secret_key(args.key)
        pk = sk.public_key
    else:
        pk, sk = keygen(args.bits, random.Random(args.seed))
    print(f"# backend={_arith.backend} key_bits={pk.bit_length}")
    print("protocol\tn\tm\tl\tk\tmillis\tsm_calls")
    for row in bench_rows(pk, sk, n=args.n, m=args.m, l=args.l, k=args.k, reps=args.reps, seed=args.seed):
        name, n, m, l, k, millis, calls = row
        print(f"{name}\t{n}\t{m}\t{l}\t{k}\t{millis:.1f}\t{calls}", flush=True)
    print(f"# analytical: ssed={args.m} smin={smin_sm_calls(args.l)}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppknn", description="Privacy-preserving k-NN over Paillier-encrypted data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a Paillier key pair")
    p.add_argument("--bits", type=int, default=DEFAULT_KEY_BITS)
    p.add_argument("--out", default=".")
    p.add_argument("--stem", default="ppknn")
    p.add_argument("--insecure", action="store_true", help="allow keys below 2048 bits (tests only)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("encrypt-db", help="encrypt a CSV dataset attribute-wise")
    p.add_argument("--pub", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", "-w", type=int, required=True)
    p.add_argument("--l", type=int, default=32, help="bit budget for distances")
    p.set_defaults(func=cmd_encrypt_db)

    p = sub.add_parser("serve", help="run P1 or P2")
    p.add_argument("--role", choices=["p1", "p2"], required=True)
    p.add_argument("--listen", type=_address, help="P2: address for P1; P1: address for users")
    p.add_argument("--connect", type=_address, help="P1: address of P2")
    p.add_argument("--key", help="P2 secret key file")
    p.add_argument("--pub", help="public key file")
    p.add_argument("--db", help="P1 encrypted database file")
    p.add_argument("--concurrent", action="store_true", help="serve independent sessions in parallel")
    p.add_argument("--record", action="store_true", help="keep transcripts")
    p.add_argument("--seed", type=int, help="P1 randomness seed (reproducible runs)")
    p.add_argument("--max-connections", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("query", help="classify a record as the user")
    p.add_argument("--connect", type=_address, required=True, help="P1 user address")
    p.add_argument("--pub", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--fast", action="store_true", help="deliver the k labels; vote locally")
    p.add_argument("values", type=_values, nargs="+")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("verify", help="run the in-process differential suites")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--bits", type=int, default=512)
    p.add_argument("--seed", type=int)
    p.add_argument("--inject-fault", choices=["literal-sm"])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time each protocol")
    p.add_argument("--bits", type=int, default=512)
    p.add_argument("--key", help="secret key file instead of a fresh key")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--l", type=int, default=32)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=_arith.available_backends())
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, InsecureParameters) as exc:
        print(f"ppknn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"ppknn: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except PPKNNError as exc:
        print(f"ppknn: error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except KeyboardInterrupt:
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
