"""Paillier cryptosystem with generator g = N + 1.

Keys, probabilistic encryption, CRT decryption and the additive homomorphic
operations that every two-party protocol in the package is built from.
Plaintexts are plain ``int`` values in ``[0, N)``; ciphertexts are wrapped in
:class:`Ciphertext` so they cannot be confused with plaintexts.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

from . import _arith
from .errors import InsecureParameters, MalformedCiphertext, PlaintextOutOfRange

MIN_KEY_BITS = 256
DEFAULT_KEY_BITS = 2048

_SYSTEM_RNG = secrets.SystemRandom()


@dataclass(frozen=True, slots=True)
class Ciphertext:
    value: int


@dataclass(frozen=True)
class PublicKey:
    modulus_n: int
    modulus_n_squared: int
    generator_g: int
    bit_length: int

    @classmethod
    def from_modulus(cls, n: int) -> "PublicKey":
        return cls(n, n * n, n + 1, n.bit_length())


@dataclass(frozen=True)
class SecretKey:
    public_key: PublicKey
    prime_p: int
    prime_q: int
    lam: int
    mu: int
    # CRT precomputation
    _p2: int = field(repr=False)
    _q2: int = field(repr=False)
    _hp: int = field(repr=False)
    _hq: int = field(repr=False)
    _p_inv_q: int = field(repr=False)
    _p2_inv_q2: int = field(repr=False)

    @classmethod
    def from_primes(cls, p: int, q: int) -> "SecretKey":
        if p == q:
            raise InsecureParameters("p and q must differ")
        pk = PublicKey.from_modulus(p * q)
        n, n2 = pk.modulus_n, pk.modulus_n_squared
        lam = _arith.lcm(p - 1, q - 1)
        mu = _arith.invert((_arith.powmod(pk.generator_g, lam, n2) - 1) // n, n)
        p2, q2 = p * p, q * q
        hp = _arith.invert((_arith.powmod(pk.generator_g, p - 1, p2) - 1) // p, p)
        hq = _arith.invert((_arith.powmod(pk.generator_g, q - 1, q2) - 1) // q, q)
        return cls(
            pk, p, q, lam, mu, p2, q2, hp, hq,
            _arith.invert(p, q), _arith.invert(p2, q2),
        )


def keygen(bit_length: int, rng=None, *, min_bits: int = MIN_KEY_BITS) -> tuple[PublicKey, SecretKey]:
    """Generate a key pair whose modulus N has exactly ``bit_length`` bits."""
    if bit_length < min_bits:
        raise InsecureParameters(f"key size {bit_length} below minimum {min_bits}")
    if bit_length % 2:
        raise InsecureParameters(f"key size must be even, got {bit_length}")
    rng = rng or _SYSTEM_RNG
    half = bit_length // 2
    while True:
        p = _arith.random_prime(half, rng)
        q = _arith.random_prime(half, rng)
        if p != q and gcd(p * q, (p - 1) * (q - 1)) == 1:
            break
    sk = SecretKey.from_primes(p, q)
    return sk.public_key, sk


def _check_plaintext(pk: PublicKey, m: int) -> None:
    if not 0 <= m < pk.modulus_n:
        raise PlaintextOutOfRange(f"plaintext not in [0, N): {m}")


def check_ciphertext(pk: PublicKey, c: Ciphertext) -> None:
    v = c.value
    if not 0 < v < pk.modulus_n_squared or gcd(v, pk.modulus_n) != 1:
        raise MalformedCiphertext("ciphertext is not a unit modulo N^2")


def random_unit(pk: PublicKey, rng=None) -> int:
    """Uniform r in [1, N) with gcd(r, N) = 1."""
    rng = rng or _SYSTEM_RNG
    n = pk.modulus_n
    while True:
        r = rng.randrange(1, n)
        if gcd(r, n) == 1:
            return r


def _noise(pk: PublicKey, rng) -> int:
    return _arith.powmod(random_unit(pk, rng), pk.modulus_n, pk.modulus_n_squared)


def encrypt(pk: PublicKey, m: int, rng=None) -> Ciphertext:
    _check_plaintext(pk, m)
    n2 = pk.modulus_n_squared
    # g^m = (1 + N)^m = 1 + mN mod N^2
    return Ciphertext((1 + m * pk.modulus_n) * _noise(pk, rng) % n2)


def encrypt_with_secret(sk: SecretKey, m: int, rng=None) -> Ciphertext:
    """Encryption by the key holder; computes r^N with CRT over p^2 and q^2."""
    pk = sk.public_key
    _check_plaintext(pk, m)
    n = pk.modulus_n
    r = random_unit(pk, rng)
    p, q, p2, q2 = sk.prime_p, sk.prime_q, sk._p2, sk._q2
    xp = _arith.powmod(r % p2, n % (p * (p - 1)), p2)
    xq = _arith.powmod(r % q2, n % (q * (q - 1)), q2)
    noise = xp + p2 * ((xq - xp) * sk._p2_inv_q2 % q2)
    return Ciphertext((1 + m * n) * noise % pk.modulus_n_squared)


def decrypt(sk: SecretKey, c: Ciphertext) -> int:
    check_ciphertext(sk.public_key, c)
    p, q, p2, q2 = sk.prime_p, sk.prime_q, sk._p2, sk._q2
    mp = (_arith.powmod(c.value % p2, p - 1, p2) - 1) // p * sk._hp % p
    mq = (_arith.powmod(c.value % q2, q - 1, q2) - 1) // q * sk._hq % q
    return mp + p * ((mq - mp) * sk._p_inv_q % q)


def decrypt_textbook(sk: SecretKey, c: Ciphertext) -> int:
    """m = L(c^lambda mod N^2) * mu mod N, without CRT."""
    pk = sk.public_key
    check_ciphertext(pk, c)
    u = _arith.powmod(c.value, sk.lam, pk.modulus_n_squared)
    return (u - 1) // pk.modulus_n * sk.mu % pk.modulus_n


def homomorphic_add(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    return Ciphertext(c1.value * c2.value % pk.modulus_n_squared)


def scalar_exp(pk: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    if not 0 <= k < pk.modulus_n:
        raise PlaintextOutOfRange(f"scalar not in [0, N): {k}")
    return Ciphertext(_arith.powmod(c.value, k, pk.modulus_n_squared))


def rerandomize(pk: PublicKey, c: Ciphertext, rng=None) -> Ciphertext:
    """Multiply by a fresh encryption of zero."""
    return Ciphertext(c.value * _noise(pk, rng) % pk.modulus_n_squared)


def negate(pk: PublicKey, c: Ciphertext) -> Ciphertext:
    """Encryption of -m mod N via the modular inverse (cheaper than c^(N-1))."""
    return Ciphertext(_arith.invert(c.value, pk.modulus_n_squared))


def subtract(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    return homomorphic_add(pk, c1, negate(pk, c2))


def add_plain(pk: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    """Add a public constant without fresh randomness: c * (1 + kN)."""
    n = pk.modulus_n
    return Ciphertext(c.value * (1 + (k % n) * n) % pk.modulus_n_squared)


def small_scalar(pk: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    """c^k for a possibly negative public scalar, reduced modulo N."""
    return Ciphertext(_arith.powmod(c.value, k % pk.modulus_n, pk.modulus_n_squared))


def trivial(pk: PublicKey, m: int) -> Ciphertext:
    """Deterministic encryption g^m with r = 1; only for values that are public anyway."""
    n = pk.modulus_n
    return Ciphertext((1 + (m % n) * n) % pk.modulus_n_squared)


# -- key files ---------------------------------------------------------------


def _parse_fields(text: str) -> dict[str, int]:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        if not sep or value != value.lower() or (len(value) > 1 and value[0] == "0"):
            raise ValueError(f"malformed key file line {lineno}: {line!r}")
        fields[name] = int(value, 16)
    return fields


def format_public_key(pk: PublicKey) -> str:
    return f"n={pk.modulus_n:x}\nbits={pk.bit_length:x}\n"


def format_secret_key(sk: SecretKey) -> str:
    return f"p={sk.prime_p:x}\nq={sk.prime_q:x}\n"


def parse_public_key(text: str) -> PublicKey:
    fields = _parse_fields(text)
    pk = PublicKey.from_modulus(fields["n"])
    if fields.get("bits", pk.bit_length) != pk.bit_length:
        raise ValueError("bits field does not match modulus size")
    return pk


def parse_secret_key(text: str) -> SecretKey:
    fields = _parse_fields(text)
    return SecretKey.from_primes(fields["p"], fields["q"])


def save_keys(directory: str | Path, pk: PublicKey, sk: SecretKey, stem: str = "ppknn") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pub, sec = directory / f"{stem}.pub", directory / f"{stem}.key"
    pub.write_text(format_public_key(pk))
    sec.write_text(format_secret_key(sk))
    sec.chmod(0o600)
    return pub, sec


def load_public_key(path: str | Path) -> PublicKey:
    return parse_public_key(Path(path).read_text())


def load_secret_key(path: str | Path) -> SecretKey:
    return parse_secret_key(Path(path).read_text())
