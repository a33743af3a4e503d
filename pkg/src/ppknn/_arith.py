"""Big-integer kernels with a switchable backend.

Every modular exponentiation in the package goes through this module.  Two
backends exist:

* ``gmpy2`` -- GMP-backed kernels, the default when gmpy2 is importable.
* ``python`` -- builtin ``pow`` and a hand-written Miller-Rabin test.

The backend is picked from the ``PPKNN_BACKEND`` environment variable at
import time and can be swapped later with :func:`set_backend` (used by the
benchmark).  Callers must look functions up through the module
(``_arith.powmod(...)``) so a swap takes effect immediately.
"""

from __future__ import annotations

import os
import random
from math import gcd

try:
    import gmpy2
except ImportError:  # pragma: no cover - exercised only without gmpy2
    gmpy2 = None

MR_ROUNDS = 64

_SMALL_PRIMES = [
    p for p in range(3, 2000) if all(p % d for d in range(2, int(p**0.5) + 1))
]


def _py_powmod(base: int, exp: int, mod: int) -> int:
    return pow(base, exp, mod)


def _py_invert(x: int, mod: int) -> int:
    return pow(x, -1, mod)


def _py_is_probable_prime(n: int, rounds: int = MR_ROUNDS) -> bool:
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    rng = random.SystemRandom()
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _gmp_powmod(base: int, exp: int, mod: int) -> int:
    return int(gmpy2.powmod(base, exp, mod))


def _gmp_invert(x: int, mod: int) -> int:
    return int(gmpy2.invert(x, mod))


def _gmp_is_probable_prime(n: int, rounds: int = MR_ROUNDS) -> bool:
    return bool(gmpy2.is_prime(n, rounds))


_BACKENDS = {
    "python": (_py_powmod, _py_invert, _py_is_probable_prime),
}
if gmpy2 is not None:
    _BACKENDS["gmpy2"] = (_gmp_powmod, _gmp_invert, _gmp_is_probable_prime)

powmod = _py_powmod
invert = _py_invert
is_probable_prime = _py_is_probable_prime
backend = "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    """Select the kernel backend (``"gmpy2"`` or ``"python"``)."""
    global powmod, invert, is_probable_prime, backend
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown or unavailable backend {name!r}; have {available_backends()}"
        )
    powmod, invert, is_probable_prime = _BACKENDS[name]
    backend = name


def random_prime(bits: int, rng) -> int:
    """Random probable prime with exactly ``bits`` bits and its top two bits set.

    Setting the second-highest bit guarantees the product of two such primes
    has exactly ``2 * bits`` bits.
    """
    top = (1 << (bits - 1)) | (1 << (bits - 2))
    while True:
        candidate = rng.getrandbits(bits) | top | 1
        if is_probable_prime(candidate):
            return candidate


def lcm(a: int, b: int) -> int:
    return a // gcd(a, b) * b


set_backend(os.environ.get("PPKNN_BACKEND", "gmpy2" if gmpy2 is not None else "python"))
