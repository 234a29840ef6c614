"""
Toeplitz hashing: privacy amplification and key verification tags.

The augmented Toeplitz matrix is (I_m | T) with T the m x (n - m) Toeplitz
matrix T[i, j] = seed[m - 1 - i + j]. Its first column is seed[0..m) read
bottom-up and its first row is seed[m-1..n-1), the corner shared.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal

from ..errors import DomainError

logger = logging.getLogger(__name__)

TAG_BITS = 64


@dataclass(frozen=True, eq=False)
class ToeplitzSpec:
    n: int
    m: int
    seed_bits: np.ndarray

    def __post_init__(self):
        if not 0 < self.m <= self.n:
            raise DomainError(f"need 0 < m <= n, got m={self.m}, n={self.n}")
        if len(self.seed_bits) != self.n - 1:
            raise DomainError(f"seed must hold n - 1 = {self.n - 1} bits, got {len(self.seed_bits)}")


def random_seed_bits(length: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=length, dtype=np.uint8)


def toeplitz_product(diagonals: np.ndarray, x: np.ndarray, rows: int) -> np.ndarray:
    """
    GF(2) product of the Toeplitz matrix M[i, j] = diagonals[rows - 1 - i + j] with x.

    diagonals must hold rows + len(x) - 1 bits. Computed as a correlation via FFT;
    sums stay far below 2^52, so rounding is exact.
    """
    if len(x) == 0:
        return np.zeros(rows, dtype=np.uint8)
    full = signal.fftconvolve(np.asarray(diagonals, dtype=float), np.asarray(x, dtype=float)[::-1])
    # full[k + len(x) - 1] = sum_j diagonals[k + j] x[j]; row i uses k = rows - 1 - i.
    z = np.rint(full[len(x) - 1: len(x) - 1 + rows]).astype(np.int64)
    return (z[::-1] % 2).astype(np.uint8)


def toeplitz_matrix(spec: ToeplitzSpec) -> np.ndarray:
    """Explicit (I_m | T) matrix; meant for small n."""
    i = np.arange(spec.m)[:, None]
    j = np.arange(spec.n - spec.m)[None, :]
    T = np.asarray(spec.seed_bits, dtype=np.uint8)[spec.m - 1 - i + j]
    return np.hstack([np.eye(spec.m, dtype=np.uint8), T])


def toeplitz_hash(key: np.ndarray, spec: ToeplitzSpec) -> np.ndarray:
    """
    Privacy-amplified key (I_m | T) key over GF(2).

    Raises:
        DomainError: If the key length is not spec.n.
    """
    key = np.asarray(key, dtype=np.uint8)
    if key.shape != (spec.n,):
        raise DomainError(f"key length {key.size} does not match hash input length {spec.n}")
    tail = toeplitz_product(spec.seed_bits, key[spec.m:], spec.m)
    return key[:spec.m] ^ tail


def tag_seed_bits(key_length: int, tag_seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(int(tag_seed)))
    return random_seed_bits(key_length + TAG_BITS - 1, rng)


def verify_tag(key: np.ndarray, tag_seed: int) -> int:
    """
    64-bit Toeplitz tag of a key; the empty key has tag 0.

    The 64 x n Toeplitz matrix is expanded from tag_seed, so distinct keys
    collide with probability 2^-64 over seeds.
    """
    key = np.asarray(key, dtype=np.uint8)
    if key.size == 0:
        return 0
    bits = toeplitz_product(tag_seed_bits(key.size, tag_seed), key, TAG_BITS)
    return int.from_bytes(np.packbits(bits).tobytes(), "big")
