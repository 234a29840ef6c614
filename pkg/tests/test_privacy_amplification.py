"""
Tests for Toeplitz hashing and key verification tags.
"""
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import DomainError
from src.services.privacy_amplification import (
    TAG_BITS,
    ToeplitzSpec,
    random_seed_bits,
    toeplitz_hash,
    toeplitz_matrix,
    verify_tag,
)


class TestToeplitzHash(unittest.TestCase):

    def test_matrix_layout(self):
        seed = np.array([1, 0, 1, 1, 0, 0, 1], dtype=np.uint8)
        M = toeplitz_matrix(ToeplitzSpec(8, 3, seed))
        np.testing.assert_array_equal(M[:, :3], np.eye(3, dtype=np.uint8))
        # first column of T is seed[0..m) read bottom-up, first row is seed[m-1..n-1)
        np.testing.assert_array_equal(M[::-1, 3], seed[:3])
        np.testing.assert_array_equal(M[0, 3:], seed[2:7])

    def test_fft_product_matches_the_explicit_matrix(self):
        rng = np.random.default_rng(0)
        for n, m in ((12, 4), (1000, 300), (4096, 1500)):
            spec = ToeplitzSpec(n, m, random_seed_bits(n - 1, rng))
            key = rng.integers(0, 2, n, dtype=np.uint8)
            expected = toeplitz_matrix(spec).astype(np.int64) @ key % 2
            np.testing.assert_array_equal(toeplitz_hash(key, spec), expected)

    def test_two_universal_exhaustively(self):
        n, m = 12, 4
        seeds = ((np.arange(2 ** (n - 1))[:, None] >> np.arange(n - 1)) & 1).astype(np.uint8)
        matrices = np.stack([toeplitz_matrix(ToeplitzSpec(n, m, s)) for s in seeds])
        # the hash is linear, so x and y collide exactly when M (x ^ y) = 0
        diffs = ((np.arange(1, 2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.uint8)
        images = np.einsum("sij,dj->sdi", matrices, diffs, dtype=np.int16) % 2
        collisions = np.all(images == 0, axis=2).sum(axis=0)
        self.assertLessEqual(collisions.max() / len(seeds), 2.0 ** -m)

    def test_validation(self):
        with self.assertRaises(DomainError):
            ToeplitzSpec(8, 9, np.zeros(7, dtype=np.uint8))
        with self.assertRaises(DomainError):
            ToeplitzSpec(8, 3, np.zeros(5, dtype=np.uint8))
        spec = ToeplitzSpec(8, 3, np.zeros(7, dtype=np.uint8))
        with self.assertRaises(DomainError):
            toeplitz_hash(np.zeros(7, dtype=np.uint8), spec)


class TestVerifyTag(unittest.TestCase):

    def test_tags(self):
        rng = np.random.default_rng(1)
        key = rng.integers(0, 2, 5000, dtype=np.uint8)
        other = key.copy()
        other[123] ^= 1
        self.assertEqual(verify_tag(key, 42), verify_tag(key.copy(), 42))
        self.assertNotEqual(verify_tag(key, 42), verify_tag(other, 42))
        self.assertLess(verify_tag(key, 42), 2 ** TAG_BITS)
        self.assertEqual(verify_tag(np.zeros(0, dtype=np.uint8), 42), 0)


if __name__ == '__main__':
    unittest.main()
