"""
LDPC codes for syndrome-based information reconciliation.

Two construction profiles are available. The regular profile has column
weight 3 and row weights within one of each other. The irregular profile,
the default, mixes a degree-2 staircase (m - 1 columns), a tenth or so of
high-degree columns and weight-3 columns for the rest; it decodes much
closer to the Shannon limit at the same rate. Both are built column by
column onto the least-loaded rows without 4-cycles.

Decoding is sum-product belief propagation on the error pattern between the
two keys, driven by the syndrome difference. A block that fails may be
retried once after the peer discloses its bits at the least reliable
positions of the failed pass.
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy import sparse

from ..errors import ConfigError, DecodeFailure, DomainError, LdpcConstructionError

logger = logging.getLogger(__name__)

COLUMN_WEIGHT = 3
HIGH_DEGREE = 12
HIGH_FRACTION = 0.09
MAX_RESAMPLES = 100
MAX_CONSTRUCTION_ATTEMPTS = 100
# Log-likelihood ratio pinned on disclosed bits.
KNOWN_LLR = 40.0


class CodeProfile(Enum):
    REGULAR = "regular"
    IRREGULAR = "irregular"


@dataclass(frozen=True)
class CodesConfig:
    """
    Reconciliation parameters: block length n, code rate, construction
    profile and decoder limits. reveal_bits is the number of bits disclosed
    for a block whose first decoding pass fails; 0 retries with damped
    messages instead.
    """

    block_length: int = 4096
    rate: float = 0.65
    profile: CodeProfile = CodeProfile.IRREGULAR
    max_iterations: int = 100
    reveal_bits: int = 80
    seed: int = 7
    max_failure_rate: float = 0.5

    def __post_init__(self):
        problems = []
        if self.block_length < 256:
            problems.append("block_length must be at least 256")
        if not 0.0 < self.rate < 1.0:
            problems.append("rate must lie in (0, 1)")
        if self.max_iterations <= 0:
            problems.append("max_iterations must be positive")
        if not 0 <= self.reveal_bits < self.block_length:
            problems.append("reveal_bits must lie in [0, block_length)")
        if not 0.0 <= self.max_failure_rate <= 1.0:
            problems.append("max_failure_rate must lie in [0, 1]")
        if problems:
            raise ConfigError("; ".join(f"codes.{p}" for p in problems))


@dataclass(frozen=True, eq=False)
class LdpcCode:
    """
    Parity-check matrix H (m x n) as an edge list sorted by column, then row:
    edge k joins variable edge_vars[k] and check edge_checks[k].
    """

    n: int
    m: int
    edge_vars: np.ndarray
    edge_checks: np.ndarray
    seed: int
    profile: CodeProfile = CodeProfile.IRREGULAR

    @property
    def rate(self) -> float:
        return 1.0 - self.m / self.n

    @property
    def H(self) -> sparse.csr_matrix:
        data = np.ones(self.edge_vars.size, dtype=np.uint8)
        return sparse.csr_matrix((data, (self.edge_checks, self.edge_vars)), shape=(self.m, self.n))

    @property
    def row_weights(self) -> np.ndarray:
        return np.bincount(self.edge_checks, minlength=self.m)

    @property
    def column_weights(self) -> np.ndarray:
        return np.bincount(self.edge_vars, minlength=self.n)

    def column(self, j: int) -> np.ndarray:
        """Rows holding a one in column j, ascending."""
        lo, hi = np.searchsorted(self.edge_vars, [j, j + 1])
        return self.edge_checks[lo:hi]

    def to_bytes(self) -> bytes:
        header = np.array([self.n, self.m], dtype="<u4").tobytes()
        return header + self.column_weights.astype("<u4").tobytes() + self.edge_checks.astype("<u4").tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class DecodeResult:
    key: np.ndarray
    iterations: int
    corrected_bits: int


def syndrome_rows(code: LdpcCode, bits: np.ndarray) -> np.ndarray:
    return (np.bincount(code.edge_checks, weights=bits[code.edge_vars], minlength=code.m).astype(np.int64) % 2).astype(np.uint8)


def _link(rows: List[int], degree: np.ndarray, partners: List[set]) -> None:
    for r in rows:
        degree[r] += 1
        partners[r].update(x for x in rows if x != r)


def _pick_column(rng: np.random.Generator, degree: np.ndarray, partners: List[set]) -> Optional[List[int]]:
    """
    Three rows for the next regular column: rows of the lowest degree first, so
    row weights never differ by more than one, and no row pair that already
    shares a column (which would close a 4-cycle).
    """
    low = degree.min()
    levels = [np.flatnonzero(degree == low), np.flatnonzero(degree == low + 1)]
    forced = levels[0] if len(levels[0]) < COLUMN_WEIGHT else None
    chosen: List[int] = []
    if forced is not None:
        chosen = [int(r) for r in forced]
        for a in range(len(chosen)):
            for b in range(a + 1, len(chosen)):
                if chosen[b] in partners[chosen[a]]:
                    return None
        pool = levels[1]
    else:
        pool = levels[0]
    while len(chosen) < COLUMN_WEIGHT:
        excluded = set(chosen)
        for r in chosen:
            excluded |= partners[r]
        candidates = pool[~np.isin(pool, list(excluded))] if excluded else pool
        if candidates.size == 0:
            return None
        chosen.append(int(rng.choice(candidates)))
    return chosen


def _pick_rows(rng: np.random.Generator, weight: int, degree: np.ndarray,
               partners: List[set]) -> Optional[List[int]]:
    """`weight` rows, each the least loaded among rows sharing no column with those already chosen."""
    open_rows = np.ones(degree.size, dtype=bool)
    chosen: List[int] = []
    for _ in range(weight):
        candidates = np.flatnonzero(open_rows)
        if candidates.size == 0:
            return None
        load = degree[candidates]
        row = int(rng.choice(candidates[load == load.min()]))
        chosen.append(row)
        open_rows[row] = False
        if partners[row]:
            open_rows[np.fromiter(partners[row], dtype=np.int64, count=len(partners[row]))] = False
    return chosen


def _place(weights: List[int], m: int, rng: np.random.Generator, regular: bool,
           fixed: Optional[List[List[int]]] = None) -> Optional[List[List[int]]]:
    degree = np.zeros(m, dtype=np.int64)
    partners: List[set] = [set() for _ in range(m)]
    for rows in fixed or []:
        _link(rows, degree, partners)
    placed = []
    for weight in weights:
        for _ in range(MAX_RESAMPLES):
            rows = _pick_column(rng, degree, partners) if regular else _pick_rows(rng, weight, degree, partners)
            if rows is not None:
                break
        else:
            return None
        _link(rows, degree, partners)
        placed.append(sorted(rows))
    return placed


def _irregular_weights(n: int, m: int) -> Tuple[int, int, int]:
    """(staircase columns, high-degree columns, their degree); the remaining columns get weight 3."""
    stairs = m - 1
    high_degree = min(HIGH_DEGREE, max(COLUMN_WEIGHT + 1, m // 10))
    high = min(int(round(HIGH_FRACTION * n)), n - stairs)
    return stairs, high, high_degree


def _edges(columns: List[List[int]]) -> Tuple[np.ndarray, np.ndarray]:
    weights = np.array([len(c) for c in columns], dtype=np.int64)
    edge_vars = np.repeat(np.arange(len(columns), dtype=np.int64), weights)
    edge_checks = np.fromiter((r for c in columns for r in c), dtype=np.int64, count=int(weights.sum()))
    return edge_vars, edge_checks


@lru_cache(maxsize=8)
def ldpc_generate(n: int, rate: float, seed: int, profile: CodeProfile = CodeProfile.IRREGULAR) -> LdpcCode:
    """
    Pseudorandom 4-cycle-free parity-check matrix.

    The regular profile has column weight 3 and row weights within one of each
    other. The irregular profile puts high-degree columns first, then weight-3
    columns, then the degree-2 staircase over consecutive rows.

    Args:
        n: Block length (>= 256).
        rate: Code rate in (0, 1); m = ceil(n (1 - rate)) rows.
        seed: Construction seed; equal seeds give identical matrices.
        profile: Construction profile.

    Raises:
        DomainError: On a block length or rate outside the supported range.
        LdpcConstructionError: If no matrix satisfies the constraints.
    """
    if not 0.0 < rate < 1.0 or n < 256:
        raise DomainError(f"need 0 < rate < 1 and n >= 256, got rate={rate}, n={n}")
    m = int(math.ceil(n * (1.0 - rate) - 1e-9))
    regular = profile == CodeProfile.REGULAR
    if regular:
        weights, stair_rows = [COLUMN_WEIGHT] * n, []
    else:
        stairs, high, high_degree = _irregular_weights(n, m)
        weights = [high_degree] * high + [COLUMN_WEIGHT] * (n - stairs - high)
        stair_rows = [[r, r + 1] for r in range(stairs)]
    # A 4-cycle-free matrix never puts one row pair in two columns.
    pairs = sum(w * (w - 1) // 2 for w in weights) + len(stair_rows)
    if m < max(weights + [COLUMN_WEIGHT]) or pairs > m * (m - 1) // 2:
        raise LdpcConstructionError(f"{m} rows cannot host a {profile.value} code of length {n} without 4-cycles")
    for attempt in range(MAX_CONSTRUCTION_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        placed = _place(weights, m, rng, regular, fixed=stair_rows)
        if placed is not None:
            edge_vars, edge_checks = _edges(placed + stair_rows)
            logger.debug(f"Built {profile.value} LDPC code n={n} m={m} seed={seed} on attempt {attempt + 1}")
            return LdpcCode(n, m, edge_vars, edge_checks, seed, profile)
    raise LdpcConstructionError(f"no 4-cycle-free code n={n} m={m} after {MAX_CONSTRUCTION_ATTEMPTS} attempts")


def code_for(codes: CodesConfig) -> LdpcCode:
    return ldpc_generate(codes.block_length, codes.rate, codes.seed, codes.profile)


def ldpc_syndrome(key: np.ndarray, code: LdpcCode) -> np.ndarray:
    """
    Syndrome H key over GF(2).

    Raises:
        DomainError: If the key length is not code.n.
    """
    key = np.asarray(key, dtype=np.uint8)
    if key.shape != (code.n,):
        raise DomainError(f"key length {key.size} does not match code length {code.n}")
    return syndrome_rows(code, key)


def ldpc_decode(local_key: np.ndarray, remote_syndrome: np.ndarray, code: LdpcCode, crossover: float,
                max_iterations: int = 100, damping: float = 0.0,
                known: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> DecodeResult:
    """
    Correct local_key towards the key whose syndrome is remote_syndrome.

    Sum-product decoding of the error pattern e with H e = H local ^ remote,
    starting from the prior log-likelihood ratio log((1 - p) / p) per bit.
    damping mixes each new check message with the previous one.

    Args:
        known: Optional (positions, remote bits) disclosed by the peer; those
            positions start with a near-certain prior.

    Returns:
        DecodeResult with the corrected key.

    Raises:
        DomainError: On length mismatches or a crossover outside (0, 0.5).
        DecodeFailure: If the syndrome is not matched within max_iterations.
            Its reliability holds |LLR| per bit from the pass closest to a match.
    """
    local_key = np.asarray(local_key, dtype=np.uint8)
    remote_syndrome = np.asarray(remote_syndrome, dtype=np.uint8)
    if local_key.shape != (code.n,) or remote_syndrome.shape != (code.m,):
        raise DomainError("key or syndrome length does not match the code")
    if not 0.0 < crossover < 0.5:
        raise DomainError(f"crossover must lie in (0, 0.5), got {crossover}")
    prior = np.full(code.n, math.log((1.0 - crossover) / crossover))
    if known is not None:
        positions, bits = np.asarray(known[0], dtype=np.int64), np.asarray(known[1], dtype=np.uint8)
        if positions.shape != bits.shape or (positions.size and not 0 <= positions.min() <= positions.max() < code.n):
            raise DomainError("disclosed positions do not fit the code")
        prior[positions] = np.where(local_key[positions] != bits, -KNOWN_LLR, KNOWN_LLR)
    target = syndrome_rows(code, local_key) ^ remote_syndrome
    if not target.any() and not (prior < 0).any():
        return DecodeResult(local_key.copy(), 0, 0)

    var, chk = code.edge_vars, code.edge_checks
    target_sign = np.where(target[chk] == 1, -1.0, 1.0)
    to_check = prior[var]
    to_var = np.zeros(var.size)
    best_unmatched, reliability = code.m + 1, np.abs(prior)
    for iteration in range(1, max_iterations + 1):
        t = np.tanh(to_check / 2.0)
        log_mag = np.log(np.maximum(np.abs(t), 1e-300))
        negative = (t < 0).astype(np.float64)
        excluded_log = np.bincount(chk, weights=log_mag, minlength=code.m)[chk] - log_mag
        excluded_neg = np.bincount(chk, weights=negative, minlength=code.m)[chk] - negative
        sign = np.where(np.rint(excluded_neg) % 2 == 1, -1.0, 1.0) * target_sign
        product = np.clip(sign * np.exp(excluded_log), -1.0 + 1e-15, 1.0 - 1e-15)
        fresh = 2.0 * np.arctanh(product)
        to_var = fresh if damping == 0 else (1.0 - damping) * fresh + damping * to_var
        total = prior + np.bincount(var, weights=to_var, minlength=code.n)
        to_check = total[var] - to_var
        error = (total < 0).astype(np.uint8)
        unmatched = int(np.count_nonzero(syndrome_rows(code, error) != target))
        if unmatched == 0:
            return DecodeResult(local_key ^ error, iteration, int(error.sum()))
        if unmatched < best_unmatched:
            best_unmatched, reliability = unmatched, np.abs(total)
    raise DecodeFailure(f"belief propagation did not converge in {max_iterations} iterations "
                        f"({best_unmatched} checks unmatched at best)", reliability=reliability)


def reveal_positions(reliability: np.ndarray, count: int) -> np.ndarray:
    """The `count` least reliable bit positions, ascending."""
    count = min(int(count), len(reliability))
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.argsort(reliability, kind="stable")[:count]).astype(np.int64)


def retry_decode(local_key: np.ndarray, remote_syndrome: np.ndarray, code: LdpcCode, crossover: float,
                 max_iterations: int = 100,
                 known: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Optional[DecodeResult]:
    """
    Second pass after a failed decode, with twice the iterations: disclosed
    bits pinned when `known` is given, damped messages otherwise.

    Returns:
        DecodeResult, or None if this pass fails too.
    """
    try:
        if known is None:
            return ldpc_decode(local_key, remote_syndrome, code, crossover, 2 * max_iterations, damping=0.5)
        return ldpc_decode(local_key, remote_syndrome, code, crossover, 2 * max_iterations, known=known)
    except DecodeFailure:
        return None


def decode_with_retry(local_key: np.ndarray, remote_syndrome: np.ndarray, code: LdpcCode, crossover: float,
                      max_iterations: int = 100, reveal: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                      reveal_bits: int = 0) -> Tuple[Optional[DecodeResult], int, int]:
    """
    One regular decode and, if it fails, one retry_decode pass.

    With a reveal callback and reveal_bits > 0 the retry pins the remote bits
    at the reveal_bits least reliable positions of the failed pass.

    Args:
        reveal: Maps positions to the remote key's bits there.

    Returns:
        (result or None, attempts made, bits disclosed).
    """
    try:
        return ldpc_decode(local_key, remote_syndrome, code, crossover, max_iterations), 1, 0
    except DecodeFailure as e:
        reliability = e.reliability
    if reveal is None or reveal_bits <= 0:
        return retry_decode(local_key, remote_syndrome, code, crossover, max_iterations), 2, 0
    positions = reveal_positions(reliability, reveal_bits)
    bits = np.asarray(reveal(positions), dtype=np.uint8)
    result = retry_decode(local_key, remote_syndrome, code, crossover, max_iterations, known=(positions, bits))
    return result, 2, len(positions)


def tanner_graph(code: LdpcCode) -> nx.Graph:
    """Bipartite Tanner graph: variable nodes ('v', j) and check nodes ('c', i)."""
    graph = nx.Graph()
    graph.add_nodes_from((("v", j) for j in range(code.n)), bipartite=0)
    graph.add_nodes_from((("c", i) for i in range(code.m)), bipartite=1)
    graph.add_edges_from((("v", int(j)), ("c", int(i))) for j, i in zip(code.edge_vars, code.edge_checks))
    return graph


def count_four_cycles(code: LdpcCode) -> int:
    """Number of 4-cycles: sum over row pairs of C(shared columns, 2)."""
    H = code.H.astype(np.int64)
    overlap = sparse.triu(H @ H.T, k=1).tocoo()
    shared = overlap.data
    return int(np.sum(shared * (shared - 1) // 2))


def split_blocks(bits: np.ndarray, n: int) -> List[np.ndarray]:
    """Consecutive n-bit blocks; a trailing partial block is dropped."""
    bits = np.asarray(bits, dtype=np.uint8)
    return [bits[k * n:(k + 1) * n] for k in range(len(bits) // n)]
