"""
Beacon polarization tomography.

Six-state projection counts, maximum-likelihood density-matrix reconstruction
(RrhoR iteration), purity and the polarization QBER it implies, plus the
quarter/half/quarter wave-plate solver that undoes a fiber unitary.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import optimize

from ..errors import ConfigError, DomainError
from .qkd_core import Probability, qber_from_visibility, visibility_from_purity

logger = logging.getLogger(__name__)

PROJECTION_NAMES = ("H", "V", "D", "A", "R", "L")

_S = 1.0 / math.sqrt(2.0)
PROJECTION_KETS = np.array([
    [1, 0],
    [0, 1],
    [_S, _S],
    [_S, -_S],
    [_S, 1j * _S],
    [_S, -1j * _S],
], dtype=complex)
PROJECTORS = np.einsum("ka,kb->kab", PROJECTION_KETS, PROJECTION_KETS.conj())

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

TOLERANCE = 1e-10


@dataclass(frozen=True)
class TomographyConfig:
    counts_per_basis: int = 100_000
    integration: float = 1.0
    max_iterations: int = 1000
    tolerance: float = TOLERANCE
    rng_seed: int = 5

    def __post_init__(self):
        if self.counts_per_basis <= 0:
            raise ConfigError("tomography.counts_per_basis must be positive")
        if self.integration <= 0:
            raise ConfigError("tomography.integration must be positive")
        if self.max_iterations <= 0:
            raise ConfigError("tomography.max_iterations must be positive")


@dataclass(frozen=True)
class SixStateCounts:
    """Counts of the H, V, D, A, R, L projections over one integration window."""

    H: int
    V: int
    D: int
    A: int
    R: int
    L: int
    integration: float = 1.0
    second_index: int = 0

    def __post_init__(self):
        if any(c < 0 for c in self.as_array()):
            raise DomainError("projection counts must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.H, self.V, self.D, self.A, self.R, self.L], dtype=float)

    @classmethod
    def from_array(cls, counts, integration: float = 1.0, second_index: int = 0) -> "SixStateCounts":
        return cls(*(int(c) for c in counts), integration=integration, second_index=second_index)


@dataclass(frozen=True)
class WavePlateTriplet:
    """Fast-axis angles (rad, in [0, pi)) and the process fidelity the triplet achieves."""

    qwp1: float
    hwp: float
    qwp2: float
    fidelity: float = 1.0

    @property
    def converged(self) -> bool:
        return self.fidelity >= 0.999


@dataclass
class MleResult:
    rho: np.ndarray
    iterations: int
    converged: bool
    log_likelihoods: List[float] = field(default_factory=list)


def check_density_matrix(rho: np.ndarray, tol: float = TOLERANCE) -> np.ndarray:
    """
    Validate a 2x2 density matrix.

    Raises:
        DomainError: If rho is not Hermitian, unit-trace and positive semidefinite to `tol`.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise DomainError("density matrix must be 2x2")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise DomainError("density matrix must be Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise DomainError("density matrix must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise DomainError("density matrix must be positive semidefinite")
    return rho


def pure_state(ket) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    return np.outer(ket, ket.conj())


def projection_probabilities(rho: np.ndarray) -> np.ndarray:
    return np.clip(np.real(np.einsum("kab,ba->k", PROJECTORS, rho)), 0.0, 1.0)


def project_counts(rho: np.ndarray, total_per_basis: int, rng: np.random.Generator,
                   second_index: int = 0, integration: float = 1.0) -> SixStateCounts:
    """Binomial split of total_per_basis counts in each of the three projection pairs."""
    rho = check_density_matrix(rho, tol=1e-9)
    p = projection_probabilities(rho)
    counts = []
    for pair in range(3):
        first = rng.binomial(total_per_basis, p[2 * pair])
        counts += [first, total_per_basis - first]
    return SixStateCounts.from_array(counts, integration, second_index)


def _log_likelihood(freqs: np.ndarray, probs: np.ndarray) -> float:
    used = freqs > 0
    return float(np.sum(freqs[used] * np.log(np.maximum(probs[used], 1e-300))))


def _trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def mle_reconstruct(counts: SixStateCounts, max_iterations: int = 1000, tolerance: float = TOLERANCE) -> MleResult:
    """
    Maximum-likelihood density matrix from six-state counts.

    Each projection pair is its own multinomial, so counts are normalized per
    pair. The RrhoR iteration starts from I/2; when a full step would lower the
    likelihood it is diluted, rho <- (I + eR) rho (I + eR), halving e until the
    likelihood does not drop. Iteration stops when successive iterates are
    within `tolerance` in trace distance or after max_iterations, in which case
    the result is flagged as not converged.

    Raises:
        DomainError: If any projection pair has no counts.
    """
    n = counts.as_array()
    pair_totals = n.reshape(3, 2).sum(axis=1)
    if np.any(pair_totals <= 0):
        raise DomainError("every projection pair needs at least one count")
    freqs = n / np.repeat(pair_totals, 2)
    rho = np.eye(2, dtype=complex) / 2
    likelihood = _log_likelihood(freqs, projection_probabilities(rho))
    history = [likelihood]
    for iteration in range(1, max_iterations + 1):
        probs = projection_probabilities(rho)
        weights = np.where(freqs > 0, freqs / np.maximum(probs, 1e-300), 0.0) / 3.0
        R = np.einsum("k,kab->ab", weights, PROJECTORS)
        dilution = None
        while True:
            step = R if dilution is None else (np.eye(2) + dilution * R) / (1.0 + dilution)
            candidate = step @ rho @ step.conj().T
            candidate = (candidate + candidate.conj().T) / 2
            candidate /= np.real(np.trace(candidate))
            candidate_likelihood = _log_likelihood(freqs, projection_probabilities(candidate))
            if candidate_likelihood >= likelihood - 1e-13 or (dilution is not None and dilution < 1e-8):
                break
            dilution = 1.0 if dilution is None else dilution / 2.0
        distance = _trace_distance(candidate, rho)
        rho, likelihood = candidate, max(candidate_likelihood, likelihood)
        history.append(candidate_likelihood)
        if distance < tolerance:
            return MleResult(rho, iteration, True, history)
    logger.warning(f"MLE did not converge within {max_iterations} iterations")
    return MleResult(rho, max_iterations, False, history)


def purity(rho: np.ndarray) -> float:
    """Tr(rho^2); lies in [0.5, 1] for a qubit."""
    rho = check_density_matrix(rho, tol=1e-9)
    return float(np.real(np.trace(rho @ rho)))


def qber_pol_from_purity(P: float) -> Probability:
    """Polarization QBER (1 - sqrt(2P - 1)) / 2 implied by a purity."""
    return qber_from_visibility(visibility_from_purity(P))


def stokes_vector(rho: np.ndarray) -> np.ndarray:
    """Bloch (normalized Stokes) vector (Tr rho sx, Tr rho sy, Tr rho sz)."""
    return np.real(np.einsum("kab,ba->k", PAULI, rho))


def state_fidelity(ket, rho: np.ndarray) -> float:
    """<psi| rho |psi> for a pure reference state."""
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    return float(np.real(ket.conj() @ rho @ ket))


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2).astype(complex)


def waveplate(theta, retardance: complex) -> np.ndarray:
    """R(theta) diag(1, retardance) R(-theta); broadcasts over an array of angles."""
    return _rotation(theta) @ np.diag([1.0, retardance]).astype(complex) @ _rotation(-np.asarray(theta))


def quarter_wave_plate(theta) -> np.ndarray:
    return waveplate(theta, 1j)


def half_wave_plate(theta) -> np.ndarray:
    return waveplate(theta, -1.0)


def triplet_unitary(qwp1: float, hwp: float, qwp2: float) -> np.ndarray:
    """QWP(qwp2) HWP(hwp) QWP(qwp1): the first plate acts first."""
    return quarter_wave_plate(qwp2) @ half_wave_plate(hwp) @ quarter_wave_plate(qwp1)


def process_fidelity(W: np.ndarray) -> float:
    """|Tr W|^2 / 4: 1 exactly when W is the identity up to a global phase."""
    return float(abs(np.trace(W)) ** 2 / 4.0)


def compensation_angles(U: np.ndarray, grid_steps: int = 36) -> WavePlateTriplet:
    """
    Wave-plate angles that undo a polarization unitary.

    A coarse grid of pi / grid_steps over all three angles is searched for the
    highest process fidelity of QWP(q2) HWP(h) QWP(q1) U; the best grid points
    are then refined with Nelder-Mead. A result below fidelity 0.999 is returned
    with converged == False and logged.

    Raises:
        DomainError: If U is not unitary to 1e-9.
    """
    U = np.asarray(U, dtype=complex)
    if U.shape != (2, 2) or np.max(np.abs(U.conj().T @ U - np.eye(2))) > 1e-9:
        raise DomainError("compensation needs a 2x2 unitary")
    angles = np.arange(grid_steps) * math.pi / grid_steps
    qwps, hwps = quarter_wave_plate(angles), half_wave_plate(angles)
    first = np.einsum("jab,kbc,cd->jkad", hwps, qwps, U)
    traces = np.einsum("iab,jkba->ijk", qwps, first)
    scores = np.abs(traces) ** 2 / 4.0

    def loss(x):
        return 1.0 - process_fidelity(triplet_unitary(x[0], x[1], x[2]) @ U)

    best_x, best_loss = None, math.inf
    for flat in np.argsort(scores, axis=None)[::-1][:5]:
        i, j, k = np.unravel_index(flat, scores.shape)
        start = np.array([angles[k], angles[j], angles[i]])
        result = optimize.minimize(loss, start, method="Nelder-Mead",
                                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        if result.fun < best_loss:
            best_x, best_loss = result.x, float(result.fun)
        if best_loss < 1e-9:
            break
    triplet = WavePlateTriplet(*(float(a % math.pi) for a in best_x), fidelity=1.0 - best_loss)
    if not triplet.converged:
        logger.warning(f"Wave-plate compensation reached fidelity {triplet.fidelity:.6f} only")
    return triplet


def reconstruct_series(counts: List[SixStateCounts], max_iterations: int = 1000,
                       tolerance: float = TOLERANCE) -> List[dict]:
    """Per-second purity and polarization QBER rows for a list of count records."""
    rows = []
    for c in counts:
        result = mle_reconstruct(c, max_iterations, tolerance)
        P = min(max(purity(result.rho), 0.5), 1.0)
        rows.append({"second": c.second_index, "purity": P, "qber_pol": qber_pol_from_purity(P),
                     "stokes": stokes_vector(result.rho), "converged": result.converged})
    return rows
