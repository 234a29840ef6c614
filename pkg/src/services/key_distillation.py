"""
From sifted keys and observed gains to secret keys.

Vacuum + weak decoy bounds on the single-photon yield and error rate, the
asymptotic key rate, privacy-amplification length accounting and the offline
reconcile/verify/amplify chain over paired sifted keys.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import ConfigError, DomainError
from .channel_model import transmittance
from .ldpc_codes import CodesConfig, code_for, decode_with_retry, ldpc_syndrome, split_blocks
from .privacy_amplification import TAG_BITS, ToeplitzSpec, random_seed_bits, toeplitz_hash, verify_tag
from .qkd_core import Probability, binary_entropy, check_probability

logger = logging.getLogger(__name__)

# Error rate of background (vacuum) detections.
E0 = 0.5

# Measured parameters of the two reported runs.
REPORTED_RUNS = {
    "turbulent": {"mu": 0.488, "nu": 0.082, "y0": 3.65e-7, "loss_db": 38.4, "qber": 0.0532,
                  "reported_rate": 154.2},
    "depolarizing": {"mu": 0.520, "nu": 0.094, "y0": 3.45e-7, "loss_db": 38.8, "qber": 0.0508,
                     "reported_rate": 138.8},
}


@dataclass(frozen=True)
class DecoyObservables:
    """Gains, error rates and background yield per pulse of each intensity class."""

    Q_mu: float
    Q_nu: float
    E_mu: float
    E_nu: float
    Y0: float
    mu: float
    nu: float

    def __post_init__(self):
        if not 0 < self.nu < self.mu:
            raise DomainError(f"need 0 < nu < mu, got nu={self.nu}, mu={self.mu}")
        for name in ("Q_mu", "Q_nu", "E_mu", "E_nu", "Y0"):
            check_probability(getattr(self, name), name)


@dataclass(frozen=True)
class DecoyBounds:
    Y1_lower: float
    e1_upper: Optional[float]
    Q1_lower: float

    @property
    def no_key(self) -> bool:
        return self.e1_upper is None


@dataclass(frozen=True)
class KeyRateReport:
    rate_per_pulse: float
    rate_per_second: float
    ec_cost: float
    single_photon_term: float
    q: float
    f_ec: float
    repetition: float
    signal_fraction: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "rate_per_pulse": self.rate_per_pulse,
            "rate_per_second": self.rate_per_second,
            "ec_cost": self.ec_cost,
            "single_photon_term": self.single_photon_term,
            "q": self.q,
            "f_ec": self.f_ec,
            "repetition": self.repetition,
            "signal_fraction": self.signal_fraction,
        }


@dataclass(frozen=True)
class DecoyConfig:
    """
    Inputs of the key-rate calculator. e_nu = None derives the decoy error
    rate from the Poissonian channel model with e_d = qber.
    """

    mu: float = 0.488
    nu: float = 0.082
    y0: float = 3.65e-7
    loss_db: float = 38.4
    qber: float = 0.0532
    e_nu: Optional[float] = None
    f_ec: float = 1.17
    q: float = 0.5
    repetition: float = 1.5e8
    signal_fraction: float = 0.8

    def __post_init__(self):
        problems = []
        if not 0 < self.nu < self.mu:
            problems.append("need 0 < nu < mu")
        if self.loss_db < 0:
            problems.append("loss_db must be >= 0")
        for name in ("y0", "qber", "q", "signal_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.e_nu is not None and not 0.0 <= self.e_nu <= 1.0:
            problems.append("e_nu must lie in [0, 1]")
        if self.f_ec < 1.0:
            problems.append("f_ec must be >= 1")
        if problems:
            raise ConfigError("; ".join(f"decoy.{p}" for p in problems))


def decoy_bounds(obs: DecoyObservables) -> DecoyBounds:
    """
    Vacuum + weak decoy bounds.

    Y1 >= mu / (mu nu - nu^2) (Q_nu e^nu - Q_mu e^mu nu^2 / mu^2 - (mu^2 - nu^2) / mu^2 Y0)
    e1 <= (E_nu Q_nu e^nu - e0 Y0) / (Y1 nu), e0 = 1/2

    Y1 is clamped to [0, 1] and e1 to [0, 0.5]. A zero Y1 bound leaves e1
    undefined; the result is then flagged no_key.

    Raises:
        DomainError: If mu nu - nu^2 <= 0.
    """
    mu, nu = obs.mu, obs.nu
    denominator = mu * nu - nu * nu
    if denominator <= 0:
        raise DomainError("decoy bound needs mu * nu - nu^2 > 0")
    y1 = (mu / denominator) * (obs.Q_nu * math.exp(nu) - obs.Q_mu * math.exp(mu) * nu * nu / (mu * mu)
                               - (mu * mu - nu * nu) / (mu * mu) * obs.Y0)
    y1 = min(max(y1, 0.0), 1.0)
    q1 = y1 * mu * math.exp(-mu)
    if y1 == 0.0:
        logger.warning("Single-photon yield bound is zero: no key")
        return DecoyBounds(0.0, None, 0.0)
    e1 = (obs.E_nu * obs.Q_nu * math.exp(nu) - E0 * obs.Y0) / (y1 * nu)
    return DecoyBounds(y1, min(max(e1, 0.0), 0.5), q1)


def asymptotic_key_rate(obs: DecoyObservables, bounds: DecoyBounds, f_EC: float = 1.17, q: float = 0.5,
                        repetition: float = 1.5e8, signal_fraction: float = 0.8) -> KeyRateReport:
    """
    Asymptotic secret key rate q (-Q_mu f_EC H2(E_mu) + Q1 (1 - H2(e1))), clamped at 0.

    rate_per_second = rate_per_pulse * repetition * signal_fraction.
    """
    ec_cost = obs.Q_mu * f_EC * binary_entropy(obs.E_mu)
    if bounds.no_key:
        single = 0.0
    else:
        single = bounds.Q1_lower * (1.0 - binary_entropy(bounds.e1_upper))
    per_pulse = max(0.0, q * (single - ec_cost))
    return KeyRateReport(per_pulse, per_pulse * repetition * signal_fraction, ec_cost, single,
                         q, f_EC, repetition, signal_fraction)


def poissonian_observables(mu: float, nu: float, Y0: float, eta: float, e_d: float,
                           E_mu: Optional[float] = None) -> DecoyObservables:
    """
    Closed-form gains and error rates of a Poissonian source over a loss channel.

    Q_x = Y0 + 1 - e^(-eta x) and E_x Q_x = e0 Y0 + e_d (1 - e^(-eta x)). E_mu
    overrides the modelled signal error rate, e.g. with a measured QBER.
    """
    def gain_and_error(x):
        signal = -math.expm1(-eta * x)
        gain = Y0 + signal
        return gain, (E0 * Y0 + e_d * signal) / gain if gain > 0 else 0.0

    q_mu, e_mu = gain_and_error(mu)
    q_nu, e_nu = gain_and_error(nu)
    return DecoyObservables(q_mu, q_nu, e_mu if E_mu is None else E_mu, e_nu, Y0, mu, nu)


def true_single_photon(eta: float, Y0: float, e_d: float) -> Tuple[float, float]:
    """Exact single-photon yield and error rate of the Poissonian channel model."""
    y1 = Y0 + eta - Y0 * eta
    return y1, (E0 * Y0 + e_d * eta * (1.0 - Y0)) / y1


def observables_from_config(config: DecoyConfig) -> DecoyObservables:
    """Observables for the key-rate calculator: E_mu is the measured QBER."""
    obs = poissonian_observables(config.mu, config.nu, config.y0, transmittance(config.loss_db), config.qber,
                                 E_mu=config.qber)
    if config.e_nu is not None:
        obs = DecoyObservables(obs.Q_mu, obs.Q_nu, obs.E_mu, config.e_nu, obs.Y0, obs.mu, obs.nu)
    return obs


@dataclass(frozen=True)
class KeyRateEvaluation:
    observables: DecoyObservables
    bounds: DecoyBounds
    report: KeyRateReport

    @property
    def secure(self) -> bool:
        return self.report.rate_per_pulse > 0

    def as_dict(self) -> Dict[str, object]:
        obs, bounds = self.observables, self.bounds
        return {
            "mu": obs.mu, "nu": obs.nu, "Q_mu": obs.Q_mu, "Q_nu": obs.Q_nu, "E_mu": obs.E_mu,
            "E_nu": obs.E_nu, "Y0": obs.Y0, "Y1_lower": bounds.Y1_lower, "e1_upper": bounds.e1_upper,
            "Q1_lower": bounds.Q1_lower, "secure": self.secure, **self.report.as_dict(),
        }


def evaluate_key_rate(config: DecoyConfig) -> KeyRateEvaluation:
    """Observables, decoy bounds and key rate for one set of calculator inputs."""
    obs = observables_from_config(config)
    bounds = decoy_bounds(obs)
    report = asymptotic_key_rate(obs, bounds, config.f_ec, config.q, config.repetition, config.signal_fraction)
    return KeyRateEvaluation(obs, bounds, report)


def reported_observables(run: str) -> DecoyObservables:
    """Observables of one reported run ('turbulent' or 'depolarizing')."""
    if run not in REPORTED_RUNS:
        raise DomainError(f"unknown run {run!r}; choose from {sorted(REPORTED_RUNS)}")
    row = REPORTED_RUNS[run]
    return observables_from_config(DecoyConfig(mu=row["mu"], nu=row["nu"], y0=row["y0"],
                                               loss_db=row["loss_db"], qber=row["qber"]))


def monte_carlo_observables(mu: float, nu: float, Y0: float, eta: float, e_d: float, pulses: float,
                            proportions: Tuple[float, float, float], rng: np.random.Generator) -> DecoyObservables:
    """
    Sampled observables: detections and errors per class drawn binomially
    around the closed-form model, as a finite measurement would see them.
    """
    exact = poissonian_observables(mu, nu, Y0, eta, e_d)
    sampled = {}
    for name, share, gain, error in (("mu", proportions[0], exact.Q_mu, exact.E_mu),
                                     ("nu", proportions[1], exact.Q_nu, exact.E_nu)):
        n = int(pulses * share)
        detections = rng.binomial(n, gain)
        errors = rng.binomial(detections, error)
        sampled[name] = (detections / n, errors / detections if detections else 0.0)
    n_vac = int(pulses * proportions[2])
    y0 = rng.binomial(n_vac, Y0) / n_vac if n_vac else Y0
    return DecoyObservables(sampled["mu"][0], sampled["nu"][0], sampled["mu"][1], sampled["nu"][1], y0, mu, nu)


def pa_output_length(n: int, e1: float, leak: int, phi: float = 1.0) -> int:
    """
    Final key length floor(n (1 - phi H2(e1)) - leak), clamped to [0, n - leak].
    """
    if n <= 0:
        return 0
    length = int(math.floor(n * (1.0 - phi * binary_entropy(min(max(e1, 0.0), 1.0))) - leak))
    return max(0, min(length, n - leak))


def measured_f_ec(disclosed_bits: int, n: int, qber: float) -> Optional[float]:
    """Reconciliation efficiency disclosed / (n H2(QBER)); None when undefined."""
    if n <= 0 or qber <= 0:
        return None
    return disclosed_bits / (n * binary_entropy(qber))


@dataclass
class BlockOutcome:
    index: int
    decoded: bool
    verified: bool
    attempts: int
    corrected_bits: int


@dataclass
class DistillResult:
    """Outcome of the offline reconcile/verify/amplify chain."""

    transmitter_key: np.ndarray
    receiver_key: np.ndarray
    qber: Optional[Probability]
    sifted_bits: int
    reconciled_bits: int
    leaked_bits: int
    final_length: int
    f_ec: Optional[float]
    blocks: List[BlockOutcome] = field(default_factory=list)

    @property
    def failure_rate(self) -> float:
        if not self.blocks:
            return 0.0
        return sum(1 for b in self.blocks if not (b.decoded and b.verified)) / len(self.blocks)

    @property
    def secure(self) -> bool:
        return self.final_length > 0


def distill_offline(transmitter_bits: np.ndarray, receiver_bits: np.ndarray, codes: CodesConfig,
                    qber_estimate: Optional[float] = None, seed: int = 0,
                    e1: Optional[float] = None, phi: float = 1.0) -> DistillResult:
    """
    Reconcile, verify and amplify a pair of sifted keys held locally.

    The receiver's syndromes are decoded against the transmitter's blocks, so
    the transmitter's corrected blocks converge to the receiver's. Blocks that
    fail decoding or verification are discarded; their syndromes still count
    as leaked. Bits disclosed for a retry count as leaked and towards f_EC.
    e1 defaults to the QBER, as no decoy statistics are available.

    Args:
        transmitter_bits: Transmitter sifted bits.
        receiver_bits: Receiver sifted bits of the same length.
        codes: Reconciliation parameters.
        qber_estimate: Crossover used by the decoder; defaults to the observed QBER.
        seed: Seed for verification tags and the hash seed.
        e1: Single-photon phase error rate for the PA length.
        phi: Multiplier of H2(e1) in the PA length.

    Raises:
        DomainError: If the keys differ in length.
    """
    tx = np.asarray(transmitter_bits, dtype=np.uint8)
    rx = np.asarray(receiver_bits, dtype=np.uint8)
    if tx.shape != rx.shape:
        raise DomainError("sifted keys must have equal length")
    n = codes.block_length
    code = code_for(codes)
    tx_blocks, rx_blocks = split_blocks(tx, n), split_blocks(rx, n)
    used = len(tx_blocks) * n
    qber = float(np.count_nonzero(tx[:used] != rx[:used]) / used) if used else None
    crossover = qber_estimate if qber_estimate is not None else min(max(qber or 0.0, 1e-3), 0.45)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x7A6,)))

    kept_tx, kept_rx, outcomes = [], [], []
    leaked = revealed = 0
    for k, (a, b) in enumerate(zip(tx_blocks, rx_blocks)):
        remote = ldpc_syndrome(b, code)
        result, attempts, shown = decode_with_retry(a, remote, code, crossover, codes.max_iterations,
                                                    reveal=lambda positions, b=b: b[positions],
                                                    reveal_bits=codes.reveal_bits)
        revealed += shown
        leaked += code.m + shown + TAG_BITS
        if result is None:
            outcomes.append(BlockOutcome(k, False, False, attempts, 0))
            continue
        tag_seed = int(rng.integers(0, 2 ** 63))
        verified = verify_tag(result.key, tag_seed) == verify_tag(b, tag_seed)
        outcomes.append(BlockOutcome(k, True, verified, attempts, result.corrected_bits))
        if verified:
            kept_tx.append(result.key)
            kept_rx.append(b)
    reconciled_tx = np.concatenate(kept_tx) if kept_tx else np.zeros(0, np.uint8)
    reconciled_rx = np.concatenate(kept_rx) if kept_rx else np.zeros(0, np.uint8)
    disclosed = code.m * len(tx_blocks) + revealed
    f_ec = measured_f_ec(disclosed, used, qber) if qber else None
    phase_error = qber if e1 is None else e1
    length = pa_output_length(reconciled_tx.size, phase_error if phase_error is not None else 0.5,
                              leaked if reconciled_tx.size else 0, phi)
    if length > 0:
        spec = ToeplitzSpec(reconciled_tx.size, length, random_seed_bits(reconciled_tx.size - 1, rng))
        final_tx, final_rx = toeplitz_hash(reconciled_tx, spec), toeplitz_hash(reconciled_rx, spec)
    else:
        final_tx = final_rx = np.zeros(0, np.uint8)
    logger.info(f"Distilled {used} sifted bits in {len(tx_blocks)} blocks -> {length} secret bits")
    return DistillResult(final_tx, final_rx, qber, int(tx.size), int(reconciled_tx.size), leaked, length,
                         f_ec, outcomes)
