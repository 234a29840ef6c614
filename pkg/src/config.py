"""
Run configuration: parsing, validation, seed override, presets and echo.

A configuration is a text document of `section.key = value` lines with '#'
comments. Every section is validated by its marshmallow schema; all problems
across the document are reported together.
"""
import logging
from dataclasses import dataclass, fields as dataclass_fields, replace
from typing import Dict, List, Optional

from marshmallow import ValidationError

from .errors import ConfigError, DomainError
from .schemas.config_schemas import SECTION_SCHEMAS
from .services.atmos_characterization import AtmosConfig
from .services.channel_model import ChannelConfig, PolarizationDriftConfig
from .services.key_distillation import DecoyConfig
from .services.ldpc_codes import CodesConfig
from .services.polarization_tomography import TomographyConfig
from .services.receiver_model import DecoderConfig, DetectorConfig, calibrate_misalignment
from .services.session_protocol import SessionConfig
from .services.simulation import SimulationConfig
from .services.source_model import SourceConfig
from .services.timing_analysis import CoincidenceConfig

# Configure logging
logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# --seed N sets section.rng_seed (codes.seed for the code matrix) to N + offset.
SEED_OFFSETS = {
    "source": 0,
    "channel": 1,
    "drift": 2,
    "receiver": 3,
    "detector": 4,
    "tomography": 5,
    "session": 6,
    "codes": 7,
    "atmos": 8,
}

PRESETS: Dict[str, str] = {
    "turbulent-link": """
        source.mu_signal = 0.488
        source.mu_decoy = 0.082
        channel.loss_db = 38.4
        channel.r0 = 0.0783
        detector.background_per_pulse = 3.65e-7
        receiver.throughput = 1.0
        drift.mode = static
        decoy.mu = 0.488
        decoy.nu = 0.082
        decoy.y0 = 3.65e-7
        decoy.loss_db = 38.4
        decoy.qber = 0.0532
        simulation.target_qber = 0.0532
        simulation.r0_trajectory = true
    """,
    "depolarizing-link": """
        source.mu_signal = 0.520
        source.mu_decoy = 0.094
        channel.loss_db = 38.8
        channel.r0 = 0.0783
        detector.background_per_pulse = 3.45e-7
        receiver.throughput = 1.0
        drift.mode = random_walk
        drift.step_angle_rms = 0.3
        drift.step_rate = 50
        drift.active_fraction = 0.5
        decoy.mu = 0.520
        decoy.nu = 0.094
        decoy.y0 = 3.45e-7
        decoy.loss_db = 38.8
        decoy.qber = 0.0508
        simulation.target_qber = 0.0508
        simulation.r0_trajectory = true
    """,
}


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig = SourceConfig()
    channel: ChannelConfig = ChannelConfig()
    drift: PolarizationDriftConfig = PolarizationDriftConfig()
    receiver: DecoderConfig = DecoderConfig()
    detector: DetectorConfig = DetectorConfig()
    coincidence: CoincidenceConfig = CoincidenceConfig()
    atmos: AtmosConfig = AtmosConfig()
    tomography: TomographyConfig = TomographyConfig()
    decoy: DecoyConfig = DecoyConfig()
    codes: CodesConfig = CodesConfig()
    session: SessionConfig = SessionConfig()
    simulation: SimulationConfig = SimulationConfig()


def parse_config_text(text: str) -> Dict[str, Dict[str, str]]:
    """
    Split a configuration document into {section: {key: raw value}}.

    Raises:
        ConfigError: On malformed lines, unknown sections or repeated keys.
    """
    sections: Dict[str, Dict[str, str]] = {}
    problems = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot or not section or not key.strip():
            problems.append(f"line {number}: expected 'section.key = value', got {raw.strip()!r}")
            continue
        key = key.strip()
        if section not in SECTION_SCHEMAS:
            problems.append(f"line {number}: unknown section {section!r}")
            continue
        if key in sections.get(section, {}):
            problems.append(f"line {number}: {section}.{key} is set twice")
            continue
        sections.setdefault(section, {})[key] = value.strip()
    if problems:
        raise ConfigError("; ".join(problems))
    return sections


def _echo_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section_values(config: RunConfig, section: str) -> Dict[str, str]:
    dumped = SECTION_SCHEMAS[section]().dump(getattr(config, section))
    return {k: _echo_value(v) for k, v in dumped.items()}


def build_config(sections: Dict[str, Dict[str, str]], base: Optional[RunConfig] = None) -> RunConfig:
    """
    Validate raw section values over a base configuration (defaults when None).

    Raises:
        ConfigError: Listing every `section.key: message` problem found.
    """
    base = base or RunConfig()
    built = {}
    errors: List[str] = []
    for section, values in sections.items():
        merged = {**_section_values(base, section), **values}
        try:
            built[section] = SECTION_SCHEMAS[section]().load(merged)
        except ValidationError as err:
            for key, messages in sorted(err.messages.items()):
                text = "; ".join(messages) if isinstance(messages, list) else str(messages)
                errors.append(f"{section}.{key}: {text}")
        except ConfigError as err:
            errors.append(str(err))
    if errors:
        for message in errors:
            logger.error(f"Configuration error: {message}")
        raise ConfigError("invalid configuration: " + "; ".join(errors))
    return replace(base, **built)


def apply_seed(config: RunConfig, seed: int) -> RunConfig:
    """Derive every random seed from one run seed."""
    if seed < 0:
        raise ConfigError("--seed must be non-negative")
    updates = {}
    for section, offset in SEED_OFFSETS.items():
        current = getattr(config, section)
        field_name = "seed" if section == "codes" else "rng_seed"
        updates[section] = replace(current, **{field_name: seed + offset})
    return replace(config, **updates)


def calibrate(config: RunConfig) -> RunConfig:
    """Solve receiver.phase_B for simulation.target_qber, when one is set."""
    target = config.simulation.target_qber
    if target is None:
        return config
    try:
        phase = calibrate_misalignment(target, config.source, config.receiver, config.detector,
                                       config.channel.mean_transmittance, config.coincidence.window)
    except DomainError as e:
        raise ConfigError(f"simulation.target_qber: {e}") from e
    return replace(config, receiver=replace(config.receiver, phase_B=phase))


def load_config(text: str = "", preset: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Build a run configuration: defaults, then the preset, then the document,
    then the seed override, then the QBER calibration.
    """
    config = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        config = build_config(parse_config_text(PRESETS[preset]), config)
    if text:
        config = build_config(parse_config_text(text), config)
    if seed is not None:
        config = apply_seed(config, seed)
    return calibrate(config)


def load_config_file(path: Optional[str], preset: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    text = ""
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except (OSError, UnicodeDecodeError) as e:
            logger.error(f"Error reading configuration {path}: {str(e)}")
            raise ConfigError(f"cannot read configuration {path}: {e}") from e
    return load_config(text, preset, seed)


def format_config_echo(config: RunConfig) -> List[str]:
    """Canonical `section.key = value` lines, sorted, for embedding in reports."""
    lines = []
    for f in dataclass_fields(config):
        for key, value in _section_values(config, f.name).items():
            lines.append(f"{f.name}.{key} = {value}")
    return sorted(lines)
