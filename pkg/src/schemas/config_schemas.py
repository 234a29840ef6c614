"""
marshmallow schemas for the run configuration, one per section.

Values arrive as the raw strings of `section.key = value` lines. Each schema
rejects unknown keys and builds the frozen config dataclass of its service.
"""
from marshmallow import RAISE, Schema, ValidationError, fields, post_load, pre_load, validate

from ..services.atmos_characterization import AtmosConfig
from ..services.channel_model import ChannelConfig, DriftMode, PolarizationDriftConfig
from ..services.key_distillation import DecoyConfig
from ..services.ldpc_codes import CodeProfile, CodesConfig
from ..services.polarization_tomography import TomographyConfig
from ..services.receiver_model import DecoderConfig, DetectorConfig
from ..services.session_protocol import SessionConfig
from ..services.simulation import SimulationConfig
from ..services.source_model import SourceConfig
from ..services.timing_analysis import CoincidenceConfig

NONE_WORDS = {"none", "null", ""}


class FloatTuple(fields.Field):
    """Comma-separated floats, e.g. `0.80, 0.14, 0.06`."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return ", ".join(repr(float(v)) for v in value)

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, (list, tuple)):
            items = value
        else:
            items = [v for v in str(value).split(",") if v.strip()]
        try:
            return tuple(float(v) for v in items)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"expected comma-separated numbers, got {value!r}") from e


class IntervalList(fields.Field):
    """Comma-separated `start-stop` second intervals, e.g. `10-12, 30-31`; empty for none."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return ", ".join(f"{a:g}-{b:g}" for a, b in value)

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, (list, tuple)):
            return tuple((float(a), float(b)) for a, b in value)
        intervals = []
        for item in str(value).split(","):
            if not item.strip():
                continue
            start, sep, stop = item.strip().partition("-")
            try:
                a, b = float(start), float(stop)
            except ValueError as e:
                raise ValidationError(f"expected start-stop, got {item.strip()!r}") from e
            if not sep or b <= a or a < 0:
                raise ValidationError(f"interval {item.strip()!r} must satisfy 0 <= start < stop")
            intervals.append((a, b))
        return tuple(intervals)


class SectionSchema(Schema):
    """Base for every section: unknown keys are errors; 'none' means no value."""

    class Meta:
        unknown = RAISE

    config_class = None

    @pre_load
    def none_words(self, data, **kwargs):
        cleaned = {}
        for key, value in data.items():
            field = self.fields.get(key)
            if field is not None and field.allow_none and isinstance(value, str) and value.strip().lower() in NONE_WORDS:
                value = None
            cleaned[key] = value
        return cleaned

    @post_load
    def make_config(self, data, **kwargs):
        return self.config_class(**data)


class SourceSchema(SectionSchema):
    config_class = SourceConfig

    repetition_rate = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    pulse_width = fields.Integer(validate=validate.Range(min=1))
    bin_separation = fields.Integer(validate=validate.Range(min=1))
    mu_signal = fields.Float()
    mu_decoy = fields.Float()
    class_proportions = FloatTuple()
    intrinsic_error = fields.Float()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class ChannelSchema(SectionSchema):
    config_class = ChannelConfig

    loss_db = fields.Float()
    distance = fields.Float()
    r0 = fields.Float()
    beam_diameter = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    wavelength_beacon = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    wavelength_signal = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    turbulence_corr_time = fields.Float()
    scintillation_index = fields.Float()
    propagation_delay = fields.Integer()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class DriftSchema(SectionSchema):
    config_class = PolarizationDriftConfig

    mode = fields.Enum(DriftMode, by_value=True)
    step_angle_rms = fields.Float()
    step_rate = fields.Float()
    active_fraction = fields.Float()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class ReceiverSchema(SectionSchema):
    config_class = DecoderConfig

    visibility = fields.Float()
    throughput = fields.Float()
    phase_B = fields.Float()
    phase_drift_rms = fields.Float()
    bin_separation = fields.Integer()
    rezero_interval = fields.Float()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class DetectorSchema(SectionSchema):
    config_class = DetectorConfig

    jitter_fwhm = fields.Float()
    background_per_pulse = fields.Float()
    num_channels = fields.Integer()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class CoincidenceSchema(SectionSchema):
    config_class = CoincidenceConfig

    window = fields.Integer()
    slot_offset = fields.Integer()
    time_of_flight = fields.Integer()
    aggregation = fields.Float()
    snr_threshold = fields.Float(validate=validate.Range(min=0))
    bin_width = fields.Integer()
    fine_step = fields.Integer()
    delay_search_range = fields.Integer()
    histogram_range = fields.Integer()


class AtmosSchema(SectionSchema):
    config_class = AtmosConfig

    frame_rate = fields.Float()
    frames_per_estimate = fields.Integer()
    relative_std = fields.Float()
    plane_wave_constant = fields.Float()
    plate_scale = fields.Float()
    background = fields.Float()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class TomographySchema(SectionSchema):
    config_class = TomographyConfig

    counts_per_basis = fields.Integer()
    integration = fields.Float()
    max_iterations = fields.Integer()
    tolerance = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class DecoySchema(SectionSchema):
    config_class = DecoyConfig

    mu = fields.Float()
    nu = fields.Float()
    y0 = fields.Float()
    loss_db = fields.Float()
    qber = fields.Float()
    e_nu = fields.Float(allow_none=True)
    f_ec = fields.Float()
    q = fields.Float()
    repetition = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    signal_fraction = fields.Float()


class CodesSchema(SectionSchema):
    config_class = CodesConfig

    block_length = fields.Integer()
    rate = fields.Float()
    profile = fields.Enum(CodeProfile, by_value=True)
    max_iterations = fields.Integer()
    reveal_bits = fields.Integer()
    seed = fields.Integer(validate=validate.Range(min=0))
    max_failure_rate = fields.Float()


class SessionSchema(SectionSchema):
    config_class = SessionConfig

    timeout = fields.Float()
    qber_estimate = fields.Float()
    pa_phi = fields.Float()
    endpoint = fields.String()
    rng_seed = fields.Integer(validate=validate.Range(min=0))


class SimulationSchema(SectionSchema):
    config_class = SimulationConfig

    duration = fields.Float(validate=validate.Range(min=0))
    blockages = IntervalList()
    max_emission_records = fields.Integer(validate=validate.Range(min=0))
    target_qber = fields.Float(allow_none=True, validate=validate.Range(min=0, max=0.5))
    r0_trajectory = fields.Boolean()
    write_tomography = fields.Boolean()


SECTION_SCHEMAS = {
    "source": SourceSchema,
    "channel": ChannelSchema,
    "drift": DriftSchema,
    "receiver": ReceiverSchema,
    "detector": DetectorSchema,
    "coincidence": CoincidenceSchema,
    "atmos": AtmosSchema,
    "tomography": TomographySchema,
    "decoy": DecoySchema,
    "codes": CodesSchema,
    "session": SessionSchema,
    "simulation": SimulationSchema,
}
