from marshmallow import RAISE, Schema, ValidationError, fields, post_load, validate, validates_schema

from ..services.channel_model import CentroidSample
from ..services.key_distillation import DecoyConfig
from ..services.polarization_tomography import SixStateCounts
from ..services.source_model import SourceConfig

NON_NEGATIVE = validate.Range(min=0)
POSITIVE = validate.Range(min=0, min_inclusive=False)


class CentroidRowSchema(Schema):
    """One row of a centroid series file (t in s, angles in rad)."""
    class Meta:
        unknown = RAISE

    t = fields.Float(required=True, validate=NON_NEGATIVE, error_messages={"required": "t is required."})
    theta_x = fields.Float(required=True, error_messages={"required": "theta_x is required."})
    theta_y = fields.Float(required=True, error_messages={"required": "theta_y is required."})

    @post_load
    def make_sample(self, data, **kwargs):
        return CentroidSample(**data)


class CountsRowSchema(Schema):
    """One row of six-state projection counts."""
    class Meta:
        unknown = RAISE

    second = fields.Integer(required=True, validate=NON_NEGATIVE, error_messages={"required": "second is required."})
    H = fields.Integer(required=True, validate=NON_NEGATIVE)
    V = fields.Integer(required=True, validate=NON_NEGATIVE)
    D = fields.Integer(required=True, validate=NON_NEGATIVE)
    A = fields.Integer(required=True, validate=NON_NEGATIVE)
    R = fields.Integer(required=True, validate=NON_NEGATIVE)
    L = fields.Integer(required=True, validate=NON_NEGATIVE)
    integration = fields.Float(load_default=1.0, validate=POSITIVE)

    @validates_schema
    def validate_pairs(self, data, **kwargs):
        for a, b in (("H", "V"), ("D", "A"), ("R", "L")):
            if data.get(a, 0) + data.get(b, 0) == 0:
                raise ValidationError(f"projection pair {a}/{b} holds no counts", a)

    @post_load
    def make_counts(self, data, **kwargs):
        second = data.pop("second")
        integration = data.pop("integration")
        return SixStateCounts(integration=integration, second_index=second, **data)


class SourceSidecarSchema(Schema):
    """Transmitter source settings stored next to a run instead of its emission records."""
    class Meta:
        unknown = RAISE

    format_version = fields.Integer(required=True, validate=validate.Equal(1))
    repetition_rate = fields.Float(required=True, validate=POSITIVE)
    pulse_width = fields.Integer(required=True)
    bin_separation = fields.Integer(required=True)
    mu_signal = fields.Float(required=True)
    mu_decoy = fields.Float(required=True)
    class_proportions = fields.List(fields.Float(), required=True, validate=validate.Length(equal=3))
    intrinsic_error = fields.Float(required=True)
    rng_seed = fields.Integer(required=True, validate=NON_NEGATIVE)

    @post_load
    def make_source(self, data, **kwargs):
        data.pop("format_version")
        data["class_proportions"] = tuple(data["class_proportions"])
        return SourceConfig(**data)


class KeyRateRequestSchema(Schema):
    """JSON body of a key-rate request; omitted fields take the calculator defaults."""
    class Meta:
        unknown = RAISE

    mu = fields.Float(validate=POSITIVE)
    nu = fields.Float(validate=POSITIVE)
    y0 = fields.Float(validate=validate.Range(min=0, max=1))
    loss_db = fields.Float(validate=NON_NEGATIVE)
    qber = fields.Float(validate=validate.Range(min=0, max=1))
    e_nu = fields.Float(allow_none=True, validate=validate.Range(min=0, max=1))
    f_ec = fields.Float(validate=validate.Range(min=1))
    q = fields.Float(validate=validate.Range(min=0, max=1))
    repetition = fields.Float(validate=POSITIVE)
    signal_fraction = fields.Float(validate=validate.Range(min=0, max=1))

    @post_load
    def make_config(self, data, **kwargs):
        return DecoyConfig(**data)


class TomographyRequestSchema(Schema):
    """JSON body of a reconstruction request: a list of count rows."""
    class Meta:
        unknown = RAISE

    counts = fields.List(fields.Nested(CountsRowSchema), required=True, validate=validate.Length(min=1))


class FriedRequestSchema(Schema):
    """JSON body of an r0 request: centroid rows plus the optics."""
    class Meta:
        unknown = RAISE

    centroids = fields.List(fields.Nested(CentroidRowSchema), required=True, validate=validate.Length(min=2))
    frames_per_estimate = fields.Integer(load_default=20, validate=validate.Range(min=2))
    aperture = fields.Float(load_default=0.12, validate=POSITIVE)
    wavelength = fields.Float(load_default=850e-9, validate=POSITIVE)
    distance = fields.Float(load_default=1200.0, validate=POSITIVE)
