"""
Models for archived analysis runs and their per-second rows.
"""
import json
from typing import Any, Dict, List, Optional

from ..database import db


class AnalysisRun(db.Model):
    """One `analyze` invocation: its configuration echo and summary figures."""

    __tablename__ = "analysis_run"

    id = db.Column(db.Integer, primary_key=True)
    label = db.Column(db.String(255), nullable=True, index=True)
    format_version = db.Column(db.Integer, nullable=False, default=1)

    # Summary
    seconds_total = db.Column(db.Integer, nullable=False, default=0)
    seconds_retained = db.Column(db.Integer, nullable=False, default=0)
    sifted_bits = db.Column(db.Integer, nullable=False, default=0)
    mean_qber = db.Column(db.Float, nullable=True)
    e_nu = db.Column(db.Float, nullable=True)
    flagged = db.Column(db.Boolean, nullable=False, default=False)
    key_rate = db.Column(db.Float, nullable=True)

    # Canonical configuration lines stored as JSON
    _config_echo = db.Column("config_echo", db.Text, nullable=True)

    created_at = db.Column(db.DateTime, server_default=db.func.now())

    seconds = db.relationship("SecondRecord", backref="run", cascade="all, delete-orphan",
                              order_by="SecondRecord.second")

    @property
    def config_echo(self) -> List[str]:
        if self._config_echo:
            return json.loads(self._config_echo)
        return []

    @config_echo.setter
    def config_echo(self, value: Optional[List[str]]) -> None:
        self._config_echo = json.dumps(list(value)) if value is not None else None

    def __repr__(self) -> str:
        return f"<AnalysisRun(id={self.id}, label={self.label!r}, mean_qber={self.mean_qber})>"

    def to_dict(self, include_seconds: bool = False) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        data = {
            "id": self.id,
            "label": self.label,
            "format_version": self.format_version,
            "seconds_total": self.seconds_total,
            "seconds_retained": self.seconds_retained,
            "sifted_bits": self.sifted_bits,
            "mean_qber": self.mean_qber,
            "e_nu": self.e_nu,
            "flagged": self.flagged,
            "key_rate": self.key_rate,
            "config_echo": self.config_echo,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }
        if include_seconds:
            data["seconds"] = [s.to_dict() for s in self.seconds]
        return data


class SecondRecord(db.Model):
    """One row of the per-second report."""

    __tablename__ = "second_record"

    id = db.Column(db.Integer, primary_key=True)
    run_id = db.Column(db.Integer, db.ForeignKey("analysis_run.id"), nullable=False, index=True)
    second = db.Column(db.Integer, nullable=False)
    r0 = db.Column(db.Float, nullable=True)
    qber_time = db.Column(db.Float, nullable=True)
    qber_pol = db.Column(db.Float, nullable=True)
    retained = db.Column(db.Boolean, nullable=False, default=False)
    delay = db.Column(db.BigInteger, nullable=True)
    counts_total = db.Column(db.Float, nullable=False, default=0.0)

    __table_args__ = (
        db.UniqueConstraint("run_id", "second", name="unique_run_second"),
    )

    def __repr__(self) -> str:
        return f"<SecondRecord(run_id={self.run_id}, second={self.second}, retained={self.retained})>"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "second": self.second,
            "r0": self.r0,
            "qber_time": self.qber_time,
            "qber_pol": self.qber_pol,
            "retained": self.retained,
            "delay": self.delay,
            "counts_total": self.counts_total,
        }
