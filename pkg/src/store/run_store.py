from typing import List, Optional, Sequence
import logging
from sqlalchemy.exc import SQLAlchemyError

from ..database import db
from ..models.analysis_run import AnalysisRun, SecondRecord

# Configure logging
logger = logging.getLogger(__name__)


def save_run(report, config_echo: Sequence[str] = (), label: Optional[str] = None,
             key_rate: Optional[float] = None) -> AnalysisRun:
    """
    Archives an analysis report with its per-second rows.

    Args:
        report: An AnalysisReport.
        config_echo: Configuration lines the report was produced with.
        label: Optional free-text label.
        key_rate: Optional key rate in bits/s computed for the run.

    Returns:
        The stored AnalysisRun.
    """
    by_second = {s.second_index: s for s in report.stats}
    run = AnalysisRun(
        label=label,
        seconds_total=len(report.stats),
        seconds_retained=len(report.retained_seconds),
        sifted_bits=len(report.key_pair),
        mean_qber=report.mean_qber,
        e_nu=report.e_nu,
        flagged=report.flagged,
        key_rate=key_rate,
    )
    run.config_echo = list(config_echo)
    for second, r0, qber_time, qber_pol, retained in report.rows():
        stats = by_second[second]
        run.seconds.append(SecondRecord(second=second, r0=r0, qber_time=qber_time, qber_pol=qber_pol,
                                        retained=bool(retained), delay=stats.delay,
                                        counts_total=stats.counts_total))
    try:
        db.session.add(run)
        db.session.commit()
    except SQLAlchemyError as e:
        db.session.rollback()
        logger.error(f"Error archiving analysis run: {str(e)}")
        raise e
    logger.info(f"Archived analysis run {run.id} with {len(run.seconds)} seconds")
    return run


def get_all_runs() -> List[AnalysisRun]:
    """
    Retrieves all archived runs, newest first.
    """
    return AnalysisRun.query.order_by(AnalysisRun.id.desc()).all()


def get_run_by_id(run_id: int) -> Optional[AnalysisRun]:
    """
    Retrieves an archived run by its ID.

    Returns:
        The AnalysisRun if found, None otherwise.
    """
    return db.session.get(AnalysisRun, run_id)


def delete_run(run_id: int) -> bool:
    """
    Deletes an archived run and its per-second rows.

    Returns:
        True if the run was found and deleted, False otherwise.
    """
    run = db.session.get(AnalysisRun, run_id)
    if run is None:
        return False
    try:
        db.session.delete(run)
        db.session.commit()
        return True
    except SQLAlchemyError as e:
        db.session.rollback()
        logger.error(f"Error deleting analysis run {run_id}: {str(e)}")
        raise e
