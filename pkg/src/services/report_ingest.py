import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type

from marshmallow import Schema, ValidationError

from ..errors import DomainError, FileFormatError
from ..schemas.record_schemas import CentroidRowSchema, CountsRowSchema
from ..store.text_reports import CENTROID_COLUMNS, COUNTS_COLUMNS, parse_csv_report, read_text

# Configure logging
logger = logging.getLogger(__name__)


def process_rows(text: str, schema_class: Type[Schema],
                 columns: Optional[Sequence[str]] = None) -> Tuple[str, List[Any], List[Dict[str, Any]]]:
    """
    Validates every data row of a comma-separated report and collects errors.

    Args:
        text: Report text (preamble, header, rows).
        schema_class: Row schema; its post_load builds the domain object.
        columns: Expected header, when fixed.

    Returns:
        A tuple containing:
            - message (str): A summary message.
            - valid_items (List): Domain objects of the rows that validated.
            - errors (List[Dict]): {"row": n, "errors": {...}, "data": {...}} per rejected row.

    Raises:
        FileFormatError: If the header is missing or wrong.
    """
    schema = schema_class()
    _, rows = parse_csv_report(text, columns)
    valid_items: List[Any] = []
    errors: List[Dict[str, Any]] = []

    row_number = 1  # header is row 1
    for row in rows:
        row_number += 1
        try:
            valid_items.append(schema.load(row))
        except ValidationError as err:
            errors.append({"row": row_number, "errors": err.messages, "data": row})
        except DomainError as e:
            errors.append({"row": row_number, "errors": {"_domain": [str(e)]}, "data": row})

    message = f"Processed {len(valid_items)} row(s) successfully."
    if errors:
        message += f" Found {len(errors)} row(s) with validation errors."
    return message, valid_items, errors


def _load_file(path: str, schema_class: Type[Schema], columns: Sequence[str]) -> List[Any]:
    message, items, errors = process_rows(read_text(path), schema_class, columns)
    logger.info(f"{path}: {message}")
    for e in errors[:10]:
        logger.warning(f"{path} row {e['row']}: {e['errors']}")
    if errors and not items:
        raise FileFormatError(f"{path}: no valid rows ({len(errors)} rejected)")
    return items


def load_centroid_file(path: str) -> List[Any]:
    """CentroidSample rows of a centroid series file."""
    return _load_file(path, CentroidRowSchema, CENTROID_COLUMNS)


def load_counts_file(path: str) -> List[Any]:
    """SixStateCounts rows of a tomography counts file."""
    return _load_file(path, CountsRowSchema, COUNTS_COLUMNS)
