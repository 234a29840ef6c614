"""
Plain-text reports.

Comma-separated reports start with the run configuration echo as '# ' lines
(ending with '# format_version = 1'), then a one-line header, then rows in a
fixed column order. Key-value reports use the same preamble followed by
'key = value' lines.
"""
import csv
import io
import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from ..errors import FileFormatError

# Configure logging
logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

PER_SECOND_COLUMNS = ("second", "r0", "qber_time", "qber_pol", "retained")
HISTOGRAM_COLUMNS = ("offset_ps", "counts")
CENTROID_COLUMNS = ("t", "theta_x", "theta_y")
COUNTS_COLUMNS = ("second", "H", "V", "D", "A", "R", "L", "integration")
FRIED_COLUMNS = ("second", "r0", "sigma2", "n_frames", "degenerate")
TOMOGRAPHY_COLUMNS = ("second", "purity", "qber_pol", "s1", "s2", "s3", "converged")


def format_value(value: Any) -> str:
    """Text form of one report cell; missing values are empty cells."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _preamble(config_echo: Sequence[str]) -> str:
    lines = [f"# {line}" for line in config_echo]
    lines.append(f"# format_version = {FORMAT_VERSION}")
    return "\n".join(lines) + "\n"


def render_csv(columns: Sequence[str], rows: Iterable[Sequence[Any]], config_echo: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    buf.write(_preamble(config_echo))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise FileFormatError(f"row has {len(row)} cells, header has {len(columns)}")
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        logger.error(f"Error writing report to {path}: {str(e)}")
        raise FileFormatError(f"cannot write {path}: {e}") from e


def read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as e:
        logger.error(f"Error reading report from {path}: {str(e)}")
        raise FileFormatError(f"cannot read {path}: {e}") from e


def write_csv_report(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                     config_echo: Sequence[str] = ()) -> None:
    write_text(path, render_csv(columns, rows, config_echo))


def split_preamble(text: str) -> Tuple[List[str], List[str]]:
    """Separate the '# ' preamble lines (without the marker) from the body lines."""
    preamble, body = [], []
    for line in text.splitlines():
        if not body and line.startswith("#"):
            preamble.append(line[1:].strip())
        elif line.strip():
            body.append(line)
    return preamble, body


def parse_csv_report(text: str, expected_columns: Optional[Sequence[str]] = None) -> Tuple[List[str], List[Dict[str, str]]]:
    """
    Parse a comma-separated report.

    Returns:
        (preamble lines, rows as dicts of raw strings).

    Raises:
        FileFormatError: If there is no header or it differs from expected_columns.
    """
    preamble, body = split_preamble(text)
    if not body:
        raise FileFormatError("report has no header line")
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    if expected_columns is not None and tuple(reader.fieldnames or ()) != tuple(expected_columns):
        raise FileFormatError(f"expected columns {list(expected_columns)}, found {reader.fieldnames}")
    return preamble, list(reader)


def read_csv_report(path: str, expected_columns: Optional[Sequence[str]] = None) -> Tuple[List[str], List[Dict[str, str]]]:
    return parse_csv_report(read_text(path), expected_columns)


def render_key_values(pairs: Sequence[Tuple[str, Any]], config_echo: Sequence[str] = ()) -> str:
    return _preamble(config_echo) + "".join(f"{k} = {format_value(v)}\n" for k, v in pairs)


def write_key_values(path: str, pairs: Sequence[Tuple[str, Any]], config_echo: Sequence[str] = ()) -> None:
    write_text(path, render_key_values(pairs, config_echo))


def parse_key_values(text: str) -> Dict[str, str]:
    _, body = split_preamble(text)
    result = {}
    for n, line in enumerate(body, start=1):
        key, sep, value = line.partition("=")
        if not sep:
            raise FileFormatError(f"line {n}: expected 'key = value'")
        result[key.strip()] = value.strip()
    return result
