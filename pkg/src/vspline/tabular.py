"""CSV helpers with byte-stable numeric formatting."""

from __future__ import annotations

import csv
import io
import math
import numbers
from pathlib import Path


def format_number(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    if isinstance(x, str):
        return x
    if isinstance(x, numbers.Integral):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(x) for x in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows))


def read_csv(path):
    """Header list and the data rows (lists of strings), blank lines skipped.

    Rows carry their 1-based file line number as the first element.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        rows = []
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if header is None:
                header = [cell.strip() for cell in row]
                continue
            rows.append((reader.line_num, [cell.strip() for cell in row]))
    return header or [], rows
