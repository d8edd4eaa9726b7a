"""CSV reading and writing.

Comma separated, ``.`` as decimal point, header row required.  Floats are
written with ``repr`` so that a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import CsvParseError, MissingColumn, NonBinaryColumn
from .scm import Dataset


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise CsvParseError(f"not a number: {text!r}", row, column) from None
    if not math.isfinite(value):
        raise CsvParseError(f"non-finite value {text!r}", row, column)
    return value


def read_csv_text(text: str, required: Iterable[str] = (), binary: Iterable[str] = ()) -> Dataset:
    """Parse CSV text.  ``row`` numbers in errors count the header as row 1."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CsvParseError("missing header row", 1, "") from None
    if len(set(header)) != len(header) or "" in header:
        raise CsvParseError("header has empty or repeated column names", 1, "")
    for name in required:
        if name not in header:
            raise MissingColumn(f"no column {name!r} (have: {', '.join(header)})")
    values = [[] for _ in header]
    for i, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvParseError(f"expected {len(header)} fields, found {len(row)}", i, "")
        for j, cell in enumerate(row):
            values[j].append(_parse_float(cell.strip(), i, header[j]))
    columns = {h: np.asarray(v, dtype=float) for h, v in zip(header, values)}
    for name in binary:
        col = columns[name]
        bad = ~np.isin(col, (0.0, 1.0))
        if bad.any():
            row = int(np.argmax(bad)) + 2
            raise NonBinaryColumn(f"column {name!r} must be 0/1; row {row} holds {col[bad][0]!r}")
    return Dataset(columns, {"rows": len(next(iter(columns.values()))) if columns else 0})


def load_csv(path, bindings=None, required: Iterable[str] = ()) -> Dataset:
    """Load a CSV file.  Bound group/label/prediction columns must be binary."""
    data = Path(path).read_bytes()
    required = list(required)
    binary = []
    if bindings is not None:
        required += bindings.columns()
        binary = [c for c in (bindings.group, bindings.label, bindings.prediction) if c is not None]
    ds = read_csv_text(data.decode("utf-8"), required, binary)
    ds.provenance["sha256"] = hashlib.sha256(data).hexdigest()
    return ds


def format_csv(ds: Dataset, columns: Optional[Iterable[str]] = None) -> str:
    names = list(columns) if columns is not None else ds.names
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(names)
    cols = [ds.column(n) for n in names]
    for i in range(len(ds)):
        writer.writerow([repr(float(c[i])) for c in cols])
    return out.getvalue()


def write_csv(ds: Dataset, path, columns: Optional[Iterable[str]] = None) -> None:
    Path(path).write_text(format_csv(ds, columns), encoding="utf-8")
