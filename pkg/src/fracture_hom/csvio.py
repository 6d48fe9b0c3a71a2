"""Byte-reproducible CSV and text output.

Floats are written with 17 significant digits, '.' decimal and '\\n' line
endings.  Every file goes to a temporary sibling first and is moved into
place with ``os.replace`` so readers never see a partial file.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return "%.17g" % x
    if x is None:
        return ""
    return str(x)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def write_lines(path, lines: Iterable[str]) -> Path:
    return atomic_write_text(path, "".join(f"{line}\n" for line in lines))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def read_index_table(path, size: int) -> np.ndarray:
    """Per-index values from a CSV with header ``(index, value)``; every index must appear once."""
    header, rows = read_csv(path)
    if len(header) < 2:
        raise ValueError(f"{path}: need an index column and a value column")
    out = np.full(size, np.nan)
    for r in rows:
        k = int(r[0])
        if not 0 <= k < size:
            raise ValueError(f"{path}: index {k} out of range 0..{size - 1}")
        if not np.isnan(out[k]):
            raise ValueError(f"{path}: index {k} repeated")
        out[k] = float(r[1])
    if np.isnan(out).any():
        raise ValueError(f"{path}: {int(np.isnan(out).sum())} indices missing")
    return out
