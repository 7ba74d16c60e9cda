"""CSV ingestion/emission and custom contrast files."""

import csv
import math
import re

import numpy as np

from .contrasts import ContrastSpec, validate
from .estimators import GroupSample
from .exceptions import InputError

COLUMNS = ("group", "time", "status")


def ingest_csv(path):
    """Read a ``group,time,status`` file.

    Groups are indexed in lexicographic order of their labels.  ``M`` is the
    largest status present.  Returns ``(labels, samples)``.
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise InputError(f"{path}: header lacks column(s) {', '.join(missing)}")
        reader.fieldnames = header
        for line, rec in enumerate(reader, start=2):
            values = [rec.get(c) for c in COLUMNS]
            if any(v is None or v.strip() == "" for v in values):
                raise InputError(f"{path}:{line}: missing field")
            group, t_raw, s_raw = (v.strip() for v in values)
            try:
                t = float(t_raw)
            except ValueError:
                raise InputError(f"{path}:{line}: time {t_raw!r} is not a number") from None
            if not math.isfinite(t) or t < 0:
                raise InputError(f"{path}:{line}: time must be finite and nonnegative")
            if not re.fullmatch(r"[+-]?\d+", s_raw):
                raise InputError(f"{path}:{line}: status {s_raw!r} is not an integer")
            s = int(s_raw)
            if s < 0:
                raise InputError(f"{path}:{line}: status must be >= 0")
            rows.setdefault(group, ([], []))
            rows[group][0].append(t)
            rows[group][1].append(s)
    if not rows:
        raise InputError(f"{path}: no data rows")
    labels = sorted(rows)
    M = max(max(rows[g][1]) for g in labels)
    if M == 0:
        raise InputError(f"{path}: no events observed (all statuses are 0); nothing to test")
    small = [g for g in labels if len(rows[g][0]) < 2]
    if small:
        raise InputError(f"{path}: group(s) {', '.join(small)} have fewer than 2 rows")
    return labels, [GroupSample(rows[g][0], rows[g][1], M) for g in labels]


def emit_csv(samples, labels, path):
    """Write samples in the format read by :func:`ingest_csv` (full float precision)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for label, s in zip(labels, samples):
            for t, d in zip(s.times, s.statuses):
                writer.writerow([label, repr(float(t)), int(d)])


def read_contrast_file(path, k, M):
    """Parse a plain-text hypothesis matrix.

    Every non-blank line that is not a comment (``#``) is a row of ``H``
    with ``k * M`` numbers separated by whitespace or commas, optionally
    followed by ``| value`` giving that row's entry of ``c`` (default 0).
    A line ``block: LABEL`` starts a new block; without block lines every
    row forms its own block.
    """
    rows, offsets, starts, labels = [], [], [], []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.lower().startswith("block:"):
                starts.append(len(rows))
                labels.append(line.split(":", 1)[1].strip() or f"H{len(starts)}")
                continue
            body, _, off = line.partition("|")
            try:
                row = [float(x) for x in re.split(r"[,\s]+", body.strip()) if x]
                c = float(off.strip()) if off.strip() else 0.0
            except ValueError:
                raise InputError(f"{path}:{line_no}: cannot parse numbers") from None
            if len(row) != k * M:
                raise InputError(f"{path}:{line_no}: expected {k * M} entries, got {len(row)}")
            rows.append(row)
            offsets.append(c)
    if not rows:
        raise InputError(f"{path}: no matrix rows")
    if starts:
        if starts[0] != 0:
            raise InputError(f"{path}: rows appear before the first 'block:' line")
        if len(set(starts)) != len(starts) or starts[-1] >= len(rows):
            raise InputError(f"{path}: empty block")
    else:
        starts = list(range(len(rows)))
        labels = [f"row{i + 1}" for i in starts]
    spec = ContrastSpec(np.array(rows), np.array(offsets), starts, labels,
                        name=f"file:{path}", mode="custom")
    return validate(spec, k, M)
