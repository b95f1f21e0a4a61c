"""Readers and writers for the delimiter-separated file formats.

Dates are stored as ISO ``YYYY-MM-DD`` strings and handled internally as
days since 1970-01-01; non-integral day values are written as plain
numbers.  Floats are written with ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io as _io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .core_model import SegmentSeries
from .errors import DataError
from .ingest import RawInspection

EPOCH = _dt.date(1970, 1, 1).toordinal()
RAW_COLUMNS = ("date", "channel", "position_m", "deviation_mm")


def parse_time(value) -> float:
    """ISO date or numeric day count to days since 1970-01-01."""
    text = str(value).strip()
    try:
        return float(_dt.date.fromisoformat(text).toordinal() - EPOCH)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise DataError(f"cannot parse date {text!r}") from None


def format_time(t: float) -> str:
    t = float(t)
    if t.is_integer():
        return _dt.date.fromordinal(int(t) + EPOCH).isoformat()
    return repr(t)


def fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return ""
    return repr(x)


def _read_text(path) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    return p.read_text()


def _sniff(header: str) -> str:
    for sep in (",", "\t", ";", "|"):
        if sep in header:
            return sep
    return ","


# ---------------------------------------------------------------------------
# raw inspection samples
# ---------------------------------------------------------------------------


def read_raw(path) -> list[RawInspection]:
    """Raw samples grouped into one :class:`RawInspection` per date."""
    text = _read_text(path)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    sep = _sniff(lines[0])
    header = [h.strip().lower() for h in lines[0].split(sep)]
    if not set(RAW_COLUMNS) <= set(header):
        raise DataError(
            f"{path}: missing header (expected columns {', '.join(RAW_COLUMNS)})"
        )
    if len(lines) < 2:
        raise DataError(f"{path}: no samples")
    df = pd.read_csv(_io.StringIO(text), sep=sep, skipinitialspace=True,
                     dtype={"channel": str, "date": str})
    df.columns = [c.strip().lower() for c in df.columns]
    df["position_m"] = pd.to_numeric(df["position_m"], errors="coerce")
    df["deviation_mm"] = pd.to_numeric(df["deviation_mm"], errors="coerce")
    if df["position_m"].isna().any():
        raise DataError(f"{path}: unparseable position values")
    out = []
    for date, grp in df.groupby("date", sort=True):
        chans = {
            ch: (g["position_m"].to_numpy(float), g["deviation_mm"].to_numpy(float))
            for ch, g in grp.groupby("channel", sort=True)
        }
        out.append(RawInspection(parse_time(date), chans))
    out.sort(key=lambda r: r.date)
    return out


def write_raw(path, inspections: Iterable[RawInspection]) -> None:
    rows = [",".join(RAW_COLUMNS)]
    for ins in inspections:
        d = format_time(ins.date)
        for ch, (pos, dev) in ins.channels.items():
            rows += [f"{d},{ch},{fmt(p)},{fmt(v)}" for p, v in zip(pos, dev)]
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# segment series
# ---------------------------------------------------------------------------


def series_to_text(dataset: Sequence[SegmentSeries]) -> str:
    dataset = list(dataset)
    if not dataset:
        raise DataError("no series to write")
    labels = dataset[0].labels
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "date", *labels, "maint_flag"])
    for s in dataset:
        if s.labels != labels:
            raise DataError("series disagree on indicator labels")
        for k in range(s.n_obs):
            flag = "" if s.maint_flags is None else str(int(s.maint_flags[k]))
            w.writerow([s.segment_id, format_time(s.times[k]),
                        *[fmt(v) for v in s.observations[k]], flag])
    return buf.getvalue()


def write_series(path, dataset: Sequence[SegmentSeries]) -> None:
    Path(path).write_text(series_to_text(dataset))


def read_series(path) -> list[SegmentSeries]:
    """Parse a segment-series file; empty flag columns give unflagged series."""
    text = _read_text(path)
    rows = list(csv.reader(_io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["segment_id", "date"] or header[-1] != "maint_flag" or len(header) < 4:
        raise DataError(
            f"{path}: missing header (expected segment_id,date,<indicators...>,maint_flag)"
        )
    labels = tuple(header[2:-1])
    groups: dict[int, list] = {}
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        try:
            sid = int(r[0])
            vals = [float(v) for v in r[2:-1]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed number") from None
        groups.setdefault(sid, []).append((parse_time(r[1]), vals, r[-1].strip()))
    out = []
    for sid in sorted(groups):
        recs = sorted(groups[sid], key=lambda x: x[0])
        times = [x[0] for x in recs]
        if len(set(times)) != len(times):
            raise DataError(f"{path}: duplicate dates for segment {sid}")
        flags_raw = [x[2] for x in recs]
        if all(f == "" for f in flags_raw):
            flags = None
        elif any(f == "" for f in flags_raw):
            raise DataError(f"{path}: segment {sid} has partially empty maint_flag column")
        else:
            flags = np.array([f not in ("0", "false", "False") for f in flags_raw])
        out.append(SegmentSeries(sid, times, [x[1] for x in recs], flags, labels))
    return out


# ---------------------------------------------------------------------------
# work orders and truth files
# ---------------------------------------------------------------------------


def read_work_orders(path) -> list[tuple[int, float]]:
    text = _read_text(path)
    rows = [r for r in csv.reader(_io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0][:2]] != ["segment_id", "date"]:
        raise DataError(f"{path}: missing header (expected segment_id,date)")
    return [(int(r[0]), parse_time(r[1])) for r in rows[1:]]


def write_work_orders(path, records: Iterable[tuple[int, float]]) -> None:
    lines = ["segment_id,date"] + [f"{int(s)},{format_time(t)}" for s, t in records]
    Path(path).write_text("\n".join(lines) + "\n")


def write_truth(path, records: Iterable[tuple[str, int, float]]) -> None:
    lines = ["parameter,segment,value"] + [f"{n},{s},{fmt(v)}" for n, s, v in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_truth(path) -> dict[str, float]:
    text = _read_text(path)
    rows = list(csv.reader(_io.StringIO(text)))
    return {r[0]: float(r[2]) for r in rows[1:] if r}


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Generic CSV writer; floats are formatted for exact round trips."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    Path(path).write_text(buf.getvalue())
