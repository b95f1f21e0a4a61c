"""Segment distance-sampled inspection channels into per-segment indicator series."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core_model import SegmentSeries
from .errors import DataError

NOMINAL_SPACING = 0.25


def _max_abs(a):
    return np.max(a)


def _mean_abs(a):
    return np.mean(a)


def _std_abs(a):
    return np.std(a)


def _p95_abs(a):
    return np.percentile(a, 95.0)


REDUCERS = {
    "max_abs": _max_abs,
    "mean_abs": _mean_abs,
    "std_abs": _std_abs,
    "p95_abs": _p95_abs,
}


@dataclass
class RawInspection:
    """One recording run: per channel, sample positions (m) and deviations (mm)."""

    date: float
    channels: dict

    def __post_init__(self):
        clean = {}
        for name, (pos, dev) in self.channels.items():
            pos = np.asarray(pos, dtype=float)
            dev = np.asarray(dev, dtype=float)
            if pos.shape != dev.shape or pos.ndim != 1:
                raise DataError(f"channel {name!r}: positions and deviations differ in shape")
            if pos.size == 0:
                raise DataError(f"channel {name!r} is empty")
            order = np.argsort(pos, kind="stable")
            clean[str(name)] = (pos[order], dev[order])
        self.channels = clean


@dataclass
class SegmentationConfig:
    """How a track is cut into segments and how samples are summarised."""

    segment_length: float = 100.0
    statistic: str = "max_abs"
    track_start: float = 0.0
    track_end: float | None = None
    spacing: float = NOMINAL_SPACING
    spacing_tol: float = 0.05

    def __post_init__(self):
        if not self.segment_length > 0:
            raise DataError("segment_length must be positive")
        if self.statistic not in REDUCERS:
            raise DataError(f"statistic must be one of {sorted(REDUCERS)}")
        if self.track_end is not None and self.track_end <= self.track_start:
            raise DataError("track_end must exceed track_start")

    def edges(self, fallback_end: float) -> np.ndarray:
        end = self.track_end if self.track_end is not None else fallback_end
        n = max(1, int(np.ceil((end - self.track_start) / self.segment_length - 1e-12)))
        edges = self.track_start + self.segment_length * np.arange(n + 1)
        edges[-1] = min(edges[-1], end) if self.track_end is not None else edges[-1]
        return edges


@dataclass
class SegmentedInspection:
    """Per-segment summaries of one inspection; NaN marks a segment with no samples."""

    date: float
    values: dict  # channel -> ndarray (n_segments,)
    counts: dict  # channel -> ndarray of sample counts
    dropped_nan: dict  # channel -> ndarray of dropped NaN samples per segment
    out_of_bounds: dict  # channel -> int
    spacing_violations: dict  # channel -> int
    segment_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))


def segmentize(raw: RawInspection, config: SegmentationConfig | None = None) -> SegmentedInspection:
    """Reduce each channel to one statistic of ``|deviation|`` per segment.

    Segments are half-open ``[start, start + L)``; a sample exactly on an
    edge belongs to the segment on its right.  The final segment may be
    shorter than ``L``.  Samples outside the track bounds are counted, not
    used; NaN deviations are dropped before reduction.
    """
    config = config or SegmentationConfig()
    reducer = REDUCERS[config.statistic]
    fallback_end = max(p.max() for p, _ in raw.channels.values()) + 1e-9
    edges = config.edges(fallback_end)
    n_seg = edges.size - 1
    lengths = np.diff(edges)
    values, counts, dropped, oob, spacing = {}, {}, {}, {}, {}
    for name, (pos, dev) in raw.channels.items():
        steps = np.diff(pos)
        spacing[name] = int(np.sum(np.abs(steps - config.spacing) > config.spacing_tol))
        inside = (pos >= edges[0]) & (pos < edges[-1])
        oob[name] = int(np.sum(~inside))
        seg = np.searchsorted(edges, pos[inside], side="right") - 1
        d = dev[inside]
        nan = np.isnan(d)
        dropped[name] = np.bincount(seg[nan], minlength=n_seg)
        seg, d = seg[~nan], np.abs(d[~nan])
        counts[name] = np.bincount(seg, minlength=n_seg)
        out = np.full(n_seg, np.nan)
        if seg.size:
            bounds = np.searchsorted(seg, np.arange(n_seg + 1))
            for i in range(n_seg):
                lo, hi = bounds[i], bounds[i + 1]
                if hi > lo:
                    out[i] = reducer(d[lo:hi])
        values[name] = out
    return SegmentedInspection(raw.date, values, counts, dropped, oob, spacing, lengths)


def assemble(
    inspections: Sequence[SegmentedInspection],
    indicators: Sequence[str],
    segment_ids: Sequence[int] | None = None,
) -> list[SegmentSeries]:
    """Per-segment date-ordered series of the chosen indicator channels.

    A segment missing any indicator at an inspection skips that inspection,
    which widens the following interval rather than imputing a value.
    """
    indicators = list(indicators)
    if not indicators:
        raise DataError("no indicators selected")
    dates = [float(ins.date) for ins in inspections]
    if len(set(dates)) != len(dates):
        raise DataError("duplicate inspection dates")
    order = np.argsort(dates, kind="stable")
    ordered = [inspections[j] for j in order]
    for ins in ordered:
        missing = [c for c in indicators if c not in ins.values]
        if missing:
            raise DataError(f"inspection {ins.date}: missing channels {missing}")
    n_seg = max(ins.values[indicators[0]].size for ins in ordered) if ordered else 0
    ids = list(range(n_seg)) if segment_ids is None else list(segment_ids)
    out = []
    for i in range(n_seg):
        times, rows = [], []
        for ins in ordered:
            vec = np.array([
                ins.values[c][i] if i < ins.values[c].size else np.nan for c in indicators
            ])
            if np.all(np.isfinite(vec)):
                times.append(float(ins.date))
                rows.append(vec)
        if rows:
            out.append(SegmentSeries(ids[i], np.array(times), np.array(rows), None, tuple(indicators)))
    return out


def build_series(raws: Sequence[RawInspection], indicators: Sequence[str],
                 config: SegmentationConfig | None = None) -> tuple[list[SegmentSeries], list[SegmentedInspection]]:
    """Segment every inspection with a common track extent, then assemble."""
    config = config or SegmentationConfig()
    if config.track_end is None and raws:
        end = max(p.max() for r in raws for p, _ in r.channels.values()) + 1e-9
        config = SegmentationConfig(config.segment_length, config.statistic,
                                    config.track_start, end, config.spacing, config.spacing_tol)
    segd = [segmentize(r, config) for r in raws]
    return assemble(segd, indicators), segd


def load_summary(segmented: Sequence[SegmentedInspection]) -> dict[str, Mapping]:
    """Totals of dropped, out-of-bounds and off-spacing samples per channel."""
    summary: dict[str, dict] = {}
    for ins in segmented:
        for ch in ins.values:
            s = summary.setdefault(ch, {"dropped_nan": 0, "out_of_bounds": 0,
                                        "spacing_violations": 0, "samples": 0})
            s["dropped_nan"] += int(ins.dropped_nan[ch].sum())
            s["out_of_bounds"] += ins.out_of_bounds[ch]
            s["spacing_violations"] += ins.spacing_violations[ch]
            s["samples"] += int(ins.counts[ch].sum())
    return summary
