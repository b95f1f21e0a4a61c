"""Flag inspection intervals containing tamping from simultaneous indicator drops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core_model import SegmentSeries
from .errors import DataError, EmptySeriesError

DEFAULT_MIN_DROP = 0.5


@dataclass
class IdentificationConfig:
    """Required per-indicator decrease (mm) for an interval to count as maintained.

    A scalar ``min_drop`` is broadcast to every indicator.  With
    ``require_all=False`` a drop in any single indicator suffices.
    """

    min_drop: Sequence[float] | float = DEFAULT_MIN_DROP
    require_all: bool = True

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.min_drop, dtype=float))
        if np.any(~np.isfinite(arr)) or np.any(arr < 0):
            raise DataError("min_drop must be finite and nonnegative")
        self.min_drop = arr

    def drops_for(self, n_indicators: int) -> np.ndarray:
        if self.min_drop.size == 1:
            return np.repeat(self.min_drop, n_indicators)
        if self.min_drop.size != n_indicators:
            raise DataError(
                f"min_drop has {self.min_drop.size} entries for {n_indicators} indicators"
            )
        return self.min_drop


def identify(series: SegmentSeries, config: IdentificationConfig | None = None) -> SegmentSeries:
    """Return a copy of ``series`` with maintenance flags from the drop rule.

    Interval ``k`` is flagged when ``z[k, q] <= z[k-1, q] - min_drop[q]`` for
    every indicator (or any, with ``require_all=False``).  Existing flags are
    ignored, so the operation is idempotent.
    """
    config = config or IdentificationConfig()
    if series.n_obs < 2:
        raise EmptySeriesError(f"segment {series.segment_id}: need at least 2 observations")
    drop = config.drops_for(series.n_indicators)
    z = series.observations
    dropped = z[1:] <= z[:-1] - drop[None, :]
    hit = dropped.all(axis=1) if config.require_all else dropped.any(axis=1)
    flags = np.concatenate([[False], hit])
    return series.with_flags(flags)


def identify_all(dataset: Iterable[SegmentSeries], config=None) -> list[SegmentSeries]:
    return [identify(s, config) for s in dataset]


@dataclass
class IdentificationReport:
    """Reconciliation of geometry-based flags against work-order records."""

    n_segments: int
    n_intervals: int
    n_flagged: int
    n_work_orders: int | None = None
    matches: int | None = None
    geometry_only: int | None = None
    workorder_only: int | None = None
    matched_intervals: list = field(default_factory=list)
    geometry_only_intervals: list = field(default_factory=list)
    workorder_only_records: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, int]]:
        out = [
            ("segments", self.n_segments),
            ("intervals", self.n_intervals),
            ("flagged", self.n_flagged),
        ]
        if self.n_work_orders is not None:
            out += [
                ("work_orders", self.n_work_orders),
                ("matches", self.matches),
                ("geometry_only", self.geometry_only),
                ("workorder_only", self.workorder_only),
            ]
        return out


def report(dataset: Sequence[SegmentSeries], work_orders=None) -> IdentificationReport:
    """Count flags and, if work orders are given, cross-tabulate them.

    A flagged interval ``(t[k-1], t[k]]`` matches when at least one work
    order for the same segment falls inside it.  Work orders outside every
    flagged interval are reported as work-order-only records.
    """
    dataset = list(dataset)
    n_int = sum(max(s.n_obs - 1, 0) for s in dataset)
    flagged = [(s.segment_id, k) for s in dataset for k in s.maintenance_intervals]
    rep = IdentificationReport(len(dataset), n_int, len(flagged))
    if work_orders is None:
        return rep
    work_orders = [(int(sid), float(t)) for sid, t in work_orders]
    by_id = {s.segment_id: s for s in dataset}
    hit_intervals = set()
    wo_only = []
    for sid, t in work_orders:
        s = by_id.get(sid)
        found = None
        if s is not None:
            for k in s.maintenance_intervals:
                if s.times[k - 1] < t <= s.times[k]:
                    found = (sid, k)
                    break
        if found is None:
            wo_only.append((sid, t))
        else:
            hit_intervals.add(found)
    rep.n_work_orders = len(work_orders)
    rep.matched_intervals = sorted(hit_intervals)
    rep.geometry_only_intervals = [f for f in flagged if f not in hit_intervals]
    rep.workorder_only_records = wo_only
    rep.matches = len(hit_intervals)
    rep.geometry_only = len(rep.geometry_only_intervals)
    rep.workorder_only = len(wo_only)
    return rep
