"""Detection times, false-positive rates and AMOC curves from posterior traces.

A threshold raises an alarm at an hour when the posterior is at or above
it. Detection counts only samples strictly after the release and within
the 144 hour horizon; false positives are counted over the hours before
``release + 24h``, where no outbreak case can have arrived yet.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np

from .cases import ParseError, format_timestamp, parse_timestamp

HORIZON_HOURS = 144.0
FP_LAG_HOURS = 24.0
HOURS_PER_WEEK = 168.0
EARLIEST_DETECTION_HOURS = 24.0
AMOC_HEADER = ("threshold", "fp_fraction", "fp_per_week", "mean_detection_hours", "ci_halfwidth_hours")


class InsufficientCoverage(ValueError):
    pass


class EmptyWindow(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


@dataclass
class PosteriorTrace:
    timestamps: list[datetime]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values differ in length")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not b > a:
                raise ValueError("trace timestamps must be strictly increasing")
        if ((self.values < 0) | (self.values > 1) | np.isnan(self.values)).any():
            raise ValueError("posterior values must lie in [0, 1]")

    def __len__(self):
        return len(self.timestamps)

    def hours_since(self, t0: datetime) -> np.ndarray:
        return np.array([(t - t0).total_seconds() / 3600.0 for t in self.timestamps])


@dataclass(frozen=True)
class AmocPoint:
    threshold: float
    fp_fraction: float
    mean_detection_hours: float
    ci_halfwidth_hours: float = float("nan")

    @property
    def fp_per_week(self) -> float:
        return self.fp_fraction * HOURS_PER_WEEK


def _check_coverage(trace: PosteriorTrace, release_time: datetime) -> np.ndarray:
    if not len(trace):
        raise InsufficientCoverage("empty trace")
    h = trace.hours_since(release_time)
    if h[0] > 0 or h[-1] < HORIZON_HOURS:
        raise InsufficientCoverage(
            f"trace spans {format_timestamp(trace.timestamps[0])}..{format_timestamp(trace.timestamps[-1])}, "
            f"needs release {format_timestamp(release_time)} through +{HORIZON_HOURS:g}h")
    return h


def detection_time(trace: PosteriorTrace, release_time: datetime, threshold: float) -> float:
    """Hours from release to the first post-release alarm, or 144 if none."""
    h = _check_coverage(trace, release_time)
    mask = (h > 0) & (h <= HORIZON_HOURS) & (trace.values >= threshold)
    hits = np.flatnonzero(mask)
    return float(h[hits[0]]) if hits.size else HORIZON_HOURS


def _window_mask(trace: PosteriorTrace, start: datetime, end: datetime) -> np.ndarray:
    ts = trace.timestamps
    mask = np.array([start <= t < end for t in ts], dtype=bool)
    if not mask.any():
        raise EmptyWindow(f"no trace samples in [{format_timestamp(start)}, {format_timestamp(end)})")
    return mask


def false_positive_rate(trace: PosteriorTrace, threshold: float, window_start: datetime,
                        window_end: datetime) -> float:
    """Fraction of sampled hours in ``[window_start, window_end)`` at or above ``threshold``."""
    mask = _window_mask(trace, window_start, window_end)
    return float(np.count_nonzero(trace.values[mask] >= threshold) / np.count_nonzero(mask))


def ci_halfwidth(detection_times: Sequence[float]) -> float:
    """Normal-approximation 95% half-width: 1.96 * sd / sqrt(n)."""
    x = np.asarray(detection_times, dtype=np.float64)
    if x.size < 2:
        raise TooFewSamples("need at least two detection times")
    return float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def amoc_thresholds(traces: Iterable[PosteriorTrace]) -> np.ndarray:
    vals = [t.values for t in traces]
    return np.unique(np.concatenate(vals + [np.array([0.0, 1.0])]))


def compute_amoc(traces: Sequence[tuple[PosteriorTrace, datetime]]) -> list[AmocPoint]:
    """AMOC points over thresholds = unique posterior values plus {0, 1}.

    False positives are pooled: total alarm hours over total monitored
    hours across traces. The false-positive window of each trace runs from
    its first sample to 24 hours after its release.
    """
    if not traces:
        raise ValueError("compute_amoc needs at least one trace")
    thresholds = amoc_thresholds(t for t, _ in traces)
    n_t = thresholds.size
    fp_hits = np.zeros(n_t)
    fp_total = 0
    det = np.empty((len(traces), n_t))
    for k, (trace, release) in enumerate(traces):
        h = _check_coverage(trace, release)
        fp_vals = trace.values[h < FP_LAG_HOURS]
        if fp_vals.size:
            # alarms at threshold th: count of values >= th
            s = np.sort(fp_vals)
            fp_hits += s.size - np.searchsorted(s, thresholds, side="left")
            fp_total += s.size
        post = (h > 0) & (h <= HORIZON_HOURS)
        ph, pv = h[post], trace.values[post]
        # the first sample whose running max reaches th is the detection sample
        if ph.size:
            idx = np.searchsorted(np.maximum.accumulate(pv), thresholds, side="left")
            det[k] = np.where(idx < ph.size, ph[np.minimum(idx, ph.size - 1)], HORIZON_HOURS)
        else:
            det[k] = HORIZON_HOURS
    if fp_total == 0:
        raise EmptyWindow("no samples before release + 24h in any trace")
    fp = fp_hits / fp_total
    # exactly rounded sums keep the means independent of trace order
    mean_det = np.array([math.fsum(col) for col in det.T]) / len(traces)
    ci = np.full(n_t, np.nan) if len(traces) < 2 else 1.96 * det.std(axis=0, ddof=1) / math.sqrt(len(traces))
    points = [AmocPoint(float(th), float(f), float(m), float(c))
              for th, f, m, c in zip(thresholds, fp, mean_det, ci)]
    points.sort(key=lambda p: (p.fp_fraction, -p.threshold))
    return points


def detection_at_fp(points: Sequence[AmocPoint], max_fp: float = 0.0) -> float:
    """Best mean detection time among points with fp fraction at most ``max_fp``."""
    ok = [p.mean_detection_hours for p in points if p.fp_fraction <= max_fp + 1e-15]
    if not ok:
        raise ValueError(f"no AMOC point with fp <= {max_fp}")
    return min(ok)


def mean_detection_in_band(points: Sequence[AmocPoint], max_fp: float) -> float:
    """Average of the AMOC step curve ``detection_at_fp(points, f)`` over ``f`` in ``[0, max_fp]``.

    The curve is piecewise constant between the fp fractions of the points,
    so the average is an exact sum of rectangles.
    """
    if not max_fp > 0:
        raise ValueError("max_fp must be positive")
    knots = sorted({p.fp_fraction for p in points if p.fp_fraction < max_fp} | {0.0})
    knots.append(max_fp)
    area = 0.0
    for lo, hi in zip(knots, knots[1:]):
        area += (hi - lo) * detection_at_fp(points, lo)
    return area / max_fp


# -- files --------------------------------------------------------------------

def write_amoc(points: Sequence[AmocPoint], fh) -> None:
    fh.write(f"# earliest_possible_detection_hours={EARLIEST_DETECTION_HOURS:g}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(AMOC_HEADER)
    for p in points:
        w.writerow([repr(p.threshold), repr(p.fp_fraction), repr(p.fp_per_week),
                    repr(p.mean_detection_hours), repr(p.ci_halfwidth_hours)])


def read_amoc(fh) -> list[AmocPoint]:
    rows = [line for line in fh if line.strip() and not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or tuple(header) != AMOC_HEADER:
        raise ParseError("bad AMOC header")
    return [AmocPoint(float(r[0]), float(r[1]), float(r[3]), float(r[4])) for r in reader]


TRACE_HEADER = ("timestamp", "p_release")


def read_trace(fh) -> PosteriorTrace:
    """Read a trace CSV; needs ``timestamp`` and ``p_release`` columns, others are ignored."""
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or not set(TRACE_HEADER) <= set(reader.fieldnames):
        raise ParseError("trace needs timestamp and p_release columns", 1)
    ts, vals = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            ts.append(parse_timestamp(row["timestamp"]))
            vals.append(float(row["p_release"]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    try:
        return PosteriorTrace(ts, np.array(vals))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def write_trace(trace: PosteriorTrace, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for t, v in zip(trace.timestamps, trace.values):
        w.writerow([format_timestamp(t), repr(float(v))])


def hourly_grid(start: datetime, hours: int) -> list[datetime]:
    return [start + timedelta(hours=k) for k in range(hours)]
