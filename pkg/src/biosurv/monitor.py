"""Replay a case stream through the equivalence-class table, hour by hour."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from .cases import EdCase, format_timestamp, local_date
from .config import RunConfig, Setup, resolve
from .engine import ClassLikelihoods, EmptyOriginClass, EngineError, EquivalenceClassTable
from .evaluation import PosteriorTrace
from .person_model import ANGLE, LOCATION, TIME

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("timestamp", "p_release", "log_lik_yes", "log_lik_no", "map_location", "map_time", "map_angle")


class CaseError(ValueError):
    """An inner error tied to the case (and file line) that caused it."""

    def __init__(self, message: str, line: int | None, case: EdCase):
        self.line = line
        self.case = case
        where = f"case line {line}" if line is not None else "case"
        super().__init__(f"{where} ({format_timestamp(case.timestamp)}, zip {case.zip}): {message}")


@dataclass
class TraceRow:
    timestamp: datetime
    p_release: float
    log_lik_yes: float
    log_lik_no: float
    map_location: str
    map_time: str
    map_angle: str

    def cells(self) -> list[str]:
        return [format_timestamp(self.timestamp), repr(self.p_release), repr(self.log_lik_yes),
                repr(self.log_lik_no), self.map_location, self.map_time, self.map_angle]


@dataclass
class MonitorResult:
    rows: list[TraceRow]
    skipped: int = 0
    table: EquivalenceClassTable | None = None

    def trace(self) -> PosteriorTrace:
        return PosteriorTrace([r.timestamp for r in self.rows], np.array([r.p_release for r in self.rows]))

    def write(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())


def _floor_hour(ts: datetime) -> datetime:
    return ts.astimezone(timezone.utc).replace(minute=0, second=0, microsecond=0)


def run_monitor(config: RunConfig | Setup, cases: Sequence[EdCase], start: datetime | None = None,
                end: datetime | None = None, line_numbers: Sequence[int] | None = None,
                likelihoods: ClassLikelihoods | None = None, skip_missing_origin: bool = True,
                background: EquivalenceClassTable | None = None) -> MonitorResult:
    """Replay ``cases`` and emit one posterior per cadence step.

    The clock runs from ``start`` (default: the hour of the first case) to
    ``end`` (default: the hour after the last case). Before a case or an
    emission falls on a new local day, the table is rolled forward. A row
    stamped ``t`` reflects every case with timestamp before ``t``.

    ``likelihoods`` lets several replays share one cache of class vectors,
    and ``background`` (a fresh :meth:`EquivalenceClassTable.init_background`
    table built on it) saves rebuilding the initial population.
    """
    setup = config if isinstance(config, Setup) else resolve(config)
    cfg = setup.config
    if start is None or end is None:
        if not cases:
            raise ValueError("an empty case stream needs explicit start and end")
        start = start or _floor_hour(cases[0].timestamp)
        end = end or _floor_hour(cases[-1].timestamp) + timedelta(hours=1)
    if end <= start:
        raise ValueError("monitoring window is empty")
    for a, b in zip(cases, cases[1:]):
        if b.timestamp < a.timestamp:
            raise ValueError("case stream is not sorted by timestamp")
    if cases and (cases[0].timestamp < start or cases[-1].timestamp >= end):
        raise ValueError("case stream extends outside the monitoring window")

    cl = likelihoods or ClassLikelihoods(setup.person_net, setup.model)
    if cl.model is not setup.model or cl.person_net is not setup.person_net:
        raise ValueError("shared likelihood cache belongs to a different model")
    reg = setup.region
    if background is not None:
        if background.likelihoods is not cl or background.tracked_cases:
            raise ValueError("background table must be a fresh table on the same likelihood cache")
        table = background.copy()
        table.current_date = local_date(start, cfg.utc_offset_hours)
    else:
        table = EquivalenceClassTable.init_background(
            reg.census, reg.population_size, cl, start_date=local_date(start, cfg.utc_offset_hours),
            resync_interval=cfg.resync_interval, utc_offset_hours=cfg.utc_offset_hours)

    def roll_to(ts: datetime) -> None:
        d = local_date(ts, cfg.utc_offset_hours)
        if d > table.current_date:
            table.advance_day(d)

    home_zips = set(reg.home_zips)
    step = timedelta(minutes=60 // int(cfg.cadence_per_hour))
    n_steps = math.ceil((end - start) / step)
    rows: list[TraceRow] = []
    skipped = 0
    k = 0
    for s in range(1, n_steps + 1):
        t = start + s * step
        while k < len(cases) and cases[k].timestamp < t:
            case = cases[k]
            line = line_numbers[k] if line_numbers is not None else None
            if case.zip not in home_zips:
                raise CaseError(f"unknown zip {case.zip!r}", line, case)
            try:
                roll_to(case.timestamp)
                table.apply_case_arrival(case)
            except EmptyOriginClass as exc:
                if not skip_missing_origin:
                    raise CaseError(str(exc), line, case) from exc
                log.warning("skipping %s", CaseError(str(exc), line, case))
                skipped += 1
            except (EngineError, KeyError, ValueError) as exc:
                raise CaseError(str(exc), line, case) from exc
            k += 1
        # the posterior at t describes the local day t falls in
        roll_to(t)
        res = table.outbreak_posterior(setup.model)
        yes = res.log_likelihood.get(setup.model.positive_state, -math.inf)
        no = next((v for s_, v in res.log_likelihood.items() if s_ != setup.model.positive_state), -math.inf)
        rows.append(TraceRow(t, float(res.p_release), float(yes), float(no),
                             res.map_state(LOCATION) or "", res.map_state(TIME) or "",
                             res.map_state(ANGLE) or ""))
    return MonitorResult(rows, skipped, table)
