"""ED case records and the case-stream CSV format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Optional

RESPIRATORY_VALUES = ("true", "false", "unknown")
GENDERS = ("female", "male")
CASE_HEADER = ("timestamp", "zip", "age_decile", "gender", "respiratory")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class EdCase:
    """One ED arrival. Outbreak cases fresh from the plume carry no demographics."""

    timestamp: datetime
    zip: str
    age_decile: Optional[int] = None
    gender: Optional[str] = None
    respiratory: str = "true"

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))
        if self.respiratory not in RESPIRATORY_VALUES:
            raise ValueError(f"respiratory must be one of {RESPIRATORY_VALUES}")
        if self.gender is not None and self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}")


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def local_date(ts: datetime, utc_offset_hours: float = 0.0) -> date:
    """Calendar date of ``ts`` in a fixed offset from UTC."""
    return (ts.astimezone(timezone.utc) + timedelta(hours=utc_offset_hours)).date()


def local_midnight(d: date, utc_offset_hours: float = 0.0) -> datetime:
    """UTC instant of local midnight starting day ``d``."""
    return datetime(d.year, d.month, d.day, tzinfo=timezone.utc) - timedelta(hours=utc_offset_hours)


def write_cases(cases: Iterable[EdCase], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CASE_HEADER)
    for c in cases:
        w.writerow([format_timestamp(c.timestamp), c.zip,
                    "" if c.age_decile is None else c.age_decile,
                    c.gender or "", c.respiratory])


def read_cases(fh) -> list[EdCase]:
    return [c for _, c in read_numbered_cases(fh)]


def read_numbered_cases(fh) -> list[tuple[int, EdCase]]:
    """Cases paired with their line numbers in the file."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CASE_HEADER:
        raise ParseError(f"expected header {','.join(CASE_HEADER)}", 1)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CASE_HEADER):
            raise ParseError(f"expected {len(CASE_HEADER)} fields, got {len(row)}", lineno)
        ts, zip_, age, gender, resp = (x.strip() for x in row)
        try:
            out.append((lineno, EdCase(parse_timestamp(ts), zip_,
                                       int(age) if age else None, gender or None, resp)))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return out


def cases_to_text(cases: Iterable[EdCase]) -> str:
    buf = io.StringIO()
    write_cases(cases, buf)
    return buf.getvalue()
