"""UTC clocks and seconds-granularity datestamps."""

from datetime import datetime, timedelta, timezone
from typing import Protocol

DATESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
DAY_FORMAT = "%Y-%m-%d"
ARC_DATE_FORMAT = "%Y%m%d%H%M%S"


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    """Wall clock truncated to whole seconds."""

    def now(self) -> datetime:
        return datetime.now(timezone.utc).replace(microsecond=0)


class SteppingClock:
    """Deterministic clock that advances by a fixed step on every read."""

    def __init__(self, start: datetime, step_seconds: int = 1):
        self.current = to_utc(start)
        self.step = timedelta(seconds=step_seconds)

    def now(self) -> datetime:
        value = self.current
        self.current = self.current + self.step
        return value

    def advance(self, seconds: int) -> None:
        self.current = self.current + timedelta(seconds=seconds)


def to_utc(value: datetime) -> datetime:
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).replace(microsecond=0)


def format_datestamp(value: datetime) -> str:
    return to_utc(value).strftime(DATESTAMP_FORMAT)


def parse_datestamp(text: str) -> datetime:
    """Parse a `YYYY-MM-DDThh:mm:ssZ` datestamp; raises ValueError otherwise."""
    return datetime.strptime(text.strip(), DATESTAMP_FORMAT).replace(tzinfo=timezone.utc)


def format_arc_date(value: datetime) -> str:
    return to_utc(value).strftime(ARC_DATE_FORMAT)
