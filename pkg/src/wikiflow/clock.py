"""Injectable clock so event logs are reproducible in tests."""

from __future__ import annotations

import datetime as _dt


class SystemClock:
    """Wall clock, UTC."""

    def now(self) -> _dt.datetime:
        return _dt.datetime.now(_dt.timezone.utc)


class FixedClock:
    """Starts at a fixed instant and advances by a constant step per call."""

    def __init__(self, start: _dt.datetime | None = None, step_seconds: float = 1.0):
        self._now = start or _dt.datetime(2020, 1, 1, tzinfo=_dt.timezone.utc)
        self._step = _dt.timedelta(seconds=step_seconds)

    def now(self) -> _dt.datetime:
        current = self._now
        self._now = self._now + self._step
        return current


def isoformat(ts: _dt.datetime) -> str:
    return ts.isoformat()
