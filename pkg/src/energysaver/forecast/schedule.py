"""Monthly job trigger: first weekday of the month at a fixed local time."""
from __future__ import annotations

import calendar
import logging
import threading
from datetime import date, datetime, time, timedelta
from typing import Callable, Optional

log = logging.getLogger(__name__)

FIRE_AT = time(2, 0)


def first_business_day(year: int, month: int) -> date:
    """Earliest day of the month that is not a Saturday or Sunday.

    Holidays are not considered.
    """
    wd = calendar.weekday(year, month, 1)  # Monday == 0
    return date(year, month, 1 + (7 - wd if wd >= 5 else 0))


def next_month(y: int, m: int) -> tuple[int, int]:
    return (y + 1, 1) if m == 12 else (y, m + 1)


class MonthlyScheduler:
    """Runs ``job`` once per month at ``fire_at`` local time on the first
    business day.

    A process that starts later on that day (past ``fire_at``) runs the job
    once straight away. ``clock`` returns naive local datetimes and is
    injectable for tests; :meth:`tick` does one evaluation.
    """

    def __init__(self, job: Callable[[], object], clock: Callable[[], datetime] = datetime.now,
                 fire_at: time = FIRE_AT) -> None:
        self.job = job
        self.clock = clock
        self.fire_at = fire_at
        self.last_run: Optional[tuple[int, int]] = None
        self.runs = 0
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def due(self, now: datetime) -> bool:
        if self.last_run == (now.year, now.month):
            return False
        return (now.date() == first_business_day(now.year, now.month)
                and now.time() >= self.fire_at)

    def tick(self) -> bool:
        now = self.clock()
        if not self.due(now):
            return False
        self.last_run = (now.year, now.month)
        self.runs += 1
        try:
            self.job()
        except Exception:
            # a failed month must not stop next month's run
            log.exception("scheduled job failed for %04d-%02d", now.year, now.month)
        return True

    def next_fire(self, now: datetime) -> datetime:
        this = datetime.combine(first_business_day(now.year, now.month), self.fire_at)
        if self.last_run != (now.year, now.month) and now.date() <= this.date():
            return max(this, now)
        y, m = next_month(now.year, now.month)
        return datetime.combine(first_business_day(y, m), self.fire_at)

    def start(self, poll_s: float = 60.0) -> "MonthlyScheduler":
        def loop() -> None:
            while not self._stop.is_set():
                self.tick()
                wait = (self.next_fire(self.clock()) - self.clock()).total_seconds()
                self._stop.wait(min(max(wait, 0.0), poll_s))
        self._thread = threading.Thread(target=loop, name="forecast-scheduler", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)


def schedule_monthly(clock: Callable[[], datetime], job: Callable[[], object],
                     poll_s: float = 60.0) -> MonthlyScheduler:
    return MonthlyScheduler(job, clock).start(poll_s)
