import time as _time
from datetime import date, datetime, time, timedelta

import pytest

from energysaver.forecast.schedule import FIRE_AT, MonthlyScheduler, first_business_day

from oracles import first_weekday_scan


def test_examples():
    assert first_business_day(2019, 9) == date(2019, 9, 2)
    assert first_business_day(2019, 6) == date(2019, 6, 3)
    assert first_business_day(2019, 5) == date(2019, 5, 1)  # a Wednesday


def test_matches_calendar_scan():
    for y in range(2015, 2031):
        for m in range(1, 13):
            assert first_business_day(y, m) == first_weekday_scan(y, m)


class Clock:
    def __init__(self, now):
        self.now = now

    def __call__(self):
        return self.now


def test_fires_once_at_two_am_on_the_day():
    clock = Clock(datetime(2019, 9, 2, 1, 59))
    runs = []
    s = MonthlyScheduler(lambda: runs.append(clock.now), clock)
    assert not s.tick()
    clock.now = datetime(2019, 9, 2, 2, 0)
    assert s.tick()
    for minutes in (1, 60, 600):
        clock.now = datetime(2019, 9, 2, 2, 0) + timedelta(minutes=minutes)
        assert not s.tick()
    assert runs == [datetime(2019, 9, 2, 2, 0)]


def test_not_on_other_days():
    clock = Clock(datetime(2019, 9, 1, 3, 0))  # Sunday the 1st
    s = MonthlyScheduler(lambda: None, clock)
    assert not s.tick()
    clock.now = datetime(2019, 9, 3, 3, 0)
    assert not s.tick()


def test_catches_up_when_started_late_that_day():
    clock = Clock(datetime(2019, 6, 3, 17, 45))
    runs = []
    s = MonthlyScheduler(lambda: runs.append(1), clock)
    assert s.tick()
    assert not s.tick()
    assert runs == [1]


def test_simulated_year_runs_twelve_times():
    clock = Clock(datetime(2019, 1, 1, 0, 0))
    runs = []
    s = MonthlyScheduler(lambda: runs.append(clock.now.date()), clock)
    while clock.now < datetime(2020, 1, 1):
        s.tick()
        clock.now += timedelta(hours=1)
    assert runs == [first_weekday_scan(2019, m) for m in range(1, 13)]


def test_failing_job_does_not_stop_next_month():
    clock = Clock(datetime(2019, 6, 3, 2, 0))
    calls = []

    def job():
        calls.append(clock.now)
        raise RuntimeError("boom")

    s = MonthlyScheduler(job, clock)
    assert s.tick()
    clock.now = datetime(2019, 7, 1, 2, 0)
    assert s.tick()
    assert len(calls) == 2


def test_next_fire():
    s = MonthlyScheduler(lambda: None, Clock(None))
    assert s.next_fire(datetime(2019, 5, 20)) == datetime(2019, 6, 3, 2, 0)
    assert s.next_fire(datetime(2019, 6, 1)) == datetime(2019, 6, 3, 2, 0)
    assert s.next_fire(datetime(2019, 6, 3, 5, 0)) == datetime(2019, 6, 3, 5, 0)  # catch-up now
    s.last_run = (2019, 6)
    assert s.next_fire(datetime(2019, 6, 3, 5, 0)) == datetime(2019, 7, 1, 2, 0)
    assert FIRE_AT == time(2, 0)


def test_background_thread_runs_job():
    runs = []
    s = MonthlyScheduler(lambda: runs.append(1), Clock(datetime(2019, 6, 3, 2, 30)))
    s.start(poll_s=0.01)
    deadline = _time.monotonic() + 5
    while not runs and _time.monotonic() < deadline:
        _time.sleep(0.01)
    s.stop()
    assert runs == [1]
