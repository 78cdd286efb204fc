import contextlib
import time

import pytest

_acceptance: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Context manager that times one acceptance criterion and records PASS/FAIL.

    Usage::

        with criterion(3, "auth gates") as note:
            note("extra detail shown in the summary line")
            ...
    """

    @contextlib.contextmanager
    def run(number, title):
        details = []
        start = time.perf_counter()
        try:
            yield details.append
        except BaseException as exc:
            elapsed = time.perf_counter() - start
            _record(number, "FAIL", title, elapsed, details + [f"{type(exc).__name__}: {exc}".splitlines()[0]])
            raise
        _record(number, "PASS", title, time.perf_counter() - start, details)

    return run


def _record(number, verdict, title, elapsed, details):
    line = f"criterion {number:2d} {verdict}  {title} ({elapsed:.1f}s)"
    if details:
        line += "  " + "; ".join(details)
    _acceptance[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        terminalreporter.write_line(_acceptance[n])
