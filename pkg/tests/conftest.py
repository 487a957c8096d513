import contextlib
import time

import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}

CRITERIA = 10


class _Check:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the final report."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        c = _Check()
        t0 = time.perf_counter()
        try:
            yield c
        except BaseException as exc:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            _RESULTS[number] = ("FAIL", title, f"{msg} [{time.perf_counter() - t0:.2f}s]")
            raise
        _RESULTS[number] = ("PASS", title, f"{c.detail} [{time.perf_counter() - t0:.2f}s]")

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        status, title, detail = _RESULTS.get(n, ("NOT RUN", "", ""))
        tr.write_line(f"criterion {n:2d}: {status:4s}  {title}  {detail}".rstrip())
