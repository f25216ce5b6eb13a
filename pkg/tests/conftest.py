"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""
import time
from contextlib import contextmanager

import pytest

RESULTS = {}


class Criterion:
    def __init__(self, number, title, limit=None):
        self.number, self.title, self.limit = number, title, limit
        self.detail = ""

    @contextmanager
    def run(self):
        t0 = time.perf_counter()
        ok = False
        try:
            yield self
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            if ok and self.limit is not None and elapsed > self.limit:
                ok = False
                self.detail += f" exceeded {self.limit:g} s limit"
            RESULTS[self.number] = (ok, self.title, elapsed, self.detail.strip())
        if self.limit is not None:
            assert elapsed <= self.limit, f"took {elapsed:.1f} s, limit {self.limit:g} s"


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, title, elapsed, detail = RESULTS[k]
        line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}  ({elapsed:.1f} s)"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
