"""Collects acceptance verdicts and prints one line per criterion at the end of a run."""

import pytest

ACCEPTANCE_COUNT = 11
_verdicts = {}
_selected = set()


@pytest.fixture
def verdict():
    """``verdict(k, passed, detail)`` records the outcome of criterion ``k``."""

    def record(number, passed, detail):
        _verdicts[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_collection_modifyitems(items):
    for item in items:
        number = getattr(item.function, "criterion", None)
        if number is not None:
            _selected.add(number)


def pytest_terminal_summary(terminalreporter):
    if not _selected:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_selected):
        if k in _verdicts:
            ok, detail = _verdicts[k]
            line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        else:
            line = f"criterion {k:2d}: FAIL  no verdict recorded (crashed or skipped)"
        terminalreporter.write_line(line)
