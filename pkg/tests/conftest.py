import contextlib
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: list[str] = []


class _Record:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def acceptance():
    """Context manager that logs one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def run(tag, title):
        rec = _Record()
        try:
            yield rec
        except BaseException as exc:
            if isinstance(exc, pytest.skip.Exception):
                _ACCEPTANCE.append(f"SKIP {tag}: {title} ({exc})")
            else:
                first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
                _ACCEPTANCE.append(f"FAIL {tag}: {title} ({rec.detail or first})")
            raise
        _ACCEPTANCE.append(f"PASS {tag}: {title}" + (f" ({rec.detail})" if rec.detail else ""))

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
