import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from strategies import CASES  # noqa: E402

from topometric.config import CameraModel  # noqa: E402
from topometric.simworld import World  # noqa: E402

settings.register_profile("repo", deadline=None, derandomize=True, print_blob=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

CASE_LOG = "TOPOMETRIC_CASE_LOG"
CRITERIA: dict[int, tuple[str, bool, str]] = {}


def pytest_sessionfinish(session, exitstatus):
    path = os.environ.get(CASE_LOG)
    if path:
        Path(path).write_text(str(CASES["count"]), encoding="utf-8")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(CRITERIA):
        title, ok, detail = CRITERIA[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {num:2d}  {title}: {detail}")


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary prints them in order."""

    def record(num: int, title: str, ok: bool, detail: str) -> bool:
        CRITERIA[num] = (title, bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'}  {num:2d}  {title}: {detail}")
        return bool(ok)

    return record


@pytest.fixture(scope="session")
def desk_camera():
    return CameraModel(160, 120)


@pytest.fixture(scope="session")
def room():
    """Open 4 m x 4 m room with one furniture block near the far wall."""
    rows = ["#" * 18]
    for r in range(16):
        line = "#" + "." * 16 + "#"
        if r in (2, 3):
            line = "#" + "." * 7 + "AA" + "." * 7 + "#"
        rows.append(line)
    rows.append("#" * 18)
    return World.from_ascii(rows, cell_size=0.25)


@pytest.fixture(scope="session")
def two_rooms():
    """Two rooms joined by a single door in the dividing wall."""
    rows = ["#" * 22]
    for r in range(10):
        mid = "." if r in (7, 8) else "#"
        rows.append("#" + "." * 10 + mid + "." * 9 + "#")
    rows.append("#" * 22)
    return World.from_ascii(rows, cell_size=0.25)
