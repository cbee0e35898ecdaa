import os

import pytest

# (criterion number, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session", autouse=True)
def _quiet_cache(tmp_path_factory):
    # keep cached reference solutions out of the user's home during tests unless asked
    if "RLWMESH_CACHE" not in os.environ:
        os.environ["RLWMESH_CACHE"] = str(tmp_path_factory.getbasetemp().parent / "rlwmesh-cache")
    yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
