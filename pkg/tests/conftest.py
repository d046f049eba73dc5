import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    seen = set()
    for line in mod.VERDICTS:
        seen.add(int(line.split("criterion")[1].split(":")[0]))
        terminalreporter.write_line(line)
    ran = {int(item.name[5:7]) for item in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
           if getattr(item, "name", "").startswith("test_") and "test_acceptance" in item.nodeid}
    for n in sorted(ran - seen):
        terminalreporter.write_line(f"[FAIL] criterion {n:2d}: did not complete (see traceback above)")
