import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))
CONFIGS = HERE.parent / "configs"
SHIPPED = sorted(CONFIGS.glob("*.toml"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def report(tag, ok, detail=""):
    """Record and print one acceptance verdict line."""
    line = f"{tag} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    ACCEPTANCE[tag] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for tag in sorted(ACCEPTANCE, key=lambda t: int(t[1:])):
            terminalreporter.write_line(ACCEPTANCE[tag])
