import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE = {}


def record_acceptance(number, status, detail):
    """Store one acceptance verdict and echo it immediately."""
    ACCEPTANCE[str(number)] = (status, detail)
    sys.__stdout__.write(f"\n[acceptance {number!s:>7}] {status}: {detail}\n")
    sys.__stdout__.flush()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=lambda k: (int(k.split("-")[0]), k)):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>7}: {status:<8} {detail}")


@pytest.fixture(scope="session")
def mnist_dir():
    directory = os.environ.get("ARCHFORGE_MNIST_DIR")
    return directory if directory and Path(directory).is_dir() else None


@pytest.fixture(scope="session")
def polygons():
    from archforge.data import synthetic_splits

    return synthetic_splits(600, 3)
