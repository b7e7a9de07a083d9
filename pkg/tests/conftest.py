import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from ioc.harness import run_example


@pytest.fixture(scope="session")
def bundles():
    """One full pipeline run per benchmark problem, shared by the session."""
    return {index: run_example(index) for index in (1, 2, 3)}
