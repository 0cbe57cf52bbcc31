from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

DATA = Path(__file__).parent / "data"
MINI = Path(str(resources.files("mitorbr").joinpath("data", "mini")))

# Filled by test_acceptance; printed at the end of the run.
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def rgb_images(max_side=12):
    shape = st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.just(3))
    return hnp.arrays(np.uint8, shape)


probabilities = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture
def mini_dir():
    return MINI


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
