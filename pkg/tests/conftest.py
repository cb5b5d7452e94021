import re

import numpy as np
import pytest
from hypothesis import settings

from stats_helpers import CRITERION_LINES

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def _criterion_key(line):
    label = line.split(":")[0].split()[-1]
    digits = re.match(r"\d+", label).group()
    return int(digits), label


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=_criterion_key):
            terminalreporter.write_line(line)
