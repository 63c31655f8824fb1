import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nrqi.harness import CorpusConfig, generate_corpus  # noqa: E402

SMALL = CorpusConfig(n_patients=10, sequences_per_patient=2, frames_per_sequence=6, size=64, seed=11)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SMALL)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
