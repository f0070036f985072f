import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# small molecules used across modules
SMALL = ["C", "CC", "CCO", "C=O", "CC#N", "C1CC1", "c1ccccc1", "CC(=O)O", "OCC(N)C",
         "c1ccncc1", "ClC(Br)F", "CC(C)(C)O", "C1CCOC1", "O=C1CCCC1", "Cc1ccc(O)cc1"]


@pytest.fixture(scope="session")
def micro_state():
    from specnovo.model import OutputVocab, new_state, preset
    vocab = OutputVocab.build(SMALL)
    return new_state(preset("micro"), vocab, seed=3, dtype=np.float64)


@pytest.fixture(scope="session")
def synth_records():
    from specnovo import synth
    return synth.make_records(synth.molecule_set(11, 12, "A", 4, 7), seed=2)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
