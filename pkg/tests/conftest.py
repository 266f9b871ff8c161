from __future__ import annotations

import numpy as np
import pytest

from semsel.data import ClassSplit, SemanticSpace, VisualSet, ZslBundle
from semsel.synthgen import SynthSpec, generate

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def synth_bundle():
    bundle, truth = generate(SynthSpec(seed=3))
    return bundle, truth


@pytest.fixture
def tiny_bundle():
    """3 classes x 4 attributes; a, b seen, c unseen."""
    sem = SemanticSpace(["a", "b", "c"], ["w", "x", "y", "z"],
                        [[1, 0, 0, 1], [0, 1, 0, 1], [0, 0, 1, 0]])
    rng = np.random.default_rng(0)
    train = VisualSet(rng.normal(size=(6, 5)), ["a", "a", "a", "b", "b", "b"])
    test = VisualSet(rng.normal(size=(2, 5)), ["c", "c"])
    return ZslBundle(sem, train, test, ClassSplit(["a", "b"], ["c"]))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
