"""Acceptance gate: one test per criterion, each printing its own
pass/fail line with the measured detail. The heavy runs are shared
through a session fixture so the suite executes each criterion once."""

import pytest

from pairbath.acceptance import run_criteria

NAMES = {
    1: "conditional propagator matches the joint-space oracle",
    2: "dense and factored engines agree",
    3: "mixed bath purifies on the dimer chain",
    4: "purified chain pairs up neighbor by neighbor",
    5: "classical steady states at omega = 0",
    6: "pulse-sequence verification separates singlets",
    7: "dephasing degrades pairing monotonically",
    8: "paired bath senses detuned species better",
    9: "scan grid reproduces byte-identically",
}


@pytest.fixture(scope="session")
def criteria_results():
    return {r.index: r for r in run_criteria()}


@pytest.mark.parametrize("index", sorted(NAMES))
def test_criterion(index, criteria_results):
    r = criteria_results[index]
    mark = "PASS" if r.passed else "FAIL"
    print(f"criterion {index} [{mark}] {r.name}: {r.detail} ({r.seconds:.1f}s)")
    assert r.name == NAMES[index]
    assert r.passed, f"criterion {index} ({r.name}): {r.detail}"
