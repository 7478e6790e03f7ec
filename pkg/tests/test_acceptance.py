"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import pytest

from obslab import acceptance

RESULTS = {}

HEAVY = {4, 5, 6, 7, 9, 10}


def line(result):
    status = "PASS" if result.passed else "FAIL"
    return f"criterion {result.number:>2} {status}  {result.name}: {result.detail}"


@pytest.mark.parametrize(
    "criterion",
    [pytest.param(c, id=f"criterion_{c.number}",
                  marks=[pytest.mark.slow] if c.number in HEAVY else [])
     for c in acceptance.CRITERIA])
def test_criterion(criterion):
    result = criterion(seed=0)
    RESULTS[result.number] = result
    print(line(result))
    assert result.passed, line(result)
