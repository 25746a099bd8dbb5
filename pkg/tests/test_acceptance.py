"""Acceptance suite at full tolerances; run with ``pytest tests/test_acceptance.py``.

Each criterion prints its PASS/FAIL line directly to the terminal.  Criteria
3 to 8 are statistical and take minutes each.
"""

import pytest

from ccq.acceptance import CRITERIA

SLOW = {3, 4, 5, 6, 7, 8}


@pytest.mark.parametrize(
    "number",
    [pytest.param(n, marks=pytest.mark.slow) if n in SLOW else n for n in sorted(CRITERIA)],
    ids=[f"criterion-{n}" for n in sorted(CRITERIA)],
)
def test_criterion(number, capsys):
    result = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.detail
