"""Acceptance criteria at their stated tolerances, one test per criterion.

Each test prints a single ``[PASS]`` or ``[FAIL]`` line. Run directly
(``python tests/test_acceptance.py``) to print all lines without pytest.
"""

import pytest

from gatecircuits.acceptance import CHECKS, check_recovery_matrix, run_criterion

SEED = 0


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number, capsys):
    result = run_criterion(number, SEED)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.summary


def test_recovery_matrix_negative_control():
    # Strongly biased OR toy behaves like an ADDER, so the check must notice.
    result = check_recovery_matrix(SEED, {"OR": {"bias1": 0.4, "bias2": 0.4}})
    assert not result.passed
    assert "OR" in result.summary


if __name__ == "__main__":
    for n in sorted(CHECKS):
        print(run_criterion(n, SEED).line(), flush=True)
