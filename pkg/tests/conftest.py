"""Shared fixtures plus the acceptance-criteria result board.

The expensive fixtures (a full default sweep, a labeled day of the
default mix) are session-scoped so the acceptance tests and the module
tests share one run instead of regenerating everything.
"""

import time

import pytest

from tierlab.costs import CostRates
from tierlab.experiment import ExperimentSpec, run_sweep
from tierlab.labels import build_training_set
from tierlab.workload import default_mix, generate

N_CRITERIA = 11

_criteria: dict[int, tuple[bool, str]] = {}
_acceptance_collected = False


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _criteria[number] = (bool(passed), detail)


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def check(number: int, passed: bool, detail: str) -> None:
        record_criterion(number, passed, detail)
        assert passed, f"criterion {number}: {detail}"

    return check


def pytest_collection_modifyitems(config, items):
    global _acceptance_collected
    if any(item.module.__name__ == "test_acceptance" for item in items):
        _acceptance_collected = True


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_collected and not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in _criteria:
            ok, detail = _criteria[n]
            status = "PASS" if ok else "FAIL"
        else:
            status, detail = "FAIL", "no result recorded"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")


@pytest.fixture(scope="session")
def rates():
    return CostRates()


@pytest.fixture(scope="session")
def day_trace():
    """One simulated day of the default mix (seed 7, ~1,700 jobs)."""
    return generate(default_mix(duration=86400.0, seed=7))


@pytest.fixture(scope="session")
def day_labeled(day_trace, rates):
    """(examples, boundaries) for day_trace at the default category count."""
    return build_training_set(day_trace, rates, n_categories=15)


@pytest.fixture(scope="session")
def default_sweep(tmp_path_factory):
    """The full default sweep (3 seeds x 4 quotas x 6 policies + oracle rows).

    Returns a dict with the spec, the rows, the output directory, and the
    wall-clock duration; several acceptance criteria read from it.
    """
    out = tmp_path_factory.mktemp("default_sweep")
    spec = ExperimentSpec(output_dir=str(out))
    start = time.perf_counter()
    rows = run_sweep(spec)
    elapsed = time.perf_counter() - start
    return {"spec": spec, "rows": rows, "dir": str(out), "elapsed": elapsed}
