import numpy as np
import pytest

from aggrisk.datagen import GenSpec, generate_portfolio, generate_yet
from aggrisk.model import (
    AggregateTerms,
    EltTerms,
    EventLossTable,
    Layer,
    OccurrenceTerms,
    Portfolio,
    Program,
    Trial,
    YearEventTable,
)


@pytest.fixture
def worked_example():
    """Two-event trial traced by hand: 90 -> occ 70, 150 -> occ 120, 190 -> agg 140."""
    elt1 = EventLossTable(1, {1: 100.0}, EltTerms(10, 1000))
    elt2 = EventLossTable(2, {2: 200.0}, EltTerms(0, 150))
    layer = Layer(1, (1, 2), OccurrenceTerms(20, 120), AggregateTerms(50, 200))
    portfolio = Portfolio(1, (Program(1, (layer,)),))
    yet = YearEventTable.from_trials([Trial(1, ((1, 0.1), (2, 0.6)))], catalog_size=10)
    return portfolio, yet, {1: elt1, 2: elt2}


@pytest.fixture(scope="session")
def small_spec():
    return GenSpec(seed=7, num_trials=400, events_per_trial=(20, 60), catalog_size=5_000,
                   elt_entry_count=400, loss_scale=1_000.0)


@pytest.fixture(scope="session")
def small_workload(small_spec):
    portfolio, elts = generate_portfolio(small_spec, num_programs=2, layers_per_program=2, elts_per_layer=3)
    return portfolio, generate_yet(small_spec), elts


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# -- acceptance reporting: one line per criterion, shown even when output is captured

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def check(number: int, ok: bool, detail: str, soft: bool = False, skipped: bool = False) -> bool:
        if skipped:
            status = "SKIP"
        else:
            status = "PASS" if ok else ("FAIL (soft, not fatal)" if soft else "FAIL")
        line = f"criterion {number:>2}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
