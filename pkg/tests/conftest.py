import numpy as np
import pytest

from direc.dataset import InteractionDataset, SplitAssignment


def random_dataset(rng, max_entities=10, density=0.3):
    m, k, n = (int(x) for x in rng.integers(1, max_entities + 1, size=3))

    def relation(a, b):
        mask = rng.random((a, b)) < density
        return np.argwhere(mask)

    return InteractionDataset(m, k, n, relation(m, k), relation(m, n), relation(k, n))


def all_train(ds):
    return SplitAssignment(np.arange(len(ds.user_group)), [], [], seed=0)


@pytest.fixture
def toy():
    """5 users, 4 groups, 3 items; every user has a group it never joined."""
    ug = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 3), (3, 2), (3, 3), (4, 0), (4, 1), (4, 2)]
    ui = [(0, 0), (0, 1), (1, 1), (2, 2), (3, 0), (3, 2), (4, 1)]
    gi = [(0, 0), (1, 1), (2, 1), (3, 2)]
    return InteractionDataset(5, 4, 3, ug, ui, gi)


@pytest.fixture
def toy_split(toy):
    return all_train(toy)


# acceptance report: one line per criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
