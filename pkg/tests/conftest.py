import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from ngcf.dataset import InteractionDataset, RawInteractions, split  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def make_dataset(train, n_items, validation=None, test=None):
    n_users = len(train)
    validation = validation or [[] for _ in range(n_users)]
    test = test or [[] for _ in range(n_users)]
    freeze = lambda lists: tuple(np.array(sorted(x), dtype=np.int64) for x in lists)  # noqa: E731
    return InteractionDataset(
        n_users,
        n_items,
        freeze(train),
        freeze(validation),
        freeze(test),
        {str(u): u for u in range(n_users)},
        {str(i): i for i in range(n_items)},
    )


def random_raw(rng, n_users=30, n_items=40, per_user=(3, 15)):
    pairs = []
    for u in range(n_users):
        k = rng.integers(per_user[0], per_user[1] + 1)
        for i in rng.choice(n_items, size=min(k, n_items), replace=False):
            pairs.append((f"u{u}", f"i{i}"))
    return RawInteractions(pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return split(random_raw(rng), seed=7)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` line per criterion; printed in the terminal summary."""

    def record(number, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number}: {status} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
