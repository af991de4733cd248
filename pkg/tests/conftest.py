import time

import pytest

from weightspace.zoo.data import gen_dataset
from weightspace.zoo.forge import ZooGrid, train_zoo


@pytest.fixture(scope="session")
def dataset():
    return gen_dataset("blobs-stripes-checker", classes=3, side=16, n_train=1000, n_test=500, seed=0)


@pytest.fixture(scope="session")
def shifted():
    return gen_dataset("shifted-variant", classes=3, side=16, n_train=1000, n_test=500, seed=0)


@pytest.fixture(scope="session")
def small_zoo(dataset):
    """The 12-model desk grid: 2 inits x 3 learning rates x 2 seeds, 12 epochs."""
    grid = ZooGrid(("uniform", "kaiming_uniform"), (3e-4, 1e-3, 3e-3), (0.0,), (0, 1))
    start = time.perf_counter()
    zoo = train_zoo(grid, dataset, epochs=12, checkpoint_epochs=[6, 9, 12])
    zoo.meta["wall_seconds"] = time.perf_counter() - start
    return zoo


# -- acceptance reporting: one pass/fail line per criterion -----------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    _CRITERIA[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
