import re
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stackpomg.model import PomgModel  # noqa: E402
from stackpomg.moga import DETERMINISTIC, Encoding, FitnessCache  # noqa: E402
from stackpomg.scenario import build_model, enumerate_deterministic  # noqa: E402


def singleton_model(c: float = 1.0, beta: float = 0.5, leader_c: float | None = None) -> PomgModel:
    """Every space has one element; the one cost is ``c``."""
    one = np.ones((1,) * 8)
    lc = c if leader_c is None else leader_c
    return PomgModel(["l"], ["f"], ["la"], ["fa"], ["lz"], ["fz"], one,
                     np.full((1, 1, 1, 1), c), np.full((1, 1, 1, 1, 1), lc), beta, 1,
                     np.ones((1, 1)))


@pytest.fixture(scope="session")
def desk():
    return build_model()


@pytest.fixture(scope="session")
def desk_cache(desk):
    """Fitness of every deterministic desk policy, shared by the slow tests."""
    enc = Encoding(desk, DETERMINISTIC)
    cache = FitnessCache(desk, enc)
    pols = enumerate_deterministic(desk)
    fits = cache.evaluate_all([enc.genes_of(p) for p in pols])
    return cache, pols, fits


# -- acceptance summary: one pass/fail line per criterion ----------------------------

_CRITERIA: dict[int, list] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = re.match(r"test_criterion_(\d+)", item.originalname or item.name)
        if m and item.module.__name__.endswith("test_acceptance"):
            doc = (item.function.__doc__ or "").strip().splitlines()
            _CRITERIA.setdefault(int(m[1]), [doc[0] if doc else item.originalname, None])
            item.user_properties.append(("criterion", int(m[1])))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None or not (report.when == "call" or report.failed or report.skipped):
        return
    entry = _CRITERIA[crit]
    detail = dict(report.user_properties).get("detail")
    if detail:
        entry[0] = f"{entry[0]} ({detail})"
    ok = report.passed and report.when == "call"
    entry[1] = ok if entry[1] is None else (entry[1] and ok)


def pytest_terminal_summary(terminalreporter):
    ran = {k: v for k, v in _CRITERIA.items() if v[1] is not None}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ran):
        title, ok = ran[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {title}")
