import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from clickvid.pvlog import PVRecord, ResultEntry, as_channels

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ch(*vectors):
    """Channels from plain lists: ch([0, 1], [2]) -> two channels."""
    return as_channels([list(map(float, v)) for v in vectors])


def entry(item_id, top="shoes", leaf=None, clicked=False, click_time=None, features=None, position=1):
    if clicked and click_time is None:
        click_time = 100 + position
    return ResultEntry(
        item_id,
        leaf or f"{top}.x",
        top,
        position,
        clicked,
        click_time if clicked else None,
        features if features is not None else ch([0.0, 0.0]),
    )


def record(entries, query=None, pred="shoes", sel=None, pv_id="pv0", ts=100, query_id="q0", user_id="u0"):
    """Build a PVRecord; entry positions are renumbered 1..N."""
    results = []
    for i, e in enumerate(entries, start=1):
        results.append(ResultEntry(e.item_id, e.leaf_category, e.top_category, i, e.clicked, e.click_time, e.item_features))
    return PVRecord(pv_id, user_id, query_id, query if query is not None else ch([0.0, 0.0]), ts, pred, sel, results)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
