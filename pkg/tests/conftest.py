import numpy as np
import pytest

from mobiface import graph, weights


@pytest.fixture(scope="session")
def mobiface():
    return graph.build_mobiface()


@pytest.fixture(scope="session")
def flipped():
    return graph.build_architecture("mobiface-flipped")


@pytest.fixture(scope="session")
def random_weights(flipped):
    net, head = flipped
    return weights.init_random(net, 7, head)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def face_batch():
    rng = np.random.default_rng(99)
    return rng.uniform(-1, 1, (2, 3, 112, 112)).astype(np.float32)


# -- acceptance summary: one line per criterion --------------------------------

_acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = getattr(item, "criterion_detail", "")
        _acceptance.append((marker.args[0], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion")
