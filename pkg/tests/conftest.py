import shutil
import sys
from pathlib import Path

import pytest

from hwfix.corpus import get_bug, load_corpus
from hwfix.errors import SimulatorNotFound
from hwfix.evaluator import Evaluator

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
GOLDEN = TESTS / "golden"
REPO = TESTS.parent
sys.path.insert(0, str(REPO / "scripts"))

# Frozen candidate texts for bug 3 used across the suite.
GRANT_FIXED = "grant_access = (usr_id == 3'h4) ? 1'b1 : 1'b0;\nif (grant_access) data_out = data_in;"
GRANT_INSECURE = "data_out = (grant_access) ? data_in : data_out;\ngrant_access = (usr_id == 3'h4) ? 1'b1 : 1'b0;"
GRANT_WRONG = "if (grant_access) data_out = data_in;"


def _simulator_ok() -> bool:
    try:
        Evaluator(workers=1).ensure_simulator()
        return True
    except SimulatorNotFound:
        return False


HAVE_SIM = _simulator_ok()


def pytest_collection_modifyitems(config, items):
    if HAVE_SIM:
        return
    skip = pytest.mark.skip(reason="no HDL simulator installed")
    for item in items:
        if "sim" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def bug3(corpus):
    return get_bug(corpus, 3)


@pytest.fixture(scope="session")
def evaluator():
    return Evaluator()


@pytest.fixture(scope="session")
def cassette_path():
    from hwfix.cli import shipped_cassette
    return shipped_cassette()


@pytest.fixture
def copy_tree(tmp_path):
    def _copy(src: Path) -> Path:
        dst = tmp_path / src.name
        shutil.copytree(src, dst)
        return dst
    return _copy


# -- acceptance summary -------------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")
    config._acceptance = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    results = item.config._acceptance
    if call.excinfo is not None and call.when in ("setup", "call"):
        detail = call.excinfo.exconly().splitlines()[0][:160]
        if call.excinfo.errisinstance(pytest.skip.Exception):
            results[number] = ("SKIP", title, detail)
        else:
            results[number] = ("FAIL", title, detail)
    elif call.when == "call":
        results[number] = ("PASS", title, getattr(item, "acceptance_note", ""))


def pytest_terminal_summary(terminalreporter, config):
    results = config._acceptance
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        line = f"criterion {number}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
