import numpy as np
import pytest

from attngen import autodiff as ad


@pytest.fixture
def f64():
    with ad.precision("float64"):
        yield


@pytest.fixture
def rs():
    return np.random.RandomState(1234)


# acceptance report: one line per criterion, printed after the run

_VERDICTS = {}


def _criterion(nodeid):
    name = nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in nodeid or not name.startswith("test_a"):
        return None
    return "A" + name[len("test_a"):].split("_", 1)[0]


def pytest_runtest_logreport(report):
    cid = _criterion(report.nodeid)
    if cid is None or report.skipped:
        return
    if report.when == "call" or report.failed:
        detail = dict(report.user_properties).get("detail", "")
        if report.failed and not detail:
            detail = f"error during {report.when}"
        _VERDICTS[cid] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_VERDICTS, key=lambda c: int(c[1:])):
        status, detail = _VERDICTS[cid]
        terminalreporter.write_line(f"{cid:4s} {status}  {detail}")
