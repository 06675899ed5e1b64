import random
from collections import defaultdict

import pytest

from jasf.channels import SmsGateway
from jasf.protocol import Account, AccountStore, JasmProtocol, ProtocolConfig

# Digest cost for tests; production default is far higher.
FAST = 50

ALICE = "alice"
PASSWORD = "hunter2-but-longer"
SC = "ABC"
PRIMARY = "+910000000001"
SECONDARY = "+910000000002"
T0 = 1_000_000.0


def make_account(username=ALICE, password=PASSWORD, sc=SC, primary=PRIMARY, secondary=SECONDARY):
    return Account.create(username, password, sc, primary, secondary, iterations=FAST)


@pytest.fixture
def config():
    return ProtocolConfig()


@pytest.fixture
def gateway():
    return SmsGateway()


@pytest.fixture
def store():
    return AccountStore([make_account()])


@pytest.fixture
def engine(store, gateway, config):
    return JasmProtocol(store, gateway, config, random.Random(1234))


_criteria = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        _criteria[(marker.args[0], marker.args[1])].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), results in sorted(_criteria.items()):
        verdict = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {title}")
