from __future__ import annotations

import os
import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

LIVE_ENV = "GENEUS_LIVE_TESTS"
_INET = (socket.AF_INET, socket.AF_INET6)
_real_connect = socket.socket.connect
_real_connect_ex = socket.socket.connect_ex


class NetworkBlocked(RuntimeError):
    pass


def _guarded(real):
    def connect(self, address, *args, **kwargs):
        if self.family in _INET:
            raise NetworkBlocked(f"network access attempted in an offline test: {address!r}")
        return real(self, address, *args, **kwargs)

    return connect


def pytest_collection_modifyitems(config, items):
    live_on = os.environ.get(LIVE_ENV) == "1"
    skip_live = pytest.mark.skip(reason=f"live provider tests run only with {LIVE_ENV}=1")
    for item in items:
        if "live" in item.keywords and not live_on:
            item.add_marker(skip_live)


@pytest.fixture(autouse=True)
def _no_network(request, monkeypatch):
    if request.node.get_closest_marker("live") is None:
        monkeypatch.setattr(socket.socket, "connect", _guarded(_real_connect))
        monkeypatch.setattr(socket.socket, "connect_ex", _guarded(_real_connect_ex))
    yield


# one pass/fail line per acceptance criterion

_criteria: dict[str, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria.setdefault(label, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: (len(s.split()[0]), s)):
        results = _criteria[label]
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  {label}  ({sum(results)}/{len(results)} checks)")
