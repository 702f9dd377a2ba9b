import os

import numpy as np
import pytest

from sdeicl import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tmpdir_path(tmp_path):
    return str(tmp_path)


requires_compiled = pytest.mark.skipif(
    _backend.kernels is _backend.fallback, reason="compiled kernels not built"
)


def pytest_report_header(config):
    return f"sdeicl kernel backend: {_backend.BACKEND}" + (
        " (forced)" if os.environ.get("SDEICL_PURE_PYTHON") else "")


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    detail = dict(report.user_properties).get("acceptance", "")
    if report.when == "call" or report.failed or report.skipped:
        prev = _ACCEPTANCE.get(name)
        if prev is None or prev[0] == "PASS":
            status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
            _ACCEPTANCE[name] = (status, detail or (prev[1] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        num = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"[{status}] {num:2d} {label}: {detail}")
