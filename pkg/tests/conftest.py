import sys

import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(label): acceptance criterion with a printed verdict"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        label = marker.kwargs.get("label", item.name)
        status = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {label}: {status}", file=sys.stderr)
