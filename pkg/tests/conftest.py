"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""

import pytest

ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Yield a dict for the test to fill with a detail string; the outcome is recorded on teardown."""
    key = request.node.get_closest_marker("criterion").args[0]
    note = {"detail": ""}
    yield note
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    ACCEPTANCE[key] = ("PASS" if ok else "FAIL", note["detail"])
    print(f"\nCRITERION {key}: {'PASS' if ok else 'FAIL'} {note['detail']}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}".rstrip())
