import pytest

CRITERIA = tuple(f"C{i}" for i in range(1, 13))
_LINES: dict = {}


@pytest.fixture
def report():
    """Record the verdict of one acceptance criterion; printed in the terminal summary."""
    def _report(criterion: str, ok: bool, detail: str) -> bool:
        _LINES[criterion] = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    ran = any(item.get_closest_marker("acceptance") for item in getattr(terminalreporter, "_session_items", []))
    if not _LINES and not ran:
        return
    terminalreporter.section("acceptance criteria")
    for c in CRITERIA:
        terminalreporter.write_line(_LINES.get(c, f"FAIL {c}: not evaluated (test errored or was deselected)"))


def pytest_collection_finish(session):
    session.config.pluginmanager.get_plugin("terminalreporter")._session_items = session.items
