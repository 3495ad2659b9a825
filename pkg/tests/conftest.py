import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, outcome, details)
_ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


@pytest.fixture
def report(request):
    """Attach measured values to the acceptance summary line of the current test."""
    marker = request.node.get_closest_marker("acceptance")
    details: list[str] = []
    if marker is not None:
        _ACCEPTANCE.setdefault(marker.args[0], [marker.args[1], None, details])[2] = details
    return details.append


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    entry = _ACCEPTANCE.setdefault(marker.args[0], [marker.args[1], None, []])
    entry[1] = "PASS" if call.excinfo is None else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, details = _ACCEPTANCE[number]
        line = f"[{outcome or 'NOT RUN'}] {number:2d}. {title}"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)
