import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def record_criterion(request):
    """Append ``criterion N <name>: PASS|FAIL <details>`` to the end-of-run summary."""
    lines = request.config.stash[_LINES]

    def record(number: int, name: str, passed: bool, details: str = "") -> bool:
        lines.append(f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} {details}".rstrip())
        print(lines[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
