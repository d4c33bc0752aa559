import pytest

_VERDICTS = {}


class Verdicts:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(self, number, ok, detail):
        _VERDICTS[number] = ("PASS" if ok else "FAIL", detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    def skip(self, number, reason):
        _VERDICTS[number] = ("SKIP", reason)
        pytest.skip(reason)


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        status, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
