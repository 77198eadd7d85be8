import pytest

_RESULTS: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def record():
    """Record one measured part of an acceptance criterion."""

    def _record(n: int, ok: bool, detail: str) -> bool:
        _RESULTS.setdefault(n, []).append((bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  " + "; ".join(d for _, d in parts))
