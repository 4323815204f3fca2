import contextlib

ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record a pass/fail line for an acceptance criterion, re-raising failures."""
    details = []
    try:
        yield details
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        ACCEPTANCE[number] = f"FAIL  {number:>2}. {title}: {'; '.join(details + [msg])}"
        raise
    ACCEPTANCE[number] = f"PASS  {number:>2}. {title}" + (f": {'; '.join(details)}" if details else "")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
