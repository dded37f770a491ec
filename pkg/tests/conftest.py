"""Shared pytest plumbing: collect acceptance verdict lines and re-emit them
in the terminal summary, where output capture cannot swallow them."""

_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.line(line)
