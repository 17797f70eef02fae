from pathlib import Path

import pytest

from iliwatch.textnorm import TermLexicon

DATA = Path(__file__).resolve().parents[1] / "data" / "synthetic"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def lexicon() -> TermLexicon:
    return TermLexicon.from_file(DATA / "lexicon.tsv")


@pytest.fixture
def small_lexicon() -> TermLexicon:
    return TermLexicon([("γρίπη", ["γρίπη", "γρίππη"]), ("βήχας", ["βήχας"]), ("βήχα", ["βήχα"])])


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, then assert every named check."""

    def report(number: int, title: str, checks: dict[str, bool], detail: str = "") -> None:
        ok = all(checks.values())
        failed = ", ".join(k for k, v in checks.items() if not v)
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
        if failed:
            line += f" [failed: {failed}]"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
