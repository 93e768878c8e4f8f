import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def write_text_lines(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return Path(path)


@pytest.fixture
def corpus_files(tmp_path):
    """Factory: write a parallel corpus and return (src_path, tgt_path)."""

    def make(pairs, name="c"):
        src = write_text_lines(tmp_path / f"{name}.src", [s for s, _ in pairs])
        tgt = write_text_lines(tmp_path / f"{name}.tgt", [t for _, t in pairs])
        return src, tgt

    return make


# acceptance criteria: one PASS/FAIL line per criterion in the terminal summary

_acceptance: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test backing an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    entry = _acceptance.setdefault(number, {"title": title, "ok": True, "seen": False})
    if rep.when == "call" or rep.failed or rep.skipped:
        entry["seen"] = True
        if rep.failed or rep.skipped:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        e = _acceptance[number]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number} {status}: {e['title']}")
