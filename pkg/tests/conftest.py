from collections import defaultdict

import pytest

CRITERIA = {
    1: "losslessness over random models and tensors",
    2: "exhaustive MAT bijection",
    3: "auxiliary register accounting",
    4: "dequantization bits-back accounting",
    5: "codelength independent of k",
    6: "identity model codelength",
    7: "rANS near entropy with exact replay",
    8: "error bound scaling in k and depth",
    9: "non-volume-preserving failure demos",
    10: "matched-prior entropy",
}

_outcomes = defaultdict(list)
_notes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[marker.args[0]].append(rep.outcome)


@pytest.fixture()
def note(request):
    """Attach a measurement to the acceptance summary line of the current test."""
    marker = request.node.get_closest_marker("acceptance")

    def add(text: str):
        if marker is not None:
            _notes[marker.args[0]].append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        line = f"[{status}] {n:>2}. {title}"
        if _notes.get(n):
            line += " | " + "; ".join(_notes[n])
        terminalreporter.write_line(line)
