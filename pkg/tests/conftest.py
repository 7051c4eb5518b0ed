import re

import pytest

TINY_INI = """\
[experiment]
seed = 3

[synth]
train_videos = 2
test_videos = 3
frames = 60
interval_min = 12
interval_max = 20

[flow]
window = 8
n_layers = 2
hidden = 8
epochs = 2

[jigsaw]
epochs = 2
max_cubes = 200
"""


@pytest.fixture
def tiny_ini(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY_INI)
    return p


@pytest.fixture
def criterion(record_property):
    """Attach a one-line measurement to an acceptance test for the summary."""
    def note(detail: str):
        record_property("detail", detail)
    return note


_CRITERION = re.compile(r"test_acceptance\.py::test_(A\d+)_")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or (outcome != "error" and rep.when != "call"):
                continue
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            rows[m.group(1)] = ("PASS" if outcome == "passed" else "FAIL", detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(rows, key=lambda c: int(c[1:])):
        status, detail = rows[cid]
        terminalreporter.write_line(f"{cid:<4} {status}  {detail}")
