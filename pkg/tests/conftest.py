import pytest

from mhlength.constraint import Exact, Interval
from mhlength.prompts import Demo, Problem

# criterion number -> list of (outcome, title, detail), filled from test reports
ACCEPTANCE_RESULTS: dict = {}

DEMO = Demo(
    document="The city council approved a new budget on Tuesday after a long debate.",
    summary="The council approved the budget after a long debate.",
    length=9,
    id="demo-0",
)


def summ_problem(target=50, pid="s1", demo=DEMO, text="Officials said the river bridge project would reopen in spring."):
    return Problem(pid, "summ", text, Exact(target), demo=demo)


def instr_problem(upper=46, pid="i1", lower=0, task="instr", text="Is the US border open to Canada?"):
    return Problem(pid, task, text, Interval(lower, upper))


@pytest.fixture
def summ():
    return summ_problem()


@pytest.fixture
def instr():
    return instr_problem()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.skipped:
        detail = str(report.longrepr[2]) if isinstance(report.longrepr, tuple) else detail
    ACCEPTANCE_RESULTS.setdefault(number, []).append((report.outcome, title, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        results = ACCEPTANCE_RESULTS[number]
        outcomes = {o for o, _, _ in results}
        status = "FAIL" if "failed" in outcomes else "SKIP" if outcomes == {"skipped"} else "PASS"
        title = results[0][1]
        details = "; ".join(d for _, _, d in results if d)
        terminalreporter.write_line(f"criterion {number} [{status}] {title}" + (f" -- {details}" if details else ""))


def mock_dataset(n, target=50, task="summ", prefix="p"):
    """``n`` records with synthetic documents and references (references feed the one-shot demo)."""
    import random

    from mhlength.constraint import Exact, Interval
    from mhlength.harness import DatasetRecord
    from mhlength.mockllm import synthesize
    from mhlength.prompts import TaskKind

    out = []
    for i in range(n):
        rng = random.Random(i)
        c = Exact(target) if task == "summ" else Interval(0, target)
        out.append(
            DatasetRecord(f"{prefix}{i}", TaskKind.parse(task), synthesize(120, rng), c, synthesize(target, rng))
        )
    return out
