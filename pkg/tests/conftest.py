import time
from collections import defaultdict

import pytest

from visco2d import cli
from visco2d import config as cfgmod

BUNDLED = ["rest", "free-flight", "gravity-sag", "bounce", "two-body", "fold"]

CRITERIA = {
    1: "gradient correctness",
    2: "axiom suite",
    3: "per-step descent",
    4: "interval and global energy inequalities",
    5: "momentum identities",
    6: "contact-force structure",
    7: "non-interpenetration",
    8: "rebound from the wall",
    9: "refinement behaviour",
    10: "offline re-verification",
}

_outcomes = defaultdict(list)
_notes = defaultdict(list)
_criterion_of = {}


def note(criterion: int, text: str):
    """Attach a measured value to a criterion's summary line."""
    _notes[criterion].append(text)


class Run:
    def __init__(self, name, code, rec, report, outdir, seconds):
        self.name, self.code, self.rec, self.report = name, code, rec, report
        self.outdir, self.seconds = outdir, seconds

    @property
    def scenario(self):
        return self.rec.scenario


def execute(cfg, outdir, figures=False):
    t0 = time.perf_counter()
    code, rec, report = cli.execute(cfg, outdir, figures=figures, quiet=True)
    return Run(cfg.name, code, rec, report, outdir, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory):
    """Every bundled scenario run once at its default settings, records written to disk."""
    base = tmp_path_factory.mktemp("bundled")
    out = {}
    for name in BUNDLED:
        cfg = cfgmod.load_config(cfgmod.locate(f"{name}.cfg"))
        out[name] = execute(cfg, base / name, figures=(name == "bounce"))
    return out


def pytest_runtest_logreport(report):
    if report.when == "call" or report.outcome != "passed":
        crit = _criterion_of.get(report.nodeid)
        if crit is not None:
            _outcomes[crit].append(report.outcome)



def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criterion_of[item.nodeid] = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        res = _outcomes.get(n)
        if not res:
            verdict = "NOT RUN"
        elif all(r == "passed" for r in res):
            verdict = "PASS"
        elif any(r == "failed" for r in res):
            verdict = "FAIL"
        else:
            verdict = "SKIP"
        extra = "; ".join(_notes.get(n, []))
        tr.write_line(f"criterion {n:>2} {verdict:<4} {title}" + (f"  [{extra}]" if extra else ""))
