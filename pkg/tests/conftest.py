from __future__ import annotations

from pathlib import Path

import pytest

from adaptpm.dsl import parse_domain, parse_init, parse_process, parse_scenario
from adaptpm.syntax import parse_formula

DATA = Path(__file__).resolve().parents[1] / "src" / "adaptpm" / "data"
CASE = DATA / "casestudy"
TPL = DATA / "templates"


@pytest.fixture(scope="session")
def case_domain():
    return parse_domain((CASE / "domain.xml").read_text(), str(CASE / "domain.xml"))


@pytest.fixture(scope="session")
def case_process(case_domain):
    return parse_process((CASE / "process.txt").read_text(), case_domain)


@pytest.fixture(scope="session")
def case_init(case_domain):
    return parse_init((CASE / "init.txt").read_text(), case_domain)


@pytest.fixture(scope="session")
def appendix_init(case_domain):
    return parse_init((CASE / "init_appendix.txt").read_text(), case_domain)


@pytest.fixture(scope="session")
def deviation(case_domain, case_process):
    return parse_scenario((CASE / "deviation.scn").read_text(), case_process, case_domain)


@pytest.fixture(scope="session")
def rockslide(case_domain, case_process):
    return parse_scenario((CASE / "rockslide.scn").read_text(), case_process, case_domain)


@pytest.fixture(scope="session")
def tpl_domain():
    return parse_domain((TPL / "domain.xml").read_text())


@pytest.fixture(scope="session")
def tpl_goal(tpl_domain):
    return parse_formula((TPL / "goal.txt").read_text(), tpl_domain)


def tpl_init(domain, case: str):
    return parse_init((TPL / f"init_{case}.txt").read_text(), domain).values


@pytest.fixture(scope="session")
def tpl_templates(tpl_domain, tpl_goal):
    """Planner-built templates for the starting conditions that admit one."""
    from adaptpm.templates import synthesize

    return {case: synthesize(tpl_domain, tpl_init(tpl_domain, case), tpl_goal).template for case in ("c2", "c3")}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.pytest_terminal_summary_lines():
            terminalreporter.write_line(line)
