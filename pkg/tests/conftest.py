from __future__ import annotations

from importlib import resources

import pytest

from pmcreach.model import Pmc, Rule
from pmcreach.textio import parse_pmc

CORPUS = ("fig1.pmc", "gambler-up.pmc", "gambler-down.pmc", "sqrtsum-4-2.pmc", "botfin2.pmc")


def load(name: str) -> Pmc:
    return parse_pmc(resources.files("pmcreach").joinpath("data", name).read_text())


def data_path(name: str) -> str:
    return str(resources.files("pmcreach").joinpath("data", name))


def walk(up: int, down: int, zero_up: int | None = 1) -> Pmc:
    """Single-state 1-counter walk; optional +1 rule when the counter is zero."""
    rules = [Rule("q", (1,), frozenset(), up, "q", "up"), Rule("q", (-1,), frozenset(), down, "q", "down")]
    if zero_up:
        rules.append(Rule("q", (1,), frozenset([1]), zero_up, "q", "up"))
    return Pmc(1, ("q",), tuple(rules))


@pytest.fixture
def fig1():
    return load("fig1.pmc")


@pytest.fixture
def gambler_up():
    return load("gambler-up.pmc")


@pytest.fixture
def gambler_down():
    return load("gambler-down.pmc")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
