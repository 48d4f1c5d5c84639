"""Shared fixtures.

The full pipeline (level-2 solve, rounding, closure, block splitting) takes a
few minutes, so it runs once per session and every test that needs one of its
products takes it from the ``pipeline`` fixture.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import pytest

from chshmod3.certify import annihilators, round_solution, verify_certificate
from chshmod3.extract import block_diagonalize, closure
from chshmod3.sdp import assemble_sos
from chshmod3.solver import SolverConfig, solve


@dataclass
class Pipeline:
    prob: object
    res: object
    cert: object
    report: object
    ann: object
    cm: object
    strategies: list
    seconds: dict = field(default_factory=dict)


_STATE = {}


def _run_pipeline() -> Pipeline:
    sec = {}
    t = time.time()
    prob = assemble_sos(3, 2)
    sec["assemble"] = time.time() - t
    t = time.time()
    res = solve(prob, SolverConfig(prec=256))
    sec["solve"] = time.time() - t
    t = time.time()
    cert = round_solution(res, prob)
    sec["round"] = time.time() - t
    t = time.time()
    report = verify_certificate(cert, prob)
    sec["verify"] = time.time() - t
    ann = annihilators(cert, prob)
    t = time.time()
    cm = closure(ann, 6)
    sec["closure"] = time.time() - t
    t = time.time()
    strategies = block_diagonalize(cm, seed=0)
    sec["split"] = time.time() - t
    return Pipeline(prob, res, cert, report, ann, cm, strategies, sec)


@pytest.fixture(scope="session")
def pipeline() -> Pipeline:
    if "p" not in _STATE:
        _STATE["p"] = _run_pipeline()
    return _STATE["p"]


@pytest.fixture(scope="session")
def level2():
    return assemble_sos(3, 2)


@pytest.fixture(scope="session")
def level1():
    return assemble_sos(3, 1)


_LINES = []


def record(line: str):
    _LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for ln in _LINES:
            terminalreporter.write_line(ln)


def mutate(cert, rng):
    """Copy of ``cert`` with one entry (lambda, Z, T or Zhat) changed by a small F element."""
    import copy

    from chshmod3.exactnum import FNum, mpq

    c = copy.deepcopy(cert)
    delta = FNum(*(mpq(int(rng.integers(-5, 6)), 10 ** int(rng.integers(1, 40))) for _ in range(3)))
    if delta.is_zero():
        delta = FNum(mpq(1, 10 ** 20))
    kind = ("lambda", "Z", "T", "Zhat")[int(rng.integers(0, 4))]
    if kind == "lambda":
        c.lam = c.lam + delta
        return c, "lambda"
    bi = int(rng.integers(0, len(c.blocks)))
    M = {"Z": c.blocks, "T": c.T, "Zhat": c.Zhat}[kind][bi]
    i = int(rng.integers(0, len(M)))
    j = i if kind == "Zhat" else int(rng.integers(0, len(M[i])))
    M[i][j] = M[i][j] + delta
    return c, f"{kind}[{c.block_names[bi]}][{i}][{j}]"


def pytest_collection_modifyitems(items):
    for item in items:
        if "pipeline" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)
