from pathlib import Path

import pytest

from homowave.expr import parse_expression, variables_for_dimension
from homowave.problem import load_problem, problem_from_dict

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK = ROOT / "problems" / "benchmark_1d.toml"


def make_problem(d=1, a=None, f="0", g=("0",), u0=None, u1="0", horizon=0.25, alpha=1.0,
                 c=(1.0, 1.0, 1.0, 1.0), algebra_y=None, algebra_tau=None, name="test"):
    if a is None:
        a = [["1" if i == j else "0" for j in range(d)] for i in range(d)]
    if u0 is None:
        u0 = " * ".join(f"sin(pi*x{k + 1})" for k in range(d))
    doc = {
        "dimension": d, "horizon": horizon, "alpha": alpha, "a": a, "f": f, "g": list(g),
        "u0": u0, "u1": u1, "c1": c[0], "c2": c[1], "c3": c[2], "c4": c[3],
    }
    if algebra_y:
        doc["algebra_y"] = algebra_y
    if algebra_tau:
        doc["algebra_tau"] = algebra_tau
    return problem_from_dict(doc, name)


@pytest.fixture(scope="session")
def benchmark():
    return load_problem(BENCHMARK)


@pytest.fixture
def parse1():
    allowed = variables_for_dimension(1)
    return lambda s: parse_expression(s, allowed)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print the verdict line for one acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
