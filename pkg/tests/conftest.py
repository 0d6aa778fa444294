import numpy as np
import pytest

from branchlab.config import build_scenario


def tabular(**kw):
    """Custom-tabular scenario on R^1 with one action (motionless unless told otherwise)."""
    sc = {"kind": "custom-tabular", "dim": 1, "action_dim": 1, "sigma": [[0.0]]}
    sc.update(kw)
    return build_scenario(sc, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
