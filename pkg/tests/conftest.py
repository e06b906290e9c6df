from functools import lru_cache
from pathlib import Path

import pytest

from herglotz.cli import load_problem
from herglotz.solver import ShootingConfig, shoot

DATA = Path(__file__).resolve().parents[1] / "src" / "herglotz" / "data"
BUNDLED = ("free_end", "second_order", "damped_oscillator", "non_autonomous")

_criteria: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    _criteria.append(line)


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)


@lru_cache(maxsize=None)
def bundled_problem(name: str):
    return load_problem(str(DATA / f"{name}.toml"))


@lru_cache(maxsize=None)
def bundled_extremal(name: str, N: int = 1001, tol: float = 1e-8):
    p = bundled_problem(name).problem
    return shoot(p, ShootingConfig(grid=p.grid(N), tol=tol))


@pytest.fixture(autouse=True)
def _no_grid_env(monkeypatch):
    monkeypatch.delenv("HERGLOTZ_GRID", raising=False)
