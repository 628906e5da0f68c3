import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oscillopf.casefile import DATA_DIR, load_case, load_dynamics_file  # noqa: E402


@pytest.fixture(scope="session")
def case39():
    return load_case(DATA_DIR / "case39.m")


@pytest.fixture(scope="session")
def dyn39(case39):
    return load_dynamics_file(DATA_DIR / "case39_dyn.txt", case39)


_SOLVES: dict = {}


@pytest.fixture(scope="session")
def ieee39_instance():
    """Solve IEEE-39 instances on demand, each (load, mu, k) at most once per session."""
    from oscillopf.pipeline import load_model, solve_instance

    models: dict = {}

    def get(load: float, mu: float, k: int = 3):
        key = (round(load, 6), round(mu, 6), k)
        if key not in _SOLVES:
            if key[0] not in models:
                models[key[0]] = load_model(load_scale=load)
            _SOLVES[key] = solve_instance(models[key[0]], mu, k=k)
        return _SOLVES[key]

    return get


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.RESULTS):
        terminalreporter.write_line(acceptance_log.line(n))
