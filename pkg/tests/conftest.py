import numpy as np
import pytest

from uavnoma.assoc import AssociationInfeasible, run_two_stage
from uavnoma.channel import build_gain_tables
from uavnoma.experiment import derive_seed, generate_scenario
from uavnoma.iaspo import initial_power


def feasible_instance(n_ues: int, n_ubs: int, key: int, n_sc: int | None = None, attempts: int = 200):
    """First generated scenario whose association at P^(0) is feasible."""
    for attempt in range(attempts):
        sc = generate_scenario(n_ues, n_ubs, derive_seed(key, n_ues, n_ubs, attempt), n_sc=n_sc)
        G = build_gain_tables(sc)
        P = initial_power(sc)
        try:
            A, _ = run_two_stage(P, G, sc)
        except AssociationInfeasible:
            continue
        return sc, G, A, P
    raise RuntimeError("no feasible instance found")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def table1_instance():
    return feasible_instance(10, 4, 0)


@pytest.fixture(scope="session")
def tiny_instance():
    return feasible_instance(3, 2, 0)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Print and collect one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        print(line)
        request.config.stash[_VERDICTS].append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
