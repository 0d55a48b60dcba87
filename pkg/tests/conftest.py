import numpy as np
import pytest

from jumpswitch.net import NetworkParams, architecture, param_count
from jumpswitch.osj import TrainedSolution
from jumpswitch.paths import PathBatch, TimeGrid
from jumpswitch.problem import SwitchingProblem


def toy_problem(costs, running=None, terminal=None, steps=4, dim=1, switch_steps=None,
                horizon=1.0):
    """Problem with state-independent profits and a constant cost matrix."""
    costs = np.asarray(costs, dtype=float)
    I = costs.shape[0]
    running = np.zeros(I) if running is None else np.asarray(running, dtype=float)
    terminal = np.zeros(I) if terminal is None else np.asarray(terminal, dtype=float)
    return SwitchingProblem(
        n_modes=I, dim=dim, grid=TimeGrid(horizon, steps),
        running_profit=lambda t, x: np.tile(running, (x.shape[0], 1)),
        terminal_profit=lambda x: np.tile(terminal, (x.shape[0], 1)),
        switching_cost=lambda x: np.broadcast_to(costs, (x.shape[0], I, I)).copy(),
        switch_steps=switch_steps, name="toy")


def constant_network(dim, value, brownian_dim=None):
    sizes = architecture(dim, 1, 3, brownian_dim)
    return NetworkParams(sizes, np.zeros(param_count(sizes)), out_shift=value)


def constant_solution(problem, cont, batch_seed=0):
    """Solution whose continuation of mode i at step n is ``cont[n][i]``."""
    cont = np.broadcast_to(np.asarray(cont, dtype=float),
                           (problem.grid.steps, problem.n_modes))
    nets = [[constant_network(problem.dim, cont[n, i]) for i in range(problem.n_modes)]
            for n in range(problem.grid.steps)]
    return TrainedSolution(problem, nets, batch_seed=batch_seed)


def brownian_batch(P, steps, sigma=1.0, x0=0.0, horizon=1.0, seed=0):
    """Arithmetic Brownian paths, built directly as a PathBatch."""
    grid = TimeGrid(horizon, steps)
    rng = np.random.default_rng(seed)
    dW = rng.normal(0, np.sqrt(grid.dt), (P, steps, 1))
    x = x0 + sigma * np.concatenate([np.zeros((P, 1, 1)), np.cumsum(dW, axis=1)], axis=1)
    return PathBatch(x, dW, np.zeros((P, steps)), grid, tag="bm", seed=seed)


@pytest.fixture
def toy():
    return toy_problem


@pytest.fixture
def const_solution():
    return constant_solution


ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(key, passed, detail):
        ACCEPTANCE[key] = (bool(passed), detail)
        print(f"criterion {key}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if passed else 'FAIL'}  {detail}")
