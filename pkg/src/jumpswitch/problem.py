"""Switching problem definition, assumption checks and the reflection step."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError
from .paths import TimeGrid


@dataclass(frozen=True, eq=False)
class SwitchingProblem:
    """Finite-horizon optimal switching problem on a uniform grid.

    The three payoff callables are vectorised over a batch of states ``x`` of
    shape (P, d) and cover all modes at once:

    * ``running_profit(t, x) -> (P, I)``  profit rate per year
    * ``terminal_profit(x) -> (P, I)``
    * ``switching_cost(x) -> (P, I, I)``  entry ``[p, i, j]`` is ``C_ij``

    ``switch_steps`` holds the grid indices at which a switch may happen;
    ``None`` means every node.
    """

    n_modes: int
    dim: int
    grid: TimeGrid
    running_profit: Callable[[float, np.ndarray], np.ndarray]
    terminal_profit: Callable[[np.ndarray], np.ndarray]
    switching_cost: Callable[[np.ndarray], np.ndarray]
    switch_steps: frozenset | None = None
    name: str = "problem"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValidationError("need at least one mode")
        if self.switch_steps is not None:
            steps = frozenset(int(s) for s in self.switch_steps)
            if 0 not in steps:
                raise ValidationError("switching grid must contain t_0")
            if any(s < 0 or s > self.grid.steps for s in steps):
                raise ValidationError("switching dates must be grid nodes")
            object.__setattr__(self, "switch_steps", steps)

    def is_switch_step(self, n: int) -> bool:
        return self.switch_steps is None or n in self.switch_steps


def coarse_switch_steps(steps: int) -> frozenset:
    """Switching dates spaced ~T / sqrt(M) apart, always including t_0."""
    stride = max(1, round(math.sqrt(steps)))
    return frozenset(range(0, steps, stride))


@dataclass
class AssumptionReport:
    samples: int
    min_off_diagonal: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_assumptions(problem: SwitchingProblem, samples, rtol: float = 1e-12) -> AssumptionReport:
    """Check zero diagonal, positive off-diagonal and the triangle inequality.

    Violations are collected, never raised.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] < 1:
        raise ValidationError("need at least one sample")
    C = np.asarray(problem.switching_cost(x), dtype=float)
    I = problem.n_modes
    off = ~np.eye(I, dtype=bool)
    min_off = float(C[:, off].min()) if I > 1 else math.inf
    report = AssumptionReport(samples=x.shape[0], min_off_diagonal=min_off)

    diag = np.einsum("pii->pi", C)
    for p, i in zip(*np.nonzero(diag != 0)):
        report.violations.append(f"sample {p}: C[{i},{i}] = {diag[p, i]!r} != 0")
    if I > 1:
        for p, i, j in zip(*np.nonzero((C <= 0) & off)):
            report.violations.append(f"sample {p}: C[{i},{j}] = {C[p, i, j]!r} <= 0")
        # via[p, i, j, k] = C_ij + C_jk versus C_ik
        via = C[:, :, :, None] + C[:, None, :, :]
        direct = C[:, :, None, :]
        bad = via < direct - rtol * np.abs(direct)
        for p, i, j, k in zip(*np.nonzero(bad)):
            report.violations.append(
                f"sample {p}: triangle C[{i},{j}] + C[{j},{k}] < C[{i},{k}]")
    return report


def reflect_with_costs(continuations, costs, at_switch_date: bool) -> np.ndarray:
    """``value_i = max(cont_i, max_{j != i} cont_j - C_ij)`` on switching dates.

    Relies on ``C_ii = 0`` so the ``j = i`` term is the continuation itself.
    """
    cont = np.asarray(continuations, dtype=float)
    if not at_switch_date or cont.shape[1] == 1:
        return cont.copy()
    return np.max(cont[:, None, :] - costs, axis=2)


def reflect(continuations, x, problem: SwitchingProblem, at_switch_date: bool) -> np.ndarray:
    cont = np.atleast_2d(np.asarray(continuations, dtype=float))
    if cont.shape[1] != problem.n_modes:
        raise ValidationError("need one continuation per mode")
    if not at_switch_date or problem.n_modes == 1:
        return cont.copy()
    return reflect_with_costs(cont, problem.switching_cost(np.atleast_2d(x)), True)


def best_modes(continuations, costs, incumbent) -> np.ndarray:
    """Argmax over targets of ``cont_j - C_{incumbent, j}``; ties keep the incumbent."""
    cont = np.atleast_2d(continuations)
    inc = np.broadcast_to(np.asarray(incumbent, dtype=np.intp), (cont.shape[0],))
    rows = np.arange(cont.shape[0])
    scores = cont - costs[rows, inc, :]
    best = scores.argmax(axis=1)
    stay = scores[rows, inc] >= scores[rows, best]
    return np.where(stay, inc, best)
