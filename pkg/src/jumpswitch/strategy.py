"""Forward use of a trained solution: decisions, realised payoffs, heatmaps.

Mode indices are 0-based in the API; CSV files label modes 1..I.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .osj import TrainedSolution, continuations, values
from .paths import PathBatch
from .problem import best_modes


def decide(solution: TrainedSolution, n: int, i, x) -> np.ndarray:
    """Mode chosen at step ``n`` from incumbent ``i`` for each state row.

    Off switching dates the incumbent is kept; ties also keep it.
    """
    problem = solution.problem
    M = problem.grid.steps
    if not 0 <= n < M:
        raise ValidationError(f"decisions are taken at steps 0..{M - 1}, got {n}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    inc = np.broadcast_to(np.asarray(i, dtype=np.intp), (x.shape[0],))
    if np.any((inc < 0) | (inc >= problem.n_modes)):
        raise ValidationError("incumbent mode out of range")
    if problem.n_modes == 1 or not problem.is_switch_step(n):
        return inc.copy()
    return best_modes(continuations(solution, n, x), problem.switching_cost(x), inc)


@dataclass
class StrategyOutcome:
    start_mode: int
    payoff: np.ndarray      # (P,)
    switches: np.ndarray    # (P,)
    modes: np.ndarray       # (P, M) mode held on [t_n, t_{n+1})
    costs: np.ndarray       # (P,) switching costs paid

    @property
    def mean(self) -> float:
        return float(self.payoff.mean())

    @property
    def stderr(self) -> float:
        return float(self.payoff.std(ddof=1) / np.sqrt(self.payoff.size))

    @property
    def mean_switches(self) -> float:
        return float(self.switches.mean())

    def summary(self) -> dict:
        return {"mode_start": self.start_mode + 1, "mean": self.mean, "stderr": self.stderr,
                "mean_switches": self.mean_switches}


def rollout(solution: TrainedSolution, batch: PathBatch, start_mode: int,
            in_sample: bool = False) -> StrategyOutcome:
    """Follow the learned policy along ``batch`` and accumulate the payoff.

    The batch must come from a different seed than the training batch unless
    ``in_sample`` is set.
    """
    problem = solution.problem
    if batch.grid != problem.grid:
        raise ValidationError("evaluation batch grid does not match the problem grid")
    if batch.dim != problem.dim:
        raise ValidationError("evaluation batch dimension does not match the problem")
    if not 0 <= start_mode < problem.n_modes:
        raise ValidationError(f"start mode {start_mode} out of range")
    if not in_sample and batch.seed >= 0 and batch.seed == solution.batch_seed:
        raise ValidationError("evaluation batch reuses the training seed; pass in_sample=True "
                              "to evaluate in sample")
    M, dt, times = problem.grid.steps, problem.grid.dt, problem.grid.times
    P = batch.n_paths
    rows = np.arange(P)
    mode = np.full(P, start_mode, dtype=np.intp)
    modes = np.empty((P, M), dtype=np.intp)
    payoff = np.zeros(P)
    paid = np.zeros(P)
    for n in range(M):
        x = batch.states[:, n]
        new = decide(solution, n, mode, x)
        moved = new != mode
        if np.any(moved):
            cost = problem.switching_cost(x[moved])[np.arange(moved.sum()), mode[moved], new[moved]]
            paid[moved] += cost
            payoff[moved] -= cost
        mode = new
        modes[:, n] = mode
        payoff += np.asarray(problem.running_profit(times[n], x))[rows, mode] * dt
    payoff += np.asarray(problem.terminal_profit(batch.states[:, M]))[rows, mode]
    switches = (np.diff(np.column_stack([np.full(P, start_mode), modes]), axis=1) != 0).sum(1)
    return StrategyOutcome(start_mode, payoff, switches, modes, paid)


def realized_payoff(problem, batch: PathBatch, modes, start_mode: int) -> np.ndarray:
    """Payoff of a given mode trajectory, computed without the solution.

    ``modes[p, n]`` is the mode held on ``[t_n, t_{n+1})``.
    """
    modes = np.asarray(modes, dtype=np.intp)
    P, M = modes.shape
    dt, times = problem.grid.dt, problem.grid.times
    rows = np.arange(P)
    prev = np.column_stack([np.full(P, start_mode), modes[:, :-1]])
    total = np.zeros(P)
    for n in range(M):
        x = batch.states[:, n]
        total -= problem.switching_cost(x)[rows, prev[:, n], modes[:, n]]
        total += np.asarray(problem.running_profit(times[n], x))[rows, modes[:, n]] * dt
    return total + np.asarray(problem.terminal_profit(batch.states[:, M]))[rows, modes[:, -1]]


def value_stderr(solution: TrainedSolution, batch: PathBatch, i: int) -> float:
    """Monte Carlo standard error of the learned time-0 value of mode ``i``.

    The time-0 network averages the one-step targets of the mode it switches
    into, so their sample standard deviation over ``sqrt(P)`` is used.
    """
    problem = solution.problem
    x0 = batch.states[:, 0]
    j = int(decide(solution, 0, i, x0[:1])[0])
    target = values(solution, 1, batch.states[:, 1])[:, j]
    target = target + np.asarray(problem.running_profit(0.0, x0))[:, j] * problem.grid.dt
    return float(target.std(ddof=1) / np.sqrt(target.size))


def write_outcomes_csv(path, outcomes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode_start", "mean", "stderr", "mean_switches"])
        for o in outcomes:
            s = o.summary()
            w.writerow([s["mode_start"], repr(s["mean"]), repr(s["stderr"]),
                        repr(s["mean_switches"])])


@dataclass
class Heatmap:
    step: int
    mode: int
    coords: tuple
    axis1: np.ndarray
    axis2: np.ndarray
    base: np.ndarray
    modes: np.ndarray   # (len(axis1), len(axis2)), 0-based

    def fraction(self, mode: int) -> float:
        return float(np.mean(self.modes == mode))


def heatmap(solution: TrainedSolution, n: int, i: int, coords, ranges, base=None,
            resolution=50) -> Heatmap:
    """Decisions from incumbent ``i`` over a rectangle in two state coordinates.

    ``base`` fixes the remaining coordinates; it may be omitted only when
    the two axes cover the whole state.
    """
    problem = solution.problem
    d = problem.dim
    c1, c2 = (int(c) for c in coords)
    if c1 == c2:
        raise ValidationError("heatmap axes must be distinct coordinates")
    if not (0 <= c1 < d and 0 <= c2 < d):
        raise ValidationError(f"heatmap coordinates must lie in 0..{d - 1}")
    if base is None:
        if d > 2:
            raise ValidationError("a base state is needed to fix the other coordinates")
        base = np.zeros(d)
    base = np.asarray(base, dtype=float)
    if base.shape != (d,):
        raise ValidationError(f"base state must have {d} entries")
    r1, r2 = np.broadcast_to(np.asarray(resolution, dtype=int), (2,))
    (lo1, hi1), (lo2, hi2) = ranges
    if r1 < 1 or r2 < 1 or not (lo1 <= hi1 and lo2 <= hi2):
        raise ValidationError("invalid heatmap ranges or resolution")
    a1, a2 = np.linspace(lo1, hi1, r1), np.linspace(lo2, hi2, r2)
    g1, g2 = np.meshgrid(a1, a2, indexing="ij")
    x = np.tile(base, (g1.size, 1))
    x[:, c1] = g1.ravel()
    x[:, c2] = g2.ravel()
    modes = decide(solution, n, i, x).reshape(r1, r2)
    return Heatmap(n, i, (c1, c2), a1, a2, base, modes)


def write_heatmap_csv(path, hm: Heatmap) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# step={hm.step}", f"incumbent={hm.mode + 1}",
                    f"coord1={hm.coords[0]}", f"coord2={hm.coords[1]}",
                    "base=" + " ".join(repr(float(v)) for v in hm.base)])
        w.writerow(["coord1", "coord2", "mode"])
        for a, v1 in enumerate(hm.axis1):
            for b, v2 in enumerate(hm.axis2):
                w.writerow([repr(float(v1)), repr(float(v2)), int(hm.modes[a, b]) + 1])


def read_heatmap_csv(path) -> Heatmap:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(item.lstrip("# ").split("=", 1) for item in rows[0])
    data = np.array(rows[2:], dtype=float)
    a1, a2 = np.unique(data[:, 0]), np.unique(data[:, 1])
    modes = data[:, 2].astype(np.intp).reshape(a1.size, a2.size) - 1
    return Heatmap(int(meta["step"]), int(meta["incumbent"]) - 1,
                   (int(meta["coord1"]), int(meta["coord2"])), a1, a2,
                   np.array(meta["base"].split(), dtype=float), modes)
