"""Backward training of per-(step, mode) networks for optimal switching.

Starting from the terminal payoff, each stage ``(n, i)`` fits a network to
the one-step jump BSDE residual

    target - y(X_n) + f_i(t_n, X_n) dt - z(X_n) . dW_n - u(X_n) dN_n

where ``target`` is the reflected value at ``n + 1``. The fitted ``y`` of all
modes at step ``n`` are then reflected through the switching costs to give
the values that serve as targets for step ``n - 1``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import net
from ._backend import get_backend
from .errors import FormatError, TrainingError, ValidationError
from .lsmc import BasisSpec, design_matrix, regress
from .net import NetworkParams, TrainConfig
from .paths import PathBatch, TimeGrid
from .problem import (AssumptionReport, SwitchingProblem, coarse_switch_steps, reflect,
                      validate_assumptions)

__all__ = [
    "SwitchingProblem", "AssumptionReport", "validate_assumptions", "reflect",
    "coarse_switch_steps", "StageNetwork", "StageLog", "TrainedSolution", "train_backward",
    "value_at", "continuations", "optional_oracle_projections", "save_solution",
    "load_solution", "problem_hash",
]


@dataclass
class StageNetwork:
    step: int
    mode: int
    params: NetworkParams


@dataclass
class StageLog:
    step: int
    mode: int
    initial_loss: float
    final_loss: float
    epoch_losses: list
    seconds: float


@dataclass(eq=False)
class TrainedSolution:
    """Networks for every ``(n, i)``, ``n < M``; mode indices are 0-based."""

    problem: SwitchingProblem
    networks: list             # networks[n][i]
    log: list = field(default_factory=list)
    config: TrainConfig = None
    seconds: float = 0.0
    batch_seed: int = -1
    backend: str = ""

    @property
    def grid(self) -> TimeGrid:
        return self.problem.grid

    def stage(self, n: int, i: int) -> StageNetwork:
        _check_index(self, n, i, allow_terminal=False)
        return StageNetwork(n, i, self.networks[n][i])

    def losses(self) -> np.ndarray:
        """Array of rows ``(n, i, initial, final)``."""
        return np.array([(r.step, r.mode, r.initial_loss, r.final_loss) for r in self.log])


def problem_hash(problem: SwitchingProblem) -> str:
    payload = json.dumps({"name": problem.name, "params": problem.params,
                          "grid": [problem.grid.horizon, problem.grid.steps],
                          "modes": problem.n_modes, "dim": problem.dim},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def _scale(v, axis=0):
    sd = np.std(v, axis=axis)
    mean = np.abs(np.mean(v, axis=axis))
    tiny = sd <= 1e-12 * np.maximum(1.0, mean)
    return np.where(tiny, 1.0, sd)


def _check_batch(problem, batch):
    if batch.grid != problem.grid:
        raise ValidationError("path batch grid does not match the problem grid")
    if batch.dim != problem.dim:
        raise ValidationError(f"path batch dimension {batch.dim} != problem dimension {problem.dim}")


def _increment_scale(batch: PathBatch):
    h = batch.grid.dt
    jump = np.sqrt(batch.intensity * h) if batch.intensity > 0 else 1.0
    return np.concatenate([np.full(batch.dW.shape[2], np.sqrt(h)), [jump]])


def train_backward(problem: SwitchingProblem, batch: PathBatch, config: TrainConfig | None = None,
                   progress=None) -> TrainedSolution:
    """Fit all stage networks backwards from the terminal date.

    Determinism: network ``(n, i)`` is initialised from ``seed`` and the
    stage indices (or warm-started from ``(n + 1, i)``), and its minibatch
    order comes from a generator seeded by ``(seed, n, i)``, so results do
    not depend on thread scheduling.
    """
    config = config or TrainConfig()
    _check_batch(problem, batch)
    P, M, I = batch.n_paths, problem.grid.steps, problem.n_modes
    if config.batch_size > P:
        raise ValidationError(f"minibatch size {config.batch_size} exceeds path count {P}")
    kernel = get_backend(config.backend)
    dt = problem.grid.dt
    times = problem.grid.times
    sizes = net.architecture(problem.dim, config.hidden_layers, config.width, batch.dW.shape[2])
    inc = _increment_scale(batch)

    values = np.asarray(problem.terminal_profit(batch.states[:, M]), dtype=float)
    networks = [[None] * I for _ in range(M)]
    log = [None] * (M * I)
    previous = [None] * I
    started = time.perf_counter()
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def fit(n, i, x, in_shift, in_scale, fdt, dW, dN):
        t0 = time.perf_counter()
        target = values[:, i]
        total = target + fdt[:, i]
        out_shift, out_scale = float(total.mean()), float(_scale(total))
        if config.warm_start and previous[i] is not None:
            params = previous[i].rescaled(in_shift, in_scale, out_shift, out_scale, inc)
        else:
            params = net.init_params(sizes, seed=_stage_seed(config.seed, n, i))
            params = NetworkParams(params.sizes, params.theta, in_shift, in_scale, out_shift,
                                   out_scale, inc, params.seed)
        initial, _ = net.loss_and_gradient(params, x, target, fdt[:, i], dW, dN, kernel)
        rng = np.random.default_rng([config.seed, n, i])
        epoch_losses = net.train_network(params, x, target, fdt[:, i], dW, dN, config, rng,
                                         kernel)
        if config.refit_value_head and np.all(np.isfinite(params.theta)):
            net.refit_value_head(params, x, target, fdt[:, i], dW, dN)
        bad = np.flatnonzero(~np.isfinite(epoch_losses))
        if bad.size or not np.all(np.isfinite(params.theta)):
            epoch = int(bad[0]) if bad.size else len(epoch_losses) - 1
            raise TrainingError(f"non-finite loss at step n={n}, mode i={i}, epoch {epoch}")
        final, _ = net.loss_and_gradient(params, x, target, fdt[:, i], dW, dN, kernel)
        return params, StageLog(n, i, float(initial), float(final),
                                [float(v) for v in epoch_losses], time.perf_counter() - t0)

    try:
        for n in range(M - 1, -1, -1):
            x = np.ascontiguousarray(batch.states[:, n])
            fdt = np.asarray(problem.running_profit(times[n], x), dtype=float) * dt
            dW = np.ascontiguousarray(batch.dW[:, n])
            dN = np.ascontiguousarray(batch.dN[:, n])
            in_shift, in_scale = x.mean(axis=0), _scale(x)
            args = [(n, i, x, in_shift, in_scale, fdt, dW, dN) for i in range(I)]
            results = list(pool.map(lambda a: fit(*a), args)) if pool else [fit(*a) for a in args]
            cont = np.empty((P, I))
            for i, (params, entry) in enumerate(results):
                networks[n][i] = params
                previous[i] = params
                log[n * I + i] = entry
                cont[:, i] = net.forward(params, x, kernel)[0]
            values = reflect(cont, x, problem, problem.is_switch_step(n))
            if progress is not None:
                progress(n, results)
    finally:
        if pool:
            pool.shutdown()
    return TrainedSolution(problem, networks, log, config, time.perf_counter() - started,
                           batch.seed, kernel.NAME)


def _stage_seed(seed, n, i):
    return int(np.random.SeedSequence([seed, n, i]).generate_state(1)[0])


def _check_index(solution, n, i, allow_terminal=True):
    M = solution.problem.grid.steps
    top = M if allow_terminal else M - 1
    if not (0 <= n <= top):
        raise ValidationError(f"step {n} out of range 0..{top}")
    if not (0 <= i < solution.problem.n_modes):
        raise ValidationError(f"mode {i} out of range 0..{solution.problem.n_modes - 1}")


def continuations(solution: TrainedSolution, n: int, x) -> np.ndarray:
    """Network continuation values of all modes at step ``n < M``, shape (B, I)."""
    _check_index(solution, n, 0, allow_terminal=False)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    backend = get_backend(solution.config.backend if solution.config else None)
    return np.stack([net.forward(p, x, backend)[0] for p in solution.networks[n]], axis=1)


def values(solution: TrainedSolution, n: int, x) -> np.ndarray:
    """Reflected values of all modes at step ``n``, shape (B, I)."""
    _check_index(solution, n, 0)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    problem = solution.problem
    if n == problem.grid.steps:
        return np.asarray(problem.terminal_profit(x), dtype=float)
    return reflect(continuations(solution, n, x), x, problem, problem.is_switch_step(n))


def value_at(solution: TrainedSolution, n: int, i: int, x) -> np.ndarray:
    """Value of mode ``i`` (0-based) at step ``n`` for a batch of states."""
    _check_index(solution, n, i)
    return values(solution, n, x)[:, i]


@dataclass
class OracleProjection:
    """Regression estimates next to the network outputs at one stage."""

    y: np.ndarray
    z: np.ndarray
    u: np.ndarray | None
    net_y: np.ndarray
    net_z: np.ndarray
    net_u: np.ndarray


def optional_oracle_projections(solution: TrainedSolution, batch: PathBatch, n: int, i: int,
                                basis: BasisSpec | None = None) -> OracleProjection:
    """Least-squares projections of the step-``n`` stage quantities.

    ``y = E[V_{n+1} | X_n] + f dt``, ``z = E[V_{n+1} dW | X_n] / dt`` and
    ``u = E[V_{n+1} dN | X_n] / (lambda dt)``, regressed on polynomials of
    ``X_n``. ``u`` is ``None`` without jumps.
    """
    _check_index(solution, n, i, allow_terminal=False)
    _check_batch(solution.problem, batch)
    basis = basis or BasisSpec(degree=2, log=False)
    problem, dt = solution.problem, solution.grid.dt
    x = np.ascontiguousarray(batch.states[:, n])
    nxt = values(solution, n + 1, batch.states[:, n + 1])[:, i]
    A, _, _ = design_matrix(x, basis)
    fit = lambda v: A @ regress(A, v)[0]
    fdt = np.asarray(problem.running_profit(solution.grid.times[n], x), dtype=float)[:, i] * dt
    y = fit(nxt) + fdt
    dW, dN = batch.dW[:, n], batch.dN[:, n]
    z = np.stack([fit(nxt * dW[:, k]) for k in range(dW.shape[1])], axis=1) / dt
    u = fit(nxt * dN) / (batch.intensity * dt) if batch.intensity > 0 else None
    ny, nz, nu = net.forward(solution.networks[n][i], x)
    return OracleProjection(y, z, u, ny, nz, nu)


# ---------------------------------------------------------------- persistence

def save_solution(solution: TrainedSolution, directory) -> Path:
    """Write ``manifest.json``, ``losses.csv`` and one weight file per stage."""
    root = Path(directory)
    (root / "weights").mkdir(parents=True, exist_ok=True)
    problem = solution.problem
    files = []
    for n, row in enumerate(solution.networks):
        for i, params in enumerate(row):
            name = f"weights/n{n:05d}_i{i:02d}.bin"
            net.save_params(params, root / name, n, i)
            files.append(name)
    with open(root / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mode", "initial_loss", "final_loss", "seconds"])
        for r in solution.log:
            w.writerow([r.step, r.mode, repr(r.initial_loss), repr(r.final_loss), repr(r.seconds)])
    manifest = {
        "format": "jumpswitch-solution",
        "version": 1,
        "problem": problem.name,
        "problem_hash": problem_hash(problem),
        "problem_config": problem.params,
        "grid": {"horizon": problem.grid.horizon, "steps": problem.grid.steps},
        "modes": problem.n_modes,
        "dim": problem.dim,
        "train_config": asdict(solution.config) if solution.config else None,
        "batch_seed": solution.batch_seed,
        "backend": solution.backend,
        "seconds": solution.seconds,
        "epoch_losses": [r.epoch_losses for r in solution.log],
        "weights": files,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)
    return root


def load_solution(directory, problem: SwitchingProblem | None = None) -> TrainedSolution:
    """Inverse of :func:`save_solution`.

    Without ``problem`` the problem is rebuilt from the stored configuration.
    """
    root = Path(directory)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{root}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != "jumpswitch-solution":
        raise FormatError(f"{root}: not a solution directory")
    if problem is None:
        from .models import from_config
        problem = from_config(manifest["problem_config"]).problem
    if problem_hash(problem) != manifest["problem_hash"]:
        raise ValidationError("stored solution was trained on a different problem")
    M, I = problem.grid.steps, problem.n_modes
    networks = [[None] * I for _ in range(M)]
    for name in manifest["weights"]:
        params, n, i = net.load_params(root / name)
        if not (0 <= n < M and 0 <= i < I):
            raise FormatError(f"{name}: stage index out of range")
        networks[n][i] = params
    if any(p is None for row in networks for p in row):
        raise FormatError(f"{root}: missing stage networks")
    log = []
    with open(root / "losses.csv", newline="") as fh:
        for k, row in enumerate(csv.DictReader(fh)):
            log.append(StageLog(int(row["step"]), int(row["mode"]), float(row["initial_loss"]),
                                float(row["final_loss"]), manifest["epoch_losses"][k],
                                float(row["seconds"])))
    cfg = manifest.get("train_config")
    return TrainedSolution(problem, networks, log, TrainConfig(**cfg) if cfg else None,
                           manifest.get("seconds", 0.0), manifest.get("batch_seed", -1),
                           manifest.get("backend", ""))
