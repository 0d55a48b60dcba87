"""Concrete switching problems: the gas-fired plant scheduler and the
three-plant capacity model, plus the JSON config format and presets."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .paths import (CointegratedPriceModel, ExpOuJumpModel, JumpSpec, PathBatch, TimeGrid,
                    simulate_capacity_model, simulate_exp_ou_jump)
from .problem import SwitchingProblem, coarse_switch_steps, validate_assumptions

# scheduler modes: 0 = off, 1 = half capacity, 2 = full capacity
CL_CAPACITY = (0.0, 0.438, 0.876)
CL_HEAT_RATE = (0.0, 7.5, 10.0)
CL_FIXED = (-1.0, -1.1, -1.2)


def cl_profit(mode: int, P, G):
    """Running profit of the scheduler in ``mode`` (1-based, as in the tables)."""
    k = mode - 1
    if k == 0:
        return np.full(np.broadcast(P, G).shape, CL_FIXED[0])[()]
    return CL_CAPACITY[k] * (np.asarray(P) - CL_HEAT_RATE[k] * np.asarray(G)) + CL_FIXED[k]


# capacity model: rows are fuels (gas, coal, nuclear), columns modes 1..4
AID_CAPACITY = np.array([[50.0, 60.0, 60.0, 70.0],
                         [10.0, 0.0, 10.0, 0.0],
                         [10.0, 10.0, 0.0, 0.0]])


def aid_running_cost(x, mode: int, carbon_rate=(0.5, 2.0, 0.0), heat_rate=(1.0, 1.5, 1.5),
                     capacity=AID_CAPACITY):
    """Revenue minus fuel cost for state(s) ``x = [D, A^1..A^F, S^0, S^1..S^F, P]``.

    Surplus output is sold at half the spot price, shortfall is bought at
    twice the spot price.
    """
    x = np.asarray(x, dtype=float)
    capacity = np.asarray(capacity, dtype=float)
    F = capacity.shape[0]
    D, A = x[..., 0], x[..., 1:F + 1]
    S0, S, P = x[..., F + 1], x[..., F + 2:2 * F + 2], x[..., 2 * F + 2]
    K = A * capacity[:, mode - 1]
    Kbar = K.sum(axis=-1)
    eff = np.asarray(carbon_rate) * S0[..., None] + np.asarray(heat_rate) * S
    return (P * np.minimum(D, Kbar) + 0.5 * P * np.maximum(Kbar - D, 0.0)
            - 2.0 * P * np.maximum(D - Kbar, 0.0) - (K * eff).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class Instance:
    """A wired problem together with its state model and start point."""

    name: str
    problem: SwitchingProblem
    model: object
    x0: np.ndarray
    config: dict

    def simulate(self, paths: int, seed: int) -> PathBatch:
        if isinstance(self.model, ExpOuJumpModel):
            return simulate_exp_ou_jump(self.model, self.problem.grid, self.x0, paths, seed)
        return simulate_capacity_model(self.model, self.problem.grid, self.x0, paths, seed)

    @property
    def state0(self) -> np.ndarray:
        """Initial observed state (differs from ``x0`` for the capacity model)."""
        if isinstance(self.model, CointegratedPriceModel):
            nz = self.model.fuels + 1
            return self.model.observe(0.0, self.x0[None, :nz], self.x0[None, nz:])[0]
        return self.x0.copy()


CL_DEFAULTS = {
    "kind": "cl",
    "lambda": 8.0,
    "jump_mean": 0.1,
    "fuels": 1,
    "kappa": [5.0, 2.0],
    "level": [50.0, 6.0],
    "vol": [0.5, 0.4],
    "rho": 0.8,
    "cost_slope": 0.01,
    "cost_fixed": 0.001,
    "horizon": 0.25,
    "steps": 180,
    "x0": [50.0, 6.0],
    "terminal": "zero",
    "single_mode": False,
    "switch_grid": "all",
}

AID_DEFAULTS = {
    "kind": "aid",
    "alpha": [4.0, 8.0, 8.0, 8.0],
    "beta": [[15.0, 0.1, 0.1, 0.0], [0.1, 0.5, -0.1, 0.0],
             [0.1, -0.1, 0.5, 0.0], [0.0, 0.0, 0.0, 0.5]],
    "x0": [0.0, 0.0, 0.0, 0.0, 20.0, 40.0, 60.0, 20.0, 120.0],
    "mu": [[-4.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0],
           [0.0, 2.0, -1.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0, 0.0],
           [0.0, 1.0, 1.0, 1.0, -1.0]],
    "sigma": [[0.025, 0.0125, 0.0125, 0.0125, 0.0125],
              [0.0125, 0.05, 0.0125, 0.0125, 0.0125],
              [0.0125, 0.0125, 0.15, 0.0125, 0.0125],
              [0.0025, 0.0025, 0.0025, 0.015, 0.0125],
              [0.0125, 0.0125, 0.0125, 0.0125, 0.03]],
    "carbon_rate": [0.5, 2.0, 0.0],
    "heat_rate": [1.0, 1.5, 1.5],
    "cost_scale": [0.1, 0.1, 0.5],
    "epsilon": 0.001,
    "capacity": AID_CAPACITY.tolist(),
    "lambda": 8.0,
    "jump_mean": 0.1,
    "season": [70.0, 10.0, 1.0],
    "substeps": 4,
    "horizon": 0.25,
    "steps": 90,
    "switch_grid": "all",
}


def _switch_grid(spec, steps):
    if spec == "all":
        return None
    if spec == "coarse":
        return coarse_switch_steps(steps)
    return frozenset(int(s) for s in spec)


def build_cl(lam: float = 8.0, fuels: int = 1, **overrides) -> Instance:
    """Gas-fired plant scheduler with ``fuels`` fuel-price coordinates.

    With ``fuels > 1`` each fuel is an exponential OU with loading
    ``0.8 W^1 + 0.6 sqrt(F) W^phi`` on the base volatility and a long-run
    level shifted so that the geometric mean of the fuels has exactly the law
    of the two-dimensional gas price:

    * log-mean noise: ``vol (0.8 W^1 + 0.6 / sqrt(F) sum_phi W^phi)`` whose
      variance per unit time is ``vol^2``;
    * drift: each fuel's Ito term is ``s^2 / 2`` with
      ``s^2 = vol^2 (0.64 + 0.36 F)``, so raising the log level by
      ``(s^2 - vol^2) / (2 kappa)`` leaves the log-mean with the 2D drift.

    Profits and switching costs use the geometric mean, so the problem is
    equivalent to the 2D one while the solver sees ``1 + F`` inputs.
    """
    cfg = copy.deepcopy(CL_DEFAULTS)
    cfg.update({"lambda": lam, "fuels": fuels})
    cfg.update(overrides)
    return _build_cl(cfg)


def _build_cl(cfg) -> Instance:
    F = int(cfg["fuels"])
    if F != cfg["fuels"] or F < 1:
        raise ValidationError(f"fuel count must be a positive integer, got {cfg['fuels']}")
    if cfg["lambda"] < 0:
        raise ValidationError("jump intensity must be non-negative")
    d = 1 + F
    kp, kg = cfg["kappa"]
    lp, lg = cfg["level"]
    vp, vg = cfg["vol"]
    rho = cfg["rho"]
    idio = math.sqrt(1.0 - rho * rho) * math.sqrt(F)
    sigma = np.zeros((d, d))
    sigma[0, 0] = vp
    sigma[1:, 0] = vg * rho
    sigma[np.arange(1, d), np.arange(1, d)] = vg * idio
    fuel_var = vg * vg * (rho * rho + idio * idio)
    fuel_level = math.log(lg) + (fuel_var - vg * vg) / (2 * kg)
    model = ExpOuJumpModel(
        kappa=np.array([kp] + [kg] * F, dtype=float),
        mu=np.array([math.log(lp)] + [fuel_level] * F),
        sigma=sigma,
        jumps=JumpSpec(cfg["lambda"], cfg["jump_mean"], (0,)),
        tag=cfg.get("name", f"cl_d{d}")[:32],
    )
    x0 = np.asarray(cfg["x0"], dtype=float)
    if x0.size == 2 and d > 2:
        x0 = np.concatenate([x0[:1], np.full(F, x0[1])])
    if x0.shape != (d,):
        raise ValidationError(f"x0 must have {d} entries")
    grid = TimeGrid(cfg["horizon"], cfg["steps"])
    slope, fixed = cfg["cost_slope"], cfg["cost_fixed"]

    def fuel_index(x):
        return np.exp(np.log(x[:, 1:]).mean(axis=1)) if F > 1 else x[:, 1]

    if cfg["single_mode"]:
        def running(t, x):
            return np.zeros((x.shape[0], 1))

        def terminal(x):
            return x[:, :1].copy()

        def cost(x):
            return np.zeros((x.shape[0], 1, 1))

        n_modes = 1
    else:
        def running(t, x):
            P, G = x[:, 0], fuel_index(x)
            return np.stack([cl_profit(m, P, G) * np.ones_like(P) for m in (1, 2, 3)], axis=1)

        if cfg["terminal"] == "zero":
            def terminal(x):
                return np.zeros((x.shape[0], 3))
        else:
            raise ValidationError(f"unknown terminal profit {cfg['terminal']!r}")

        off = 1.0 - np.eye(3)

        def cost(x):
            c = slope * fuel_index(x) + fixed
            return c[:, None, None] * off

        n_modes = 3
    problem = SwitchingProblem(
        n_modes=n_modes, dim=d, grid=grid, running_profit=running, terminal_profit=terminal,
        switching_cost=cost, switch_steps=_switch_grid(cfg["switch_grid"], grid.steps),
        name=cfg.get("name", f"cl_d{d}"), params=cfg)
    return Instance(problem.name, problem, model, x0, cfg)


def build_aid(**overrides) -> Instance:
    """Three-plant (gas, coal, nuclear) capacity problem with four modes."""
    cfg = copy.deepcopy(AID_DEFAULTS)
    cfg.update(overrides)
    return _build_aid(cfg)


def _build_aid(cfg) -> Instance:
    capacity = np.asarray(cfg["capacity"], dtype=float)
    F, I = capacity.shape
    model = CointegratedPriceModel(
        mu=cfg["mu"], sigma=cfg["sigma"], alpha=cfg["alpha"], beta=cfg["beta"],
        jumps=JumpSpec(cfg["lambda"], cfg["jump_mean"], (F + 1,)),
        season=tuple(cfg["season"]), substeps=cfg["substeps"],
        tag=cfg.get("name", "aid_capacity")[:32])
    if model.fuels != F:
        raise ValidationError("capacity table and price model disagree on fuel count")
    grid = TimeGrid(cfg["horizon"], cfg["steps"])
    carbon, heat = np.asarray(cfg["carbon_rate"]), np.asarray(cfg["heat_rate"])
    scale, eps = np.asarray(cfg["cost_scale"]), float(cfg["epsilon"])
    # changes[phi, i, j]: fuel phi's level differs between modes i and j
    changes = (capacity[:, :, None] != capacity[:, None, :]).astype(float)
    off = 1.0 - np.eye(I)

    def running(t, x):
        return np.stack([aid_running_cost(x, m, carbon, heat, capacity)
                         for m in range(1, I + 1)], axis=1)

    def terminal(x):
        return np.zeros((x.shape[0], I))

    def cost(x):
        S = x[:, F + 2:2 * F + 2]
        return np.einsum("pf,fij->pij", S * scale, changes) + eps * off

    problem = SwitchingProblem(
        n_modes=I, dim=model.dim, grid=grid, running_profit=running, terminal_profit=terminal,
        switching_cost=cost, switch_steps=_switch_grid(cfg["switch_grid"], grid.steps),
        name=cfg.get("name", "aid_capacity"), params=cfg)
    return Instance(problem.name, problem, model, np.asarray(cfg["x0"], dtype=float), cfg)


def _presets():
    out = {
        "cl2d_lambda8": {**CL_DEFAULTS, "name": "cl2d_lambda8"},
        "cl2d_lambda16": {**CL_DEFAULTS, "lambda": 16.0, "name": "cl2d_lambda16"},
        "cl2d_single": {**CL_DEFAULTS, "lambda": 0.0, "single_mode": True, "name": "cl2d_single"},
        "aid_capacity": {**AID_DEFAULTS, "name": "aid_capacity"},
    }
    for d in range(10, 80, 10):
        out[f"cl_hd_{d}"] = {**CL_DEFAULTS, "fuels": d - 1, "name": f"cl_hd_{d}"}
    return out


PRESETS = _presets()


def from_config(cfg: dict) -> Instance:
    kind = cfg.get("kind")
    if kind == "cl":
        merged = {**CL_DEFAULTS, **cfg}
        return _build_cl(copy.deepcopy(merged))
    if kind == "aid":
        merged = {**AID_DEFAULTS, **cfg}
        return _build_aid(copy.deepcopy(merged))
    raise ValidationError(f"unknown model kind {kind!r}")


def preset(name: str, **overrides) -> Instance:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return from_config({**copy.deepcopy(PRESETS[name]), **overrides})


def dump_config(cfg: dict, path) -> None:
    # json writes floats with repr, so values round-trip exactly
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def sample_states(instance: Instance, n: int = 10_000, seed: int = 0) -> np.ndarray:
    """States drawn from short simulated paths, for assumption checks."""
    grid = instance.problem.grid
    short = TimeGrid(grid.horizon, min(grid.steps, 8))
    if isinstance(instance.model, ExpOuJumpModel):
        b = simulate_exp_ou_jump(instance.model, short, instance.x0, n, seed)
    else:
        b = simulate_capacity_model(instance.model, short, instance.x0, n, seed)
    idx = np.random.default_rng(seed).integers(0, short.steps + 1, size=n)
    return b.states[np.arange(n), idx]


def check_instance(instance: Instance, n: int = 10_000, seed: int = 0):
    return validate_assumptions(instance.problem, sample_states(instance, n, seed))
