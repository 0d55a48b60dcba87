"""Longstaff-Schwartz regression Monte Carlo for low-dimensional switching problems."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .paths import PathBatch
from .problem import SwitchingProblem, best_modes

RIDGE = 1e-8


class RegressionError(ArithmeticError):
    category = "numerical"


@dataclass(frozen=True)
class BasisSpec:
    degree: int = 3
    cross_terms: bool = True
    log: bool = True

    def exponents(self, d: int) -> list:
        out = []
        for e in itertools.product(range(self.degree + 1), repeat=d):
            if sum(e) > self.degree:
                continue
            if not self.cross_terms and sum(1 for k in e if k) > 1:
                continue
            out.append(e)
        return sorted(out, key=lambda e: (sum(e), tuple(-k for k in e)))

    def size(self, d: int) -> int:
        return len(self.exponents(d))


def design_matrix(x, basis: BasisSpec, center=None, scale=None):
    """Monomials of the (log-)coordinates after per-coordinate standardisation.

    The span of total-degree polynomials is unchanged by the affine
    standardisation; it only improves conditioning.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.log(x) if basis.log else x
    if center is None:
        center = z.mean(axis=0)
        scale = z.std(axis=0)
        scale = np.where(scale > 1e-12 * (1 + np.abs(center)), scale, 1.0)
    z = (z - center) / scale
    cols = []
    for e in basis.exponents(z.shape[1]):
        col = np.ones(z.shape[0])
        for k, p in enumerate(e):
            if p:
                col = col * z[:, k] ** p
        cols.append(col)
    return np.column_stack(cols), center, scale


def regress(A, y, ridge: float | None = RIDGE):
    """Least squares of ``y`` (P,) or (P, I) on ``A``; returns (coef, rank, ridged).

    On rank deficiency the normal equations of ``A / sqrt(P)`` are solved with
    ``ridge`` added to the diagonal, or :class:`RegressionError` is raised when
    ``ridge`` is None.
    """
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank == A.shape[1]:
        return coef, rank, False
    if ridge is None:
        raise RegressionError(
            f"design matrix rank {rank} < {A.shape[1]} columns and ridge disabled")
    P = A.shape[0]
    gram = A.T @ A / P + ridge * np.eye(A.shape[1])
    return np.linalg.solve(gram, A.T @ y / P), rank, True


@dataclass
class RegressionStage:
    step: int
    coef: np.ndarray  # (K, I)
    center: np.ndarray
    scale: np.ndarray
    ridged: bool = False

    def continuation(self, x, basis: BasisSpec) -> np.ndarray:
        A, _, _ = design_matrix(x, basis, self.center, self.scale)
        return A @ self.coef


@dataclass
class LsmcResult:
    values: np.ndarray  # V(0, x0, i) per mode
    stderr: np.ndarray
    stages: list = field(default_factory=list)  # index n -> RegressionStage
    basis: BasisSpec = field(default_factory=BasisSpec)


def fit_lsmc(problem: SwitchingProblem, batch: PathBatch, basis: BasisSpec | None = None,
             ridge: float | None = RIDGE, max_dim: int = 5) -> LsmcResult:
    """Backward induction on pathwise realised values.

    For each mode the realised continuation ``V_{n+1} + f dt`` is regressed on
    the basis at ``X_n``; decisions use the regressed continuations, but the
    pathwise values carried backwards are the realised cash flows of the
    chosen mode.
    """
    basis = basis or BasisSpec()
    if batch.grid != problem.grid:
        raise ValidationError("batch grid does not match problem grid")
    if problem.dim > max_dim:
        raise ValidationError(f"dimension {problem.dim} exceeds regression limit {max_dim}")
    M, dt = problem.grid.steps, problem.grid.dt
    X = batch.states
    P, I = X.shape[0], problem.n_modes
    t = problem.grid.times
    V = np.asarray(problem.terminal_profit(X[:, M]), dtype=float)
    stages = [None] * M
    rows = np.arange(P)
    for n in range(M - 1, -1, -1):
        x = X[:, n]
        realised = V + problem.running_profit(t[n], x) * dt
        A, center, scale = design_matrix(x, basis)
        coef, _, ridged = regress(A, realised, ridge)
        stages[n] = RegressionStage(n, coef, center, scale, ridged)
        if I > 1 and problem.is_switch_step(n):
            cont = A @ coef
            C = problem.switching_cost(x)
            Vn = np.empty_like(V)
            for i in range(I):
                j = best_modes(cont, C, i)
                Vn[:, i] = realised[rows, j] - C[rows, i, j]
            V = Vn
        else:
            V = realised
    values = V.mean(axis=0)
    stderr = V.std(axis=0, ddof=1) / np.sqrt(P) if P > 1 else np.zeros(I)
    return LsmcResult(values, stderr, stages, basis)


@dataclass
class Comparison:
    relative: np.ndarray
    absolute: np.ndarray
    flagged: np.ndarray  # True where LS ~ 0 and the absolute difference is reported
    average: float

    @property
    def reported(self) -> np.ndarray:
        return np.where(self.flagged, self.absolute, self.relative)


def compare(osj_values, ls_values, atol: float = 1e-12) -> Comparison:
    osj = np.asarray(osj_values, dtype=float)
    ls = np.asarray(ls_values, dtype=float)
    if osj.shape != ls.shape:
        raise ValidationError("value vectors must have the same length")
    absdiff = np.abs(osj - ls)
    flagged = np.abs(ls) <= atol
    rel = np.where(flagged, np.nan, absdiff / np.where(flagged, 1.0, np.abs(ls)))
    reported = np.where(flagged, absdiff, rel)
    return Comparison(rel, absdiff, flagged, float(reported.mean()))


def write_comparison_csv(path, osj_values, ls_values, comparison: Comparison | None = None):
    comparison = comparison or compare(osj_values, ls_values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "osj", "ls", "difference", "absolute_flag"])
        for i, (o, l) in enumerate(zip(osj_values, ls_values)):
            w.writerow([i + 1, repr(float(o)), repr(float(l)),
                        repr(float(comparison.reported[i])), int(comparison.flagged[i])])
        w.writerow(["average", "", "", repr(comparison.average), ""])
