"""Simulation of jump-diffusion state paths and the training dataset format.

Two state models are provided:

* :class:`ExpOuJumpModel` -- multivariate exponential Ornstein-Uhlenbeck with
  compound-Poisson jumps in log space, simulated exactly.
* :class:`CointegratedPriceModel` -- demand / availability OU drivers plus a
  cointegrated jump price vector, simulated with log-Euler sub-stepping.

Every simulator returns a :class:`PathBatch` holding the states on the grid
together with the per-interval Brownian increments and compensated jump
counts that the backward training loss consumes.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import FormatError, ValidationError

# paths per random-stream block; fixed so results do not depend on chunking
BLOCK_SIZE = 8192

_DIFFUSION, _JUMP_TIMES, _JUMP_SIZES = 0, 1, 2


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"time grid needs at least one step, got {self.steps}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class JumpSpec:
    """Compound Poisson jumps with exponential log-marks.

    A jump multiplies the affected coordinates by ``exp(e)`` with
    ``e ~ Exponential(mean)``.
    """

    intensity: float = 0.0
    mean: float = 0.1
    coords: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.intensity < 0:
            raise ValidationError("jump intensity must be non-negative")
        if self.mean <= 0:
            raise ValidationError("mean jump size must be positive")
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated paths on a grid.

    Attributes
    ----------
    states : ndarray, shape (P, M+1, d)
    dW : ndarray, shape (P, M, d)
        Brownian increments over ``[t_n, t_{n+1})``.
    dN : ndarray, shape (P, M)
        Jump counts over the interval minus ``intensity * dt``.
    """

    states: np.ndarray
    dW: np.ndarray
    dN: np.ndarray
    grid: TimeGrid
    tag: str = ""
    seed: int = -1
    intensity: float = 0.0

    def __post_init__(self):
        P, M1, d = self.states.shape
        if M1 != self.grid.steps + 1:
            raise ValidationError("states do not match the grid")
        if self.dW.shape != (P, M1 - 1, d) or self.dN.shape != (P, M1 - 1):
            raise ValidationError("increment arrays do not match the states")
        for name in ("states", "dW", "dN"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def __eq__(self, other):
        if not isinstance(other, PathBatch):
            return NotImplemented
        return (self.grid == other.grid and self.tag == other.tag
                and self.seed == other.seed and self.intensity == other.intensity
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.dW, other.dW)
                and np.array_equal(self.dN, other.dN))


def default_path_count(steps: int) -> int:
    """Path count of order M**2, which keeps the empirical-mean error small."""
    return steps * steps


def _rng(seed: int, block: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block, role)))


def _blocks(n_paths: int):
    for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        yield b, start, min(start + BLOCK_SIZE, n_paths)


def _phi(rate, h):
    """(1 - exp(-rate h)) / rate, continuous at rate = 0."""
    rate = np.asarray(rate, dtype=float)
    out = np.full(rate.shape, float(h))
    nz = rate != 0
    out[nz] = -np.expm1(-rate[nz] * h) / rate[nz]
    return out


class OUIncrement:
    """Exact one-step sampler for ``dY = -kappa * Y dt + B dW``.

    Returns the stochastic-integral part of the transition jointly with the
    Brownian increment ``W_{t+h} - W_t`` that generated it. For every Brownian
    coordinate ``j`` the vector ``(dW_j, int e^{-a(h-s)} dW_j(s) for each
    distinct rate a)`` is Gaussian with a closed-form covariance, so only the
    distinct rates need to be sampled.
    """

    def __init__(self, kappa, loading, h):
        kappa = np.asarray(kappa, dtype=float)
        self.loading = np.atleast_2d(np.asarray(loading, dtype=float))
        self.rates, self.rate_index = np.unique(kappa, return_inverse=True)
        self.decay = np.exp(-kappa * h)
        a = self.rates
        U = a.size
        cov = np.empty((U + 1, U + 1))
        cov[0, 0] = h
        cov[0, 1:] = cov[1:, 0] = _phi(a, h)
        cov[1:, 1:] = _phi(a[:, None] + a[None, :], h)
        try:
            self.factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(cov)
            self.factor = v * np.sqrt(np.clip(w, 0.0, None))
        self.n_brownian = self.loading.shape[1]
        self.width = U + 1

    def sample(self, normals):
        """Map normals of shape (P, m, U+1) to ``(dW (P, m), noise (P, d))``."""
        g = normals @ self.factor.T
        dW = g[:, :, 0]
        noise = np.empty((g.shape[0], self.loading.shape[0]))
        for u in range(self.rates.size):
            rows = np.flatnonzero(self.rate_index == u)
            noise[:, rows] = g[:, :, u + 1] @ self.loading[rows].T
        return dW, noise


@dataclass(frozen=True, eq=False)
class ExpOuJumpModel:
    """``dX = X [kappa (mu - log X) dt + Sigma dW + (e^e - 1) dN e_jump]``.

    ``mu`` is the long-run log level. Between jumps ``log X`` is a Gaussian OU
    process whose reversion target is shifted by the Ito term
    ``-diag(Sigma Sigma^T) / (2 kappa)``.
    """

    kappa: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    jumps: JumpSpec = field(default_factory=JumpSpec)
    tag: str = "exp_ou_jump"

    def __post_init__(self):
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        d = kappa.size
        if mu.shape != (d,) or sigma.shape[0] != d:
            raise ValidationError("kappa, mu and sigma dimensions disagree")
        if np.any(kappa <= 0):
            raise ValidationError("mean reversion speeds must be positive")
        if not np.all(np.isfinite(sigma)):
            raise ValidationError("volatility matrix must be finite")
        if any(c < 0 or c >= d for c in self.jumps.coords):
            raise ValidationError("jump coordinate out of range")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.kappa.size

    @property
    def log_target(self) -> np.ndarray:
        """Reversion target of log X between jumps."""
        var = np.einsum("ij,ij->i", self.sigma, self.sigma)
        return self.mu - 0.5 * var / self.kappa

    def log_moments(self, x0, t):
        """Mean and variance of ``log X_t`` (jumps included) from ``x0``."""
        y0 = np.log(np.asarray(x0, dtype=float))
        e = np.exp(-self.kappa * t)
        th = self.log_target
        mean = th + (y0 - th) * e
        cov = self.sigma @ self.sigma.T
        var = np.diag(cov) * -np.expm1(-2 * self.kappa * t) / (2 * self.kappa)
        lam, m = self.jumps.intensity, self.jumps.mean
        for c in self.jumps.coords:
            k = self.kappa[c]
            mean[c] += lam * m * -np.expm1(-k * t) / k
            var[c] += lam * 2 * m * m * -np.expm1(-2 * k * t) / (2 * k)
        return mean, var


def _check_common(grid, x0, paths, d):
    if not isinstance(grid, TimeGrid):
        raise ValidationError("grid must be a TimeGrid")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d,):
        raise ValidationError(f"x0 must have shape ({d},), got {x0.shape}")
    if int(paths) != paths or paths < 1:
        raise ValidationError(f"path count must be a positive integer, got {paths}")
    return x0, int(paths)


def _jump_arrivals(rng_times, rng_sizes, n, steps, rate_h, mean, h):
    """Per-interval counts plus offsets/marks of every arrival (flat, row-major)."""
    counts = rng_times.poisson(rate_h, size=(n, steps))
    total = int(counts.sum())
    offsets = rng_times.uniform(0.0, h, size=total)
    marks = rng_sizes.exponential(mean, size=total)
    cell = np.repeat(np.arange(n * steps), counts.ravel())
    return counts, cell, offsets, marks


def simulate_exp_ou_jump(model: ExpOuJumpModel, grid: TimeGrid, x0, paths: int,
                         seed: int = 0) -> PathBatch:
    """Jump-adapted exact simulation of :class:`ExpOuJumpModel`.

    Between arrivals the log-state follows the exact OU transition; an arrival
    at ``tau`` adds ``e`` to the log of the jump coordinates. Because the log
    dynamics are linear, the state at ``t_{n+1}`` equals the diffusion-only
    transition plus ``sum_k e_k exp(-kappa (t_{n+1} - tau_k))`` which is what
    stepping through the merged grid produces; only grid-aligned aggregates
    are stored.
    """
    d = model.dim
    x0, paths = _check_common(grid, x0, paths, d)
    if np.any(x0 <= 0):
        raise ValidationError("x0 must be strictly positive")
    M, h = grid.steps, grid.dt
    lam = model.jumps.intensity
    ou = OUIncrement(model.kappa, model.sigma, h)
    th = model.log_target
    jc = list(model.jumps.coords)

    states = np.empty((paths, M + 1, d))
    dW = np.empty((paths, M, d))
    dN = np.empty((paths, M))
    y0 = np.log(x0)
    for b, lo, hi in _blocks(paths):
        n = hi - lo
        rng_w = _rng(seed, b, _DIFFUSION)
        jump_log = np.zeros((n, M, len(jc)))
        if lam > 0:
            counts, cell, off, marks = _jump_arrivals(
                _rng(seed, b, _JUMP_TIMES), _rng(seed, b, _JUMP_SIZES), n, M, lam * h,
                model.jumps.mean, h)
            dN[lo:hi] = counts - lam * h
            for k, c in enumerate(jc):
                contrib = marks * np.exp(-model.kappa[c] * (h - off))
                jump_log[:, :, k] = np.bincount(cell, contrib, minlength=n * M).reshape(n, M)
        else:
            dN[lo:hi] = 0.0
        y = np.broadcast_to(y0, (n, d)).copy()
        states[lo:hi, 0] = x0
        for step in range(M):
            z = rng_w.standard_normal((n, ou.n_brownian, ou.width))
            w, noise = ou.sample(z)
            y = th + (y - th) * ou.decay + noise
            y[:, jc] += jump_log[:, step]
            dW[lo:hi, step] = w
            states[lo:hi, step + 1] = np.exp(y)
    return PathBatch(states, dW, dN, grid, tag=model.tag, seed=seed, intensity=lam)


@dataclass(frozen=True, eq=False)
class CointegratedPriceModel:
    """Demand, plant availabilities and cointegrated commodity prices.

    State layout (``F`` fuels)::

        [D, A^1..A^F, S^0, S^1..S^F, P]

    ``D = Z^0 + H(t)`` and ``A^phi = T(Z^phi)`` where the ``Z`` drivers follow
    ``dZ = -alpha Z dt + beta dW^Z``. Prices follow
    ``dS = mu S dt + diag(S) (Sigma dW^S + (e^e - 1) dN e_P)``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    jumps: JumpSpec = field(default_factory=lambda: JumpSpec(8.0, 0.1, (-1,)))
    season: tuple[float, float, float] = (70.0, 10.0, 1.0)
    substeps: int = 4
    floor: float = 1e-8
    tag: str = "cointegrated"

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        n = mu.shape[0]
        F = n - 2
        if F < 1 or mu.shape != (n, n) or sigma.shape != (n, n):
            raise ValidationError("price matrices must be square of size F + 2")
        if alpha.shape != (F + 1,) or beta.shape != (F + 1, F + 1):
            raise ValidationError("OU driver parameters must have size F + 1")
        rank = np.linalg.matrix_rank(mu)
        if not 1 < rank < F + 2:
            raise ValidationError(f"cointegration matrix rank {rank} outside (1, {F + 2})")
        if np.any(alpha < 0):
            raise ValidationError("OU reversion speeds must be non-negative")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValidationError("substeps must be a positive integer")
        coords = tuple(c % n for c in self.jumps.coords)
        for name, val in (("mu", mu), ("sigma", sigma), ("alpha", alpha), ("beta", beta)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "jumps", JumpSpec(self.jumps.intensity, self.jumps.mean, coords))

    @property
    def fuels(self) -> int:
        return self.mu.shape[0] - 2

    @property
    def dim(self) -> int:
        return 2 * self.fuels + 3

    def demand_season(self, t):
        h0, h1, period = self.season
        return h0 + h1 * np.cos(2 * np.pi * np.asarray(t) / period)

    @property
    def availability_scale(self) -> np.ndarray:
        """Stationary standard deviation of each availability driver."""
        b = self.beta[1:]
        var = np.einsum("ij,ij->i", b, b)
        a = self.alpha[1:]
        with np.errstate(divide="ignore"):
            sd = np.sqrt(np.where(a > 0, var / (2 * a), var))
        return np.where(sd > 0, sd, 1.0)

    def availability(self, z):
        """Quantile transform onto [0, 1]: standard normal CDF of the scaled driver."""
        return ndtr(np.asarray(z) / self.availability_scale)

    def observe(self, t, z, s):
        """Assemble the state vector from drivers ``z`` (.., F+1) and prices ``s``."""
        demand = z[..., :1] + self.demand_season(t)
        return np.concatenate([demand, self.availability(z[..., 1:]), s], axis=-1)


def simulate_capacity_model(model: CointegratedPriceModel, grid: TimeGrid, x0, paths: int,
                            seed: int = 0) -> PathBatch:
    """Simulate :class:`CointegratedPriceModel`.

    ``x0`` is given in driver coordinates ``[Z^0..Z^F, S^0..S^F, P]``. OU
    drivers use the exact transition; prices use ``substeps`` log-Euler steps
    per grid interval with a floor at ``floor * S_0``.
    """
    F = model.fuels
    nz, ns = F + 1, F + 2
    x0, paths = _check_common(grid, x0, paths, nz + ns)
    z0, s0 = x0[:nz], x0[nz:]
    if np.any(s0 <= 0):
        raise ValidationError("initial prices must be strictly positive")
    M, h = grid.steps, grid.dt
    K = int(model.substeps)
    hk = h / K
    lam, jmean = model.jumps.intensity, model.jumps.mean
    jc = list(model.jumps.coords)
    ou = OUIncrement(model.alpha, model.beta, h)
    ito = 0.5 * np.einsum("ij,ij->i", model.sigma, model.sigma)
    floor = model.floor * s0
    times = grid.times

    d = model.dim
    states = np.empty((paths, M + 1, d))
    dW = np.empty((paths, M, nz + ns))
    dN = np.empty((paths, M))
    for b, lo, hi in _blocks(paths):
        n = hi - lo
        rng_w = _rng(seed, b, _DIFFUSION)
        rng_t = _rng(seed, b, _JUMP_TIMES)
        rng_s = _rng(seed, b, _JUMP_SIZES)
        z = np.broadcast_to(z0, (n, nz)).copy()
        s = np.broadcast_to(s0, (n, ns)).copy()
        states[lo:hi, 0] = model.observe(times[0], z, s)
        for step in range(M):
            g = rng_w.standard_normal((n, ou.n_brownian, ou.width))
            wz, noise = ou.sample(g)
            z = z * ou.decay + noise
            ws = np.zeros((n, ns))
            count = np.zeros(n)
            for _ in range(K):
                dw = rng_w.standard_normal((n, ns)) * np.sqrt(hk)
                ws += dw
                with np.errstate(over="ignore", invalid="ignore"):
                    drift = (s @ model.mu.T) / s - ito
                logs = np.log(s) + drift * hk + dw @ model.sigma.T
                if lam > 0:
                    k = rng_t.poisson(lam * hk, size=n)
                    jump = np.zeros(n)
                    hit = k > 0
                    jump[hit] = rng_s.gamma(k[hit], jmean)
                    logs[:, jc] += jump[:, None]
                    count += k
                with np.errstate(over="ignore", invalid="ignore"):
                    s = np.maximum(np.exp(logs), floor)
            dW[lo:hi, step, :nz] = wz
            dW[lo:hi, step, nz:] = ws
            dN[lo:hi, step] = count - lam * h
            states[lo:hi, step + 1] = model.observe(times[step + 1], z, s)
        if not np.all(np.isfinite(states[lo:hi])):
            raise ValidationError("price simulation overflowed; drift too large for the grid")
    return PathBatch(states, dW, dN, grid, tag=model.tag, seed=seed, intensity=lam)


# ---------------------------------------------------------------- persistence

MAGIC = b"JSWPATHS"
VERSION = 1
_HEADER = struct.Struct("<8sBIIQd32sqd")


def save_batch(batch: PathBatch, path) -> None:
    """Write ``batch`` as header + row-major float64 arrays (states, dW, dN)."""
    P, M1, d = batch.states.shape
    tag = batch.tag.encode("utf-8")
    if len(tag) > 32:
        raise ValidationError("model tag longer than 32 bytes")
    header = _HEADER.pack(MAGIC, VERSION, d, M1 - 1, P, batch.grid.horizon, tag,
                          int(batch.seed), float(batch.intensity))
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (batch.states, batch.dW, batch.dN):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_batch(path) -> PathBatch:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for header")
    magic, version, d, M, P, T, tag, seed, lam = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    shapes = [(P, M + 1, d), (P, M, d), (P, M)]
    sizes = [int(np.prod(s)) for s in shapes]
    if len(raw) != _HEADER.size + 8 * sum(sizes):
        raise FormatError(f"{path}: payload size does not match header (d={d}, M={M}, P={P})")
    arrays, offset = [], _HEADER.size
    for shape, size in zip(shapes, sizes):
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
                      .reshape(shape).astype(np.float64))
        offset += 8 * size
    try:
        grid = TimeGrid(T, M)
    except ValidationError as exc:
        raise FormatError(f"{path}: invalid grid in header: {exc}") from None
    return PathBatch(*arrays, grid, tag=tag.rstrip(b"\0").decode("utf-8"), seed=seed,
                     intensity=lam)


def export_csv(batch: PathBatch, path) -> None:
    """One row per (path, step); increments are blank on the terminal node."""
    P, M1, d = batch.states.shape
    times = batch.grid.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t"] + [f"x{k}" for k in range(d)]
                   + [f"dW{k}" for k in range(d)] + ["dN"])
        for p in range(P):
            for n in range(M1):
                row = [p, n, repr(float(times[n]))] + [repr(float(v)) for v in batch.states[p, n]]
                if n < M1 - 1:
                    row += [repr(float(v)) for v in batch.dW[p, n]] + [repr(float(batch.dN[p, n]))]
                else:
                    row += [""] * (d + 1)
                w.writerow(row)
