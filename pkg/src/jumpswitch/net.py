"""Dense tanh networks with hand-written gradients and Adam.

A :class:`NetworkParams` maps a state ``x`` (d,) to ``(y, z, u)`` with
``y`` scalar, ``z`` of the Brownian dimension and ``u`` scalar: one network
whose output layer is split 1 / m / 1. Fixed (non-trained) affine maps keep
the trainable part well scaled:

* inputs enter as ``(x - in_shift) / in_scale``;
* ``y = out_shift + out_scale * o_y``;
* ``z = out_scale * o_z / increment_scale[:m]`` and
  ``u = out_scale * o_u / increment_scale[m]``, so that the raw outputs
  multiply unit-size increments.

With the default identity maps the network is the plain MLP.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import get_backend
from .errors import FormatError, ValidationError


def architecture(dim: int, hidden_layers: int = 2, width: int | None = None,
                 brownian_dim: int | None = None) -> tuple:
    """Layer widths ``(d, w, .., w, 1 + m + 1)`` with ``w = d + 10`` by default."""
    width = dim + 10 if width is None else width
    m = dim if brownian_dim is None else brownian_dim
    return (dim,) + (width,) * hidden_layers + (m + 2,)


def param_count(sizes) -> int:
    """Weights plus biases: ``sum_l (n_l + 1) n_{l+1}``."""
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class NetworkParams:
    sizes: tuple
    theta: np.ndarray
    in_shift: np.ndarray = None
    in_scale: np.ndarray = None
    out_shift: float = 0.0
    out_scale: float = 1.0
    increment_scale: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (param_count(self.sizes),):
            raise ValidationError("parameter vector does not match the architecture")
        d = self.sizes[0]
        self.in_shift = np.zeros(d) if self.in_shift is None else np.asarray(self.in_shift, float)
        self.in_scale = np.ones(d) if self.in_scale is None else np.asarray(self.in_scale, float)
        self.out_shift = float(self.out_shift)
        self.out_scale = float(self.out_scale)
        m = self.sizes[-1] - 1
        self.increment_scale = (np.ones(m) if self.increment_scale is None
                                else np.asarray(self.increment_scale, float))
        if self.increment_scale.shape != (m,):
            raise ValidationError("increment scale needs one entry per output increment")

    @property
    def dim(self) -> int:
        return self.sizes[0]

    @property
    def brownian_dim(self) -> int:
        return self.sizes[-1] - 2

    @property
    def sizes_array(self) -> np.ndarray:
        return np.asarray(self.sizes, dtype=np.int64)

    def layers(self):
        """Views ``[(W, b), ...]`` into ``theta``; W is (out, in)."""
        out, off = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = self.theta[off:off + a * b].reshape(b, a)
            off += a * b
            out.append((W, self.theta[off:off + b]))
            off += b
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.sizes, self.theta.copy(), self.in_shift.copy(),
                             self.in_scale.copy(), self.out_shift, self.out_scale,
                             self.increment_scale.copy(), self.seed)

    def sup_norm(self) -> float:
        return float(np.abs(self.theta).max())

    def normalise_inputs(self, x) -> np.ndarray:
        return np.ascontiguousarray((np.asarray(x, dtype=float) - self.in_shift) / self.in_scale)

    def rescaled(self, in_shift, in_scale, out_shift, out_scale,
                 increment_scale=None) -> "NetworkParams":
        """Same function under new fixed input/output maps."""
        new = self.copy()
        in_shift = np.asarray(in_shift, float)
        in_scale = np.asarray(in_scale, float)
        inc = (self.increment_scale if increment_scale is None
               else np.asarray(increment_scale, float))
        layers = new.layers()
        W0, b0 = layers[0]
        # old normalised input = new normalised input * (s_new / s_old) + (c_new - c_old) / s_old
        b0 += W0 @ ((in_shift - self.in_shift) / self.in_scale)
        W0 *= in_scale / self.in_scale
        WL, bL = layers[-1]
        ratio = np.empty(WL.shape[0])
        ratio[0] = self.out_scale / out_scale
        ratio[1:] = ratio[0] * inc / self.increment_scale
        WL *= ratio[:, None]
        bL *= ratio
        bL[0] += (self.out_shift - out_shift) / out_scale
        new.in_shift, new.in_scale = in_shift.copy(), in_scale.copy()
        new.out_shift, new.out_scale = float(out_shift), float(out_scale)
        new.increment_scale = inc.copy()
        return new


def init_params(sizes, seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return NetworkParams(tuple(sizes), np.concatenate(parts), seed=seed)


def _check_x(params, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.dim:
        raise ValidationError(f"input width {x.shape[1]} != network input {params.dim}")
    return x


def forward(params: NetworkParams, x, backend=None):
    """Return ``(y (B,), z (B, m), u (B,))`` in problem units."""
    x = _check_x(params, x)
    k = get_backend(backend) if isinstance(backend, (str, type(None))) else backend
    o = k.forward(params.theta, params.sizes_array, params.normalise_inputs(x))
    m = params.brownian_dim
    s = params.out_scale / params.increment_scale
    return (params.out_shift + params.out_scale * o[:, 0], o[:, 1:1 + m] * s[:m],
            o[:, 1 + m] * s[m])


def _rows(params, x, target, fdt, dW, dN):
    x = _check_x(params, x)
    B = x.shape[0]
    if B == 0:
        raise ValidationError("empty batch")
    target = np.broadcast_to(np.asarray(target, dtype=float), (B,))
    fdt = np.broadcast_to(np.asarray(fdt, dtype=float), (B,))
    if not (np.all(np.isfinite(target)) and np.all(np.isfinite(fdt))):
        raise ValidationError("non-finite regression target")
    m = params.brownian_dim
    inc = params.increment_scale
    dW = np.ascontiguousarray(np.broadcast_to(np.asarray(dW, float), (B, m)) / inc[:m])
    dN = np.ascontiguousarray(np.broadcast_to(np.asarray(dN, float), (B,)) / inc[m])
    t = np.ascontiguousarray((target + fdt - params.out_shift) / params.out_scale)
    return params.normalise_inputs(x), t, dW, dN


def loss_and_gradient(params: NetworkParams, x, target, fdt, dW, dN, backend=None):
    """Empirical mean of ``|target - y + f dt - z.dW - u dN|^2`` and its gradient
    with respect to ``params.theta``."""
    k = get_backend(backend) if isinstance(backend, (str, type(None))) else backend
    xn, t, dW, dN = _rows(params, x, target, fdt, dW, dN)
    grad = np.empty_like(params.theta)
    loss = k.loss_grad(params.theta, params.sizes_array, xn, t, dW, dN, grad)
    s2 = params.out_scale ** 2
    return loss * s2, grad * s2


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(params.theta), np.zeros_like(params.theta), lr=lr, **kw)


def adam_step(params: NetworkParams, state: AdamState, gradient, clamp: float | None = None,
              backend=None):
    """Bias-corrected Adam update, in place; returns ``(params, state)``."""
    g = np.ascontiguousarray(gradient, dtype=float)
    if g.shape != params.theta.shape or state.m.shape != params.theta.shape:
        raise ValidationError("gradient / moment shapes do not match parameters")
    k = get_backend(backend) if isinstance(backend, (str, type(None))) else backend
    state.step += 1
    k.adam_update(params.theta, g, state.m, state.v, state.step, state.lr, state.beta1,
                  state.beta2, state.eps, 0.0 if clamp is None else float(clamp))
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 512
    lr: float = 1e-3
    warm_start: bool = True
    clamp: float | None = None
    hidden_layers: int = 2
    width: int | None = None
    seed: int = 0
    backend: str | None = None
    threads: int = 1
    refit_value_head: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("minibatch size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")


def train_network(params: NetworkParams, x, target, fdt, dW, dN, config: TrainConfig,
                  rng: np.random.Generator, backend=None):
    """Minibatch Adam on one regression stage; updates ``params`` in place.

    Returns the per-epoch mean minibatch loss in problem units.
    """
    k = get_backend(backend) if isinstance(backend, (str, type(None))) else backend
    xn, t, dW, dN = _rows(params, x, target, fdt, dW, dN)
    P = xn.shape[0]
    if config.batch_size > P:
        raise ValidationError(f"minibatch size {config.batch_size} exceeds path count {P}")
    order = np.stack([rng.permutation(P) for _ in range(config.epochs)]).astype(np.int64)
    m = np.zeros_like(params.theta)
    v = np.zeros_like(params.theta)
    clamp = 0.0 if config.clamp is None else float(config.clamp)
    _, losses = k.train_epochs(params.theta, params.sizes_array, xn, t, dW, dN, order,
                               int(config.batch_size), float(config.lr), 0.9, 0.999, 1e-8,
                               clamp, m, v, 0)
    return np.asarray(losses) * params.out_scale ** 2


def hidden_features(params: NetworkParams, x) -> np.ndarray:
    """Last hidden layer activations, shape (B, width)."""
    a = params.normalise_inputs(_check_x(params, x))
    for W, b in params.layers()[:-1]:
        a = np.tanh(a @ W.T + b)
    return a


def refit_value_head(params: NetworkParams, x, target, fdt, dW, dN) -> float:
    """Closed-form solve for the bias of the ``y`` output.

    With every other parameter fixed the loss is quadratic in that bias, and
    its minimiser makes the mean residual exactly zero. Only the bias is
    moved: re-solving the whole row fits sample noise through the hidden
    features, and the max over modes turns that noise into an upward drift
    that compounds over the backward steps. Returns the new loss.
    """
    xn, t, dWn, dNn = _rows(params, x, target, fdt, dW, dN)
    H = hidden_features(params, x)
    WL, bL = params.layers()[-1]
    m = params.brownian_dim
    o = H @ WL.T + bL
    r = t - o[:, 0] - np.einsum("ij,ij->i", o[:, 1:1 + m], dWn) - o[:, 1 + m] * dNn
    shift = r.mean()
    if np.isfinite(shift):
        bL[0] += shift
        r = r - shift
    return float(r @ r / r.size) * params.out_scale ** 2


# ---------------------------------------------------------------- snapshots

NET_MAGIC = b"JSWNET\0\0"
NET_VERSION = 1
_NET_HEAD = struct.Struct("<8sBIqii")


def save_params(params: NetworkParams, path, step: int = -1, mode: int = -1) -> None:
    sizes = np.asarray(params.sizes, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(_NET_HEAD.pack(NET_MAGIC, NET_VERSION, sizes.size, int(params.seed),
                                int(step), int(mode)))
        fh.write(sizes.tobytes())
        for arr in (params.in_shift, params.in_scale,
                    np.array([params.out_shift, params.out_scale]), params.increment_scale,
                    params.theta):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path):
    """Return ``(params, step, mode)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _NET_HEAD.size:
        raise FormatError(f"{path}: truncated weight header")
    magic, version, nl, seed, step, mode = _NET_HEAD.unpack_from(raw)
    if magic != NET_MAGIC or version != NET_VERSION:
        raise FormatError(f"{path}: not a weight snapshot")
    off = _NET_HEAD.size
    if len(raw) < off + 4 * nl or nl < 2:
        raise FormatError(f"{path}: truncated architecture")
    sizes = tuple(int(s) for s in np.frombuffer(raw, "<u4", nl, off))
    off += 4 * nl
    d, m, n = sizes[0], sizes[-1] - 1, param_count(sizes)
    head = 2 * d + 2 + m
    if len(raw) != off + 8 * (head + n):
        raise FormatError(f"{path}: payload size does not match architecture {sizes}")
    vals = np.frombuffer(raw, "<f8", offset=off).astype(np.float64)
    params = NetworkParams(sizes, vals[head:], vals[:d], vals[d:2 * d], vals[2 * d],
                           vals[2 * d + 1], vals[2 * d + 2:head], seed)
    return params, step, mode
