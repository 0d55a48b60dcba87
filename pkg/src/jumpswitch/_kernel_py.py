"""Pure numpy implementation of the training kernels.

Mirrors ``_kernel.pyx`` function for function. Parameters live in one flat
float64 vector; layer ``l`` stores ``W_l`` (out x in, row-major) followed by
``b_l``. Hidden layers use tanh, the output layer is affine. Inputs and
targets arrive already normalised.
"""
import numpy as np

NAME = "python"


def _layers(theta, sizes):
    out, off = [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = theta[off:off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = theta[off:off + n_out]
        off += n_out
        out.append((W, b))
    return out


def forward(theta, sizes, x):
    """Raw output layer, shape (B, sizes[-1])."""
    layers = _layers(theta, sizes)
    a = x
    for W, b in layers[:-1]:
        a = np.tanh(a @ W.T + b)
    W, b = layers[-1]
    return a @ W.T + b


def loss_grad(theta, sizes, x, t, dw, dn, grad):
    """Mean squared residual ``t - o_0 - o_z . dw - o_u dn``; gradient into ``grad``."""
    layers = _layers(theta, sizes)
    acts = [x]
    a = x
    for W, b in layers[:-1]:
        a = np.tanh(a @ W.T + b)
        acts.append(a)
    W, b = layers[-1]
    o = a @ W.T + b
    m = dw.shape[1]
    r = t - o[:, 0] - np.einsum("ij,ij->i", o[:, 1:1 + m], dw) - o[:, 1 + m] * dn
    B = x.shape[0]
    coef = (-2.0 / B) * r
    delta = np.empty_like(o)
    delta[:, 0] = coef
    delta[:, 1:1 + m] = coef[:, None] * dw
    delta[:, 1 + m] = coef * dn
    gl = _layers(grad, sizes)
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        gW, gb = gl[k]
        gW[...] = delta.T @ acts[k]
        gb[...] = delta.sum(axis=0)
        if k:
            delta = (delta @ W) * (1.0 - acts[k] ** 2)
    return float(r @ r / B)


def adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps, clamp):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if clamp > 0:
        np.clip(theta, -clamp, clamp, out=theta)


def train_epochs(theta, sizes, x, t, dw, dn, order, batch, lr, beta1, beta2, eps, clamp,
                 m, v, step):
    """Minibatch Adam over the row orders in ``order`` (epochs x P).

    Updates ``theta``, ``m``, ``v`` in place; returns the new step counter and
    the mean minibatch loss of each epoch.
    """
    grad = np.empty_like(theta)
    epochs, P = order.shape
    losses = np.empty(epochs)
    for e in range(epochs):
        total = 0.0
        for lo in range(0, P, batch):
            idx = order[e, lo:lo + batch]
            loss = loss_grad(theta, sizes, x[idx], t[idx], dw[idx], dn[idx], grad)
            total += loss * idx.size
            step += 1
            adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps, clamp)
        losses[e] = total / P
    return step, losses
