import numpy as np
import pytest

from jumpswitch import _kernel_py
from jumpswitch._backend import get_backend
from jumpswitch.net import architecture, init_params

compiled = pytest.importorskip("jumpswitch._kernel")


def setup(d, B, seed=0):
    sizes = np.asarray(architecture(d), dtype=np.int64)
    theta = init_params(tuple(sizes), seed).theta
    theta += np.random.default_rng(seed).normal(0, 0.2, theta.size)
    rng = np.random.default_rng(seed + 1)
    return (theta, sizes, rng.normal(size=(B, d)), rng.normal(size=B),
            rng.normal(size=(B, d)), rng.normal(size=B))


def test_selection(monkeypatch):
    assert get_backend("python") is _kernel_py
    assert get_backend("cython") is compiled
    monkeypatch.setenv("JUMPSWITCH_BACKEND", "python")
    assert get_backend() is _kernel_py


def test_tanh_accuracy():
    x = np.concatenate([np.linspace(-30, 30, 200_001), [0.0, -0.0, 1e-300, 0.625, 0.6250001,
                                                         710.0, -710.0]])
    ref = np.tanh(x)
    got = compiled.tanh(x)
    rel = np.abs(got - ref) / np.maximum(np.abs(ref), np.finfo(float).tiny)
    assert rel.max() <= 4 * np.finfo(float).eps
    assert np.all(np.abs(got) <= 1.0)
    assert np.isnan(compiled.tanh(np.array([np.nan]))[0])
    assert compiled.tanh(np.array([np.inf, -np.inf])).tolist() == [1.0, -1.0]


@pytest.mark.parametrize("d,B", [(1, 1), (2, 7), (9, 64), (30, 33)])
def test_forward_and_gradient_parity(d, B):
    theta, sizes, x, t, dw, dn = setup(d, B)
    np.testing.assert_allclose(compiled.forward(theta, sizes, x),
                               _kernel_py.forward(theta, sizes, x), rtol=1e-12, atol=1e-13)
    g1, g2 = np.empty_like(theta), np.empty_like(theta)
    l1 = compiled.loss_grad(theta, sizes, x, t, dw, dn, g1)
    l2 = _kernel_py.loss_grad(theta, sizes, x, t, dw, dn, g2)
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("clamp", [0.0, 0.3])
def test_training_parity(clamp):
    theta, sizes, x, t, dw, dn = setup(3, 1000, seed=4)
    order = np.stack([np.random.default_rng(k).permutation(1000) for k in range(3)])
    out = []
    for k in (compiled, _kernel_py):
        th = theta.copy()
        m, v = np.zeros_like(th), np.zeros_like(th)
        step, losses = k.train_epochs(th, sizes, x, t, dw, dn, order, 128, 1e-3, 0.9, 0.999,
                                      1e-8, clamp, m, v, 0)
        out.append((step, np.asarray(losses), th))
    assert out[0][0] == out[1][0] == 3 * 8
    np.testing.assert_allclose(out[0][1], out[1][1], rtol=1e-10)
    np.testing.assert_allclose(out[0][2], out[1][2], rtol=1e-9, atol=1e-12)


def test_adam_parity():
    rng = np.random.default_rng(0)
    th = rng.normal(size=50)
    g = rng.normal(size=50)
    res = []
    for k in (compiled, _kernel_py):
        a, m, v = th.copy(), np.zeros(50), np.zeros(50)
        for s in range(1, 4):
            k.adam_update(a, g * s, m, v, s, 0.01, 0.9, 0.999, 1e-8, 0.5)
        res.append(a)
    np.testing.assert_allclose(res[0], res[1], rtol=1e-14)
    assert np.abs(res[0]).max() <= 0.5
