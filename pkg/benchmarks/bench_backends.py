"""Compare the compiled kernel with the numpy fallback.

Times a forward pass, one loss/gradient evaluation and one training epoch at
several input dimensions, and checks that both backends agree on the result.

    python benchmarks/bench_backends.py --dims 2,10,30 --batch 20000
"""
import argparse
import time

import numpy as np

from jumpswitch import _kernel_py
from jumpswitch.net import architecture, init_params

try:
    from jumpswitch import _kernel
except ImportError:
    _kernel = None


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def case(d, P, minibatch, repeats, seed=0):
    sizes = np.asarray(architecture(d), dtype=np.int64)
    theta0 = init_params(tuple(int(s) for s in sizes), seed).theta
    rng = np.random.default_rng(seed)
    x, t = rng.normal(size=(P, d)), rng.normal(size=P)
    dw, dn = rng.normal(size=(P, d)), rng.normal(size=P)
    order = rng.permutation(P)[None]
    rows = {}
    for name, k in (("numpy", _kernel_py), ("compiled", _kernel)):
        if k is None:
            continue
        grad = np.empty_like(theta0)

        def epoch():
            th = theta0.copy()
            m, v = np.zeros_like(th), np.zeros_like(th)
            k.train_epochs(th, sizes, x, t, dw, dn, order, minibatch, 1e-3, 0.9, 0.999, 1e-8,
                           0.0, m, v, 0)
            return th

        rows[name] = {
            "forward": best_of(lambda: k.forward(theta0, sizes, x), repeats),
            "loss_grad": best_of(lambda: k.loss_grad(theta0, sizes, x, t, dw, dn, grad), repeats),
            "epoch": best_of(epoch, repeats),
            "theta": epoch(),
        }
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dims", default="2,10,30")
    p.add_argument("--batch", type=int, default=20_000, help="rows per evaluation")
    p.add_argument("--minibatch", type=int, default=512)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)
    if _kernel is None:
        print("compiled kernel not built; timing the numpy backend only")
    print(f"{'d':>3} {'op':>10} {'numpy s':>10} {'compiled s':>11} {'speedup':>8}")
    for d in (int(v) for v in args.dims.split(",")):
        rows = case(d, args.batch, args.minibatch, args.repeats)
        for op in ("forward", "loss_grad", "epoch"):
            a = rows["numpy"][op]
            b = rows.get("compiled", {}).get(op, np.nan)
            print(f"{d:>3} {op:>10} {a:>10.4f} {b:>11.4f} {a / b:>8.2f}")
        if "compiled" in rows:
            diff = np.max(np.abs(rows["numpy"]["theta"] - rows["compiled"]["theta"]))
            print(f"{d:>3} {'parity':>10} max |theta difference| after one epoch = {diff:.2e}")


if __name__ == "__main__":
    main()
