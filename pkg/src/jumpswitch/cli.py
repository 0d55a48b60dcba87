"""``jumpswitch`` command line: simulate, train, eval, compare, benchmark, heatmap.

Every subcommand writes its artifacts plus a ``manifest.json`` into ``--out``.
Failures print one line ``error category=<name> message=<text>`` to stderr
and exit with status 2.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, lsmc, models, osj, strategy
from .errors import ValidationError
from .net import TrainConfig
from .paths import load_batch, save_batch

DATASET = "paths.bin"
SOLUTION = "solution"


def _instance(args, **overrides) -> models.Instance:
    if args.config:
        cfg = models.load_config(args.config)
        cfg.update(overrides)
        return models.from_config(cfg)
    return models.preset(args.preset, **overrides)


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                       warm_start=not args.no_warm_start, clamp=args.clamp, seed=args.seed,
                       backend=args.backend, threads=args.threads)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, args, extra: dict) -> None:
    manifest = {"version": __version__, "command": args.command,
                "argv": args.argv,
                "args": {k: v for k, v in vars(args).items() if k not in ("func", "argv")}}
    manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args, out: Path):
    path = Path(args.data) if args.data else out / DATASET
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found; run `jumpswitch simulate --out "
                                f"{path.parent}` first or pass --data")
    return load_batch(path), path


def _load_solution(args, out: Path):
    """Trained solution and the instance rebuilt from its stored model config."""
    path = Path(args.solution) if args.solution else out / SOLUTION
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"trained solution {path} not found; run `jumpswitch train` "
                                "first or pass --solution")
    cfg = json.loads((path / "manifest.json").read_text())["problem_config"]
    inst = models.from_config(cfg)
    return osj.load_solution(path, inst.problem), inst


def _positive_paths(n):
    if n is None or n < 1:
        raise ValidationError(f"--paths must be a positive integer, got {n}")
    return n


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    paths = _positive_paths(args.paths)
    inst = _instance(args)
    out = _out(args)
    t0 = time.perf_counter()
    batch = inst.simulate(paths, args.seed)
    seconds = time.perf_counter() - t0
    target = out / DATASET
    save_batch(batch, target)
    _write_manifest(out, args, {"model_config": inst.config, "dataset": DATASET,
                                "shape": list(batch.states.shape), "sha256": _sha256(target),
                                "seconds": seconds})
    print(f"wrote {target} shape={batch.states.shape} sha256={_sha256(target)[:16]}")
    return 0


def cmd_train(args) -> int:
    inst = _instance(args)
    out = _out(args)
    batch, data_path = _dataset(args, out)
    cfg = _train_config(args)
    solution = osj.train_backward(inst.problem, batch, cfg)
    osj.save_solution(solution, out / SOLUTION)
    v0 = osj.values(solution, 0, inst.state0[None])[0]
    _write_manifest(out, args, {"model_config": inst.config, "dataset": str(data_path),
                                "dataset_sha256": _sha256(data_path),
                                "train_config": asdict(cfg), "train_seconds": solution.seconds,
                                "backend": solution.backend, "values": v0.tolist()})
    print("values " + " ".join(f"{v:.6f}" for v in v0) + f" seconds={solution.seconds:.1f}")
    return 0


def cmd_eval(args) -> int:
    out = _out(args)
    solution, inst = _load_solution(args, out)
    seed = args.eval_seed if args.eval_seed is not None else solution.batch_seed + 1
    batch = inst.simulate(_positive_paths(args.paths), seed)
    outcomes = [strategy.rollout(solution, batch, i, in_sample=args.in_sample)
                for i in range(inst.problem.n_modes)]
    strategy.write_outcomes_csv(out / "outcomes.csv", outcomes)
    _write_manifest(out, args, {"model_config": inst.config, "eval_seed": seed,
                                "outcomes": [o.summary() for o in outcomes]})
    for o in outcomes:
        s = o.summary()
        print(f"mode {s['mode_start']}: mean={s['mean']:.6f} stderr={s['stderr']:.6f} "
              f"switches={s['mean_switches']:.3f}")
    return 0


def cmd_compare(args) -> int:
    out = _out(args)
    solution, inst = _load_solution(args, out)
    batch, data_path = _dataset(args, out)
    ls = lsmc.fit_lsmc(inst.problem, batch, lsmc.BasisSpec(degree=args.degree))
    v = osj.values(solution, 0, inst.state0[None])[0]
    cmp = lsmc.compare(v, ls.values)
    lsmc.write_comparison_csv(out / "compare.csv", v, ls.values, cmp)
    _write_manifest(out, args, {"model_config": inst.config, "dataset": str(data_path),
                                "osj": v.tolist(), "ls": ls.values.tolist(),
                                "ls_stderr": ls.stderr.tolist(),
                                "differences": cmp.reported.tolist(), "average": cmp.average})
    for i, (a, b, d) in enumerate(zip(v, ls.values, cmp.reported)):
        print(f"mode {i + 1}: osj={a:.6f} ls={b:.6f} diff={100 * d:.3f}%")
    return 0


def linear_fit(x, y) -> dict:
    """Least-squares line with R^2; flags fits with fewer than two distinct x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.unique(x).size < 2:
        return {"slope": None, "intercept": float(y.mean()) if y.size else None, "r2": None,
                "degenerate": True}
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2, "degenerate": False}


def _dim_instance(d, lam):
    if d == 2:
        return models.preset("cl2d_lambda8", **{"lambda": lam})
    return models.build_cl(lam, d - 1)


def run_benchmark(dims, paths, cfg: TrainConfig, seed=0, ls_paths=None, lam=8.0,
                  end_to_end=False, degree=3):
    """Train the CL family at each dimension; returns rows and the runtime fit.

    Differences are measured against an LS fit of the two-dimensional problem,
    which shares its value function with every member of the family.
    """
    base = models.preset("cl2d_lambda8", **{"lambda": lam})
    ref = lsmc.fit_lsmc(base.problem, base.simulate(ls_paths or paths, seed + 1000),
                        lsmc.BasisSpec(degree=degree)).values
    rows = []
    for d in dims:
        inst = _dim_instance(int(d), lam)
        t0 = time.perf_counter()
        batch = inst.simulate(paths, seed)
        sim = time.perf_counter() - t0
        solution = osj.train_backward(inst.problem, batch, cfg)
        v = osj.values(solution, 0, inst.state0[None])[0]
        cmp = lsmc.compare(v, ref)
        seconds = solution.seconds + (sim if end_to_end else 0.0)
        rows.append({"d": int(d), "seconds": seconds, "avg_difference": cmp.average,
                     "values": v.tolist()})
        del batch, solution  # free before the next, larger dataset is simulated
    fit = linear_fit([r["d"] for r in rows], [r["seconds"] for r in rows])
    return rows, fit, ref


def cmd_benchmark(args) -> int:
    out = _out(args)
    dims = [int(d) for d in args.dims.split(",") if d]
    rows, fit, ref = run_benchmark(dims, _positive_paths(args.paths), _train_config(args),
                                   args.seed, args.ls_paths, args.lam, args.end_to_end,
                                   args.degree)
    with open(out / "benchmark.csv", "w") as fh:
        fh.write("d,seconds,avg_difference\n")
        for r in rows:
            fh.write(f"{r['d']},{r['seconds']!r},{r['avg_difference']!r}\n")
    with open(out / "fit.json", "w") as fh:
        json.dump(fit, fh, indent=1)
    _write_manifest(out, args, {"rows": rows, "fit": fit, "ls_reference": ref.tolist()})
    for r in rows:
        print(f"d={r['d']} seconds={r['seconds']:.2f} avg_diff={100 * r['avg_difference']:.3f}%")
    if fit["degenerate"]:
        print("fit degenerate: fewer than two distinct dimensions")
    else:
        print(f"fit slope={fit['slope']:.4f} intercept={fit['intercept']:.4f} r2={fit['r2']:.4f}")
    return 0


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_heatmap(args) -> int:
    out = _out(args)
    solution, inst = _load_solution(args, out)
    coords = [int(c) for c in args.axes.split(",")]
    if len(coords) != 2:
        raise ValidationError("--axes takes two comma-separated coordinates")
    try:
        ranges = [tuple(_floats(r.replace(":", ","))) for r in args.ranges.split(";")]
    except ValueError as exc:
        raise ValidationError(f"bad --ranges {args.ranges!r}") from exc
    if len(ranges) != 2 or any(len(r) != 2 for r in ranges):
        raise ValidationError("--ranges takes 'lo:hi;lo:hi'")
    base = np.array(_floats(args.base)) if args.base else inst.state0
    mode = args.mode - 1
    hm = strategy.heatmap(solution, args.step, mode, coords, ranges, base, args.resolution)
    name = f"heatmap_n{args.step}_i{args.mode}.csv"
    strategy.write_heatmap_csv(out / name, hm)
    _write_manifest(out, args, {"model_config": inst.config, "heatmap": name,
                                "fractions": {str(k + 1): hm.fraction(k)
                                              for k in range(inst.problem.n_modes)}})
    print(f"wrote {out / name}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", default="cl2d_lambda8", choices=sorted(models.PRESETS))
    common.add_argument("--config", help="JSON model config; overrides --preset")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--paths", type=int, default=None)
    common.add_argument("--epochs", type=int, default=20)
    common.add_argument("--lr", type=float, default=1e-3)
    common.add_argument("--batch-size", type=int, default=512)
    common.add_argument("--clamp", type=float, default=None)
    common.add_argument("--no-warm-start", action="store_true")
    common.add_argument("--backend", choices=["auto", "cython", "python"], default=None)
    common.add_argument("--out", default="runs/default")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--data", help="dataset file (default: <out>/paths.bin)")
    common.add_argument("--solution", help="solution directory (default: <out>/solution)")

    p = argparse.ArgumentParser(prog="jumpswitch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate and store a path dataset")
    s.set_defaults(func=cmd_simulate, paths=100_000)

    s = sub.add_parser("train", parents=[common], help="train stage networks on a dataset")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="roll the policy out on fresh paths")
    s.add_argument("--eval-seed", type=int, default=None)
    s.add_argument("--in-sample", action="store_true")
    s.set_defaults(func=cmd_eval, paths=100_000)

    s = sub.add_parser("compare", parents=[common], help="compare against regression MC")
    s.add_argument("--degree", type=int, default=3)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("benchmark", parents=[common], help="runtime and accuracy versus d")
    s.add_argument("--dims", default="2,10,20,30")
    s.add_argument("--ls-paths", type=int, default=None)
    s.add_argument("--lam", type=float, default=8.0)
    s.add_argument("--degree", type=int, default=3)
    s.add_argument("--end-to-end", action="store_true",
                   help="include path simulation in the timings")
    s.set_defaults(func=cmd_benchmark, paths=20_000)

    s = sub.add_parser("heatmap", parents=[common], help="decision grid over two coordinates")
    s.add_argument("--step", type=int, required=True)
    s.add_argument("--mode", type=int, default=1, help="incumbent mode, 1-based")
    s.add_argument("--axes", default="0,1")
    s.add_argument("--ranges", required=True, help="'lo:hi;lo:hi'")
    s.add_argument("--base", default=None, help="comma-separated state for other coordinates")
    s.add_argument("--resolution", type=int, default=50)
    s.set_defaults(func=cmd_heatmap)
    return p


def _category(exc: BaseException) -> str:
    cat = getattr(exc, "category", None)
    if cat:
        return cat
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError, OSError)):
        return "io"
    return "internal"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    if args.backend == "auto":
        args.backend = None
    try:
        return args.func(args)
    except (ValidationError, ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error category={_category(exc)} message={msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
