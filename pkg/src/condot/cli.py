"""Command-line front end: synthesize data, train, generate, evaluate.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 data error,
4 configuration error, 5 checkpoint error, 6 training diverged,
7 filesystem error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (FAMILIES, DataError, Dataset, Normalizer, SplitSpec, SyntheticFamily,
                   fingerprint, load_csv, save_csv, split, synth_generate)
from .diffnet import CheckpointError
from .metrics import MetricReport, compare, kde_curve, lipschitz_scatter
from .trainer import (ConfigError, DivergenceError, TrainConfig, ablate, generate,
                      load_state, monotone_fraction, sweep, train, write_history)

log = logging.getLogger("condot")

OUT_ROOT_ENV = "CONDOT_OUT_ROOT"
EXIT_CODES = {DataError: 3, ConfigError: 4, CheckpointError: 5, DivergenceError: 6, OSError: 7}

CHECKPOINT_NAME = "model.ckpt"
DENSITY_POINTS = 512


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ROOT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out: Path, command: str, config: dict | None, seed, inputs, outputs):
    inputs = [Path(p) for p in inputs]
    _write_json(out / "manifest.json", {
        "tool": "condot",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "dataset_fingerprint": fingerprint(inputs) if inputs else None,
        "inputs": sorted(p.name for p in inputs),
        "outputs": sorted(outputs),
    })


def load_splits(data_dir, response: str = "y") -> tuple[Dataset, Dataset, Dataset, list[Path]]:
    """``train.csv`` (+ optional ``val.csv``/``test.csv``) or a single
    ``data.csv`` split by covariate frequency."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"{data_dir}: not a directory")
    if (data_dir / "train.csv").is_file():
        files = [data_dir / "train.csv"]
        train_set = load_csv(files[0], response)
        norm = Normalizer.fit(train_set.groups, train_set.d)
        train_set = train_set.with_normalizer(norm)
        parts = []
        for name in ("val.csv", "test.csv"):
            path = data_dir / name
            if path.is_file():
                files.append(path)
                ds = load_csv(path, response)
                if ds.d != train_set.d:
                    raise DataError(f"{path}: {ds.d} covariates, train has {train_set.d}")
                parts.append(ds.with_normalizer(norm))
            else:
                parts.append(Dataset([], train_set.d, norm, train_set.columns, response))
        return train_set, parts[0], parts[1], files
    if (data_dir / "data.csv").is_file():
        path = data_dir / "data.csv"
        tr, va, te = split(load_csv(path, response), SplitSpec())
        return tr, va, te, [path]
    raise DataError(f"{data_dir}: expected train.csv or data.csv")


def _parse_params(items):
    out = {}
    for item in items or []:
        key, _, val = item.partition("=")
        if not _:
            raise ConfigError({"param": f"expected key=value, got {item!r}"})
        out[key] = float(val)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    try:
        family = SyntheticFamily(args.family, _parse_params(args.param), args.seed, args.d)
    except ValueError as exc:
        raise ConfigError({"family": str(exc)}) from None
    lo, hi = (int(v) for v in args.counts.split(","))
    splits = synth_generate(family, args.n, (lo, hi), args.n_val, args.n_test, args.eval_responses)
    out = _out_dir(args, "synth")
    outputs = ["train.csv", "oracle.json"]
    save_csv(splits.train, out / "train.csv")
    for name, ds in (("val.csv", splits.val), ("test.csv", splits.test)):
        if len(ds):
            save_csv(ds, out / name)
            outputs.append(name)
    _write_json(out / "oracle.json", family.to_dict())
    write_manifest(out, "synth", {"family": family.to_dict(), "n": args.n, "counts": [lo, hi],
                                  "n_val": args.n_val, "n_test": args.n_test,
                                  "eval_responses": args.eval_responses},
                   args.seed, [], outputs)
    print(f"wrote {', '.join(outputs)} to {out}")
    return 0


def _load_config(args) -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        over["iterations"] = args.iterations
    if over:
        config = config.replace(**over)
    return ablate(config, getattr(args, "ablation", None))


def cmd_train(args) -> int:
    config = _load_config(args)
    train_set, _, _, files = load_splits(args.data, args.response)
    out = _out_dir(args, "train")

    def progress(row):
        log.info("iter %d  fit %.6f  reg %.6f  loss %.6f", row.iteration, row.fit, row.reg, row.loss)

    problem, state, history = train(train_set, config, out / CHECKPOINT_NAME, progress)
    write_history(history, out / "history.csv")
    problem.pairs.dump(out / "pairs.json")
    write_manifest(out, "train", config.to_dict(), config.seed, files,
                   [CHECKPOINT_NAME, "history.csv", "pairs.json"])
    print(f"trained {config.iterations} iterations; checkpoint {out / CHECKPOINT_NAME}")
    return 0


def _read_covariates(args, d: int) -> np.ndarray:
    if args.x is not None:
        x = np.array([float(v) for v in args.x.split(",")])
        X = x[None, :]
    elif args.covariates:
        with open(args.covariates, newline="") as fh:
            rows = list(csv.reader(fh))
        try:
            X = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise DataError(f"{args.covariates}: {exc}") from None
    else:
        raise ConfigError({"x": "give --x or --covariates"})
    if X.ndim != 2 or X.shape[1] != d:
        raise DataError(f"covariates must have {d} columns, got shape {X.shape}")
    return X


def cmd_generate(args) -> int:
    model = load_state(args.checkpoint)
    d = model.state.gen.arch.input_dim - 1
    X = _read_covariates(args, d)
    if args.k < 1:
        raise ConfigError({"k": "must be at least 1"})
    rng = np.random.default_rng(args.seed)
    out_path = Path(args.out) if args.out else _out_dir(args, "generate") / "samples.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fractions = []
    with out_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", *[f"x{k}" for k in range(d)], "y"])
        for i, x in enumerate(X):
            ys = generate(model.state.gen, model.normalizer, x, args.k, args.mode, rng)
            if args.mode == "grid":
                fractions.append(monotone_fraction(ys))
            xs = [repr(float(v)) for v in x]
            for y in ys:
                w.writerow([i, *xs, repr(float(y))])
    if fractions:
        print(f"monotone_fraction {float(np.mean(fractions)):.6f}")
    print(f"wrote {len(X) * args.k} samples to {out_path}")
    return 0


def evaluate(model, test: Dataset, k: int, seed: int, family: SyntheticFamily | None = None,
             truth_k: int = 10_000):
    """Per-covariate comparison of generated samples against test responses
    (or, with ``family``, fresh oracle draws). Returns ``(report, dumps)``."""
    rng = np.random.default_rng(seed)
    oracle_rng = np.random.default_rng(seed + 1)
    report = MetricReport()
    dumps = []
    for g in test.groups:
        ys = generate(model.state.gen, model.normalizer, g.x, k, "iid", rng)
        truth = family.sample(g.x, truth_k, oracle_rng) if family else g.responses
        report.per_covariate.append(compare(g.x, ys, truth))
        dumps.append((ys, truth))
    return report, dumps


def cmd_eval(args) -> int:
    model = load_state(args.checkpoint)
    _, val, test, files = load_splits(args.data, args.response)
    target = test if args.split == "test" else val
    if len(target) == 0:
        raise DataError(f"{args.data}: {args.split} split is empty")
    family = None
    if args.oracle:
        family = SyntheticFamily.from_dict(json.loads(Path(args.oracle).read_text()))
        files.append(Path(args.oracle))
    report, dumps = evaluate(model, target, args.k, args.seed, family)
    out = _out_dir(args, "eval")
    _write_json(out / "report.json", report.to_json())
    dens = out / "densities"
    dens.mkdir(exist_ok=True)
    h = model.config.h * model.normalizer.y_std
    for i, (ys, truth) in enumerate(dumps):
        lo = min(ys.min(), truth.min()) - 3 * h
        hi = max(ys.max(), truth.max()) + 3 * h
        grid = np.linspace(lo, hi, DENSITY_POINTS)
        with (dens / f"covariate_{i:04d}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y", "generated", "truth"])
            for row in zip(grid, kde_curve(ys, grid, h), kde_curve(truth, grid, h)):
                w.writerow([repr(float(v)) for v in row])
    write_manifest(out, "eval", model.config.to_dict(), args.seed, files,
                   ["report.json", "densities/"])
    agg = report.aggregate()
    print(f"W2^2 {agg['w2_squared']['mean']:.6g} +- {agg['w2_squared']['std']:.6g}  "
          f"KS {agg['ks']['mean']:.4f} +- {agg['ks']['std']:.4f}")
    return 0


def expand_grid(spec) -> list[dict]:
    """A list of override objects, or an object of lists (cartesian product
    in key order)."""
    if isinstance(spec, list):
        if not all(isinstance(p, dict) for p in spec):
            raise ConfigError({"grid": "list entries must be objects"})
        return spec
    if isinstance(spec, dict):
        keys = list(spec)
        vals = [v if isinstance(v, list) else [v] for v in spec.values()]
        return [dict(zip(keys, combo)) for combo in itertools.product(*vals)]
    raise ConfigError({"grid": "must be a list of objects or an object of lists"})


def cmd_sweep(args) -> int:
    config = _load_config(args)
    train_set, val, _, files = load_splits(args.data, args.response)
    try:
        grid = expand_grid(json.loads(Path(args.grid).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError({"grid": f"invalid JSON: {exc}"}) from None
    best, rows = sweep(train_set, val, config, grid, k=args.k)
    out = _out_dir(args, "sweep")
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "overrides", "val_w2_squared"])
        for r in rows:
            w.writerow([r.index, json.dumps(r.overrides, sort_keys=True), repr(r.val_w2_squared)])
    _write_json(out / "best_config.json", best.to_dict())
    write_manifest(out, "sweep", config.to_dict(), config.seed, files + [Path(args.grid)],
                   ["sweep.csv", "best_config.json"])
    print(f"best: {json.dumps({k: getattr(best, k) for k in grid[0]}, sort_keys=True)}")
    return 0


def cmd_scatter(args) -> int:
    path = Path(args.data)
    ds = load_csv(path / "data.csv" if path.is_dir() else path, args.response)
    pts = lipschitz_scatter(ds, args.min_count)
    out = Path(args.out) if args.out else _out_dir(args, "scatter") / "scatter.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate_distance", "w2"])
        w.writerows([repr(a), repr(b)] for a, b in pts)
    print(f"{len(pts)} pairs written to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"condot {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic train/val/test dataset")
    s.add_argument("--family", choices=FAMILIES, default="heteroscedastic-sine")
    s.add_argument("--n", type=int, default=20_000, help="train covariates")
    s.add_argument("--counts", default="1,1", help="train responses per covariate, lo,hi")
    s.add_argument("--n-val", type=int, default=200)
    s.add_argument("--n-test", type=int, default=200)
    s.add_argument("--eval-responses", type=int, default=1000)
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--param", action="append", help="family parameter key=value")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    def common_train(sp):
        sp.add_argument("--config")
        sp.add_argument("--data", required=True)
        sp.add_argument("--response", default="y")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--ablation", choices=["no-reg", "no-smooth"])
        sp.add_argument("--out")

    t = sub.add_parser("train", help="train a model")
    common_train(t)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample from a trained model")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--x", help="comma-separated covariate vector")
    g.add_argument("--covariates", help="CSV of covariates (header row)")
    g.add_argument("--k", type=int, default=10_000)
    g.add_argument("--mode", choices=["iid", "grid"], default="iid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="metrics on the test (or validation) split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--response", default="y")
    e.add_argument("--split", choices=["test", "val"], default="test")
    e.add_argument("--oracle", help="oracle.json from synth; compares against fresh oracle draws")
    e.add_argument("--k", type=int, default=10_000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="grid search by validation W2^2")
    common_train(w)
    w.add_argument("--grid", required=True, help="JSON grid of config overrides")
    w.add_argument("--k", type=int, default=1000)
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("scatter", help="covariate distance vs response W2 for well-sampled pairs")
    c.add_argument("--data", required=True)
    c.add_argument("--response", default="y")
    c.add_argument("--min-count", type=int, default=18)
    c.add_argument("--out")
    c.set_defaults(func=cmd_scatter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except tuple(EXIT_CODES) as exc:
        code = next(c for cls, c in EXIT_CODES.items() if isinstance(exc, cls))
        print(f"error: {exc}", file=sys.stderr)
        return code
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"error: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
