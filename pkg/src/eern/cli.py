"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 validation or check failure,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from ._util import DivergenceError, rmse
from .checks import run_all
from .cmtf import dump_factors, fit_ccpf, fit_ctkf, reconstruct
from .model import FactorizedAutoencoder, dump_codes
from .oracle import block_distinct_counts, class_matrix, write_pgm
from .relstore import DataError, RelInstance, ingest_csv, read_mask_csv, write_csv, write_mask_csv
from .schema import EXAMPLE_SCHEMA, Schema, SchemaError, load_schema, parse_schema
from .synthgen import SynthConfig, generate, heldout_split, sparsify
from .tying import num_free_params

METRIC_FIELDS = ["run_id", "method", "mode", "sparsity", "seed", "train_rmse", "test_rmse", "seconds"]


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- manifest ---------------------------------------------------------------
@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    version: str = __version__

    def write(self, out: str) -> str:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "manifest.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
        return path


def read_manifest(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_metrics(rows: list[dict], path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_metrics(path: str) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- argument helpers -------------------------------------------------------
def _floats(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return vals


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _sparsity(vals: tuple):
    if len(vals) == 1:
        return vals[0]
    if len(vals) != 3:
        raise UsageError("--sparsity takes one level or three (one per relation)")
    return vals


def _schema_from(args) -> Schema:
    return load_schema(args.schema) if args.schema else parse_schema(EXAMPLE_SCHEMA)


# -- data directories -------------------------------------------------------
def save_data_dir(out: str, x: RelInstance, train: list, test: list) -> dict:
    """Schema, full value tables and train/test mask files."""
    os.makedirs(out, exist_ok=True)
    s = x.schema
    files = {"schema": os.path.join(out, "schema.txt")}
    with open(files["schema"], "w") as fh:
        fh.write(s.render())
    for i, rel in enumerate(s.relations):
        for kind, masks in (("data", x.masks), ("train", train), ("test", test)):
            path = os.path.join(out, f"{rel.name}.csv" if kind == "data" else f"{kind}_{rel.name}.csv")
            with open(path, "w") as fh:
                if kind == "data":
                    write_csv(s, i, x.values[i], masks[i], fh)
                else:
                    write_mask_csv(s, i, masks[i], fh)
            files[f"{kind}:{rel.name}"] = path
    return files


def load_data_dir(path: str, schema_path: str | None = None):
    """``(instance, train masks, test masks, data manifest or {})``.

    Without mask files every observed entry is training data.
    """
    schema = load_schema(schema_path or os.path.join(path, "schema.txt"))
    tensors, train, test = [], [], []
    for i, rel in enumerate(schema.relations):
        with open(os.path.join(path, f"{rel.name}.csv")) as fh:
            tensors.append(ingest_csv(schema, i, fh))
        obs = tensors[-1].mask
        for kind, out, default in (("train", train, obs), ("test", test, np.zeros_like(obs))):
            f = os.path.join(path, f"{kind}_{rel.name}.csv")
            if os.path.exists(f):
                with open(f) as fh:
                    m = read_mask_csv(schema, i, fh)
                if (m & ~obs).any():
                    raise DataError(f"{f}: mask marks entries with no data")
                out.append(m)
            else:
                out.append(default)
        if (train[-1] & test[-1]).any():
            raise DataError(f"relation {rel.name!r}: train and test masks overlap")
    meta_path = os.path.join(path, "manifest.json")
    meta = read_manifest(meta_path) if os.path.exists(meta_path) else {}
    return RelInstance.from_sparse(schema, tensors), train, test, meta


def _data_labels(meta: dict) -> tuple[str, str]:
    cfg = meta.get("config", {})
    sp = cfg.get("sparsity", "")
    sp = ";".join(repr(v) for v in sp) if isinstance(sp, list) else sp
    return cfg.get("mode", ""), sp


def _write_predictions(path: str, schema: Schema, i: int, pred: np.ndarray) -> None:
    with open(path, "w") as fh:
        write_csv(schema, i, pred[..., None], np.ones(pred.shape, dtype=bool), fh)


# -- model construction -----------------------------------------------------
def _eern(args, seed: int, target) -> FactorizedAutoencoder:
    widths = (args.width,) * args.layers
    return FactorizedAutoencoder(target=target, encoder_widths=widths, code_dim=args.h_code,
                                 decoder_widths=widths, pool=args.pool, lr=args.lr,
                                 epochs=args.epochs, dropout=args.dropout,
                                 input_mask=args.input_mask, seed=seed)


def _fit_eern(args, x: RelInstance, train: list, seed: int, target: int):
    t = time.perf_counter()
    m = _eern(args, seed, target).fit(x.with_masks(train))
    return m, time.perf_counter() - t


def _fit_cmtf(args, method: str, x: RelInstance, train: list, seed: int):
    fit = fit_ccpf if method == "cp" else fit_ctkf
    t = time.perf_counter()
    f = fit(x.with_masks(train), rank=args.rank, iters=args.cmtf_iters, lr=args.cmtf_lr,
            seed=seed, optimizer=args.cmtf_optimizer, zero_fill=args.cmtf_zero_fill)
    return f, time.perf_counter() - t


CMTF_NAMES = {"cp": "C-CPF", "tucker": "C-TKF"}


# -- commands ---------------------------------------------------------------
def cmd_schema_check(args, manifest: RunManifest) -> int:
    s = _schema_from(args)
    R = range(s.n_relations)
    print(f"entities: {', '.join(f'{e.name}={e.count}' for e in s.entities)}")
    for r in s.relations:
        names = " ".join(s.entities[d - 1].name for d in r.members)
        print(f"relation {r.name}: {names}{'' if r.is_set else ' (repeated entity)'}")
    print(f"N = {s.total_size}")
    counts = {f"{s.relations[i].name},{s.relations[j].name}": num_free_params(s, i, j) for i in R for j in R}
    for k, v in counts.items():
        print(f"block {k}: {v} free parameters")
    print(f"total free parameters per channel pair: {sum(counts.values())}")
    manifest.metrics = {"N": s.total_size, "blocks": counts}
    return 0


def cmd_pattern(args, manifest: RunManifest) -> int:
    s = _schema_from(args)
    cm = class_matrix(s)
    path = args.out if args.out.endswith(".pgm") else os.path.join(args.out, "pattern.pgm")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        write_pgm(cm, fh)
    distinct = block_distinct_counts(cm, s)
    bad = 0
    print(f"wrote {cm.shape[0]}x{cm.shape[1]} pattern to {path}")
    for (i, j), n in distinct.items():
        want = num_free_params(s, i, j)
        bad += n != want
        print(f"block {s.relations[i].name},{s.relations[j].name}: {n} distinct values (expected {want})")
    manifest.outputs = {"pgm": path}
    manifest.metrics = {"size": cm.shape[0],
                        "distinct": {f"{i + 1},{j + 1}": n for (i, j), n in distinct.items()}}
    if bad:
        raise CheckFailed(f"{bad} blocks disagree with the parameter count")
    return 0


def cmd_check_equivariance(args, manifest: RunManifest) -> int:
    s = _schema_from(args)
    results = run_all(s, args.trials, args.seed, args.break_tying)
    for r in results:
        print(r.line())
    manifest.metrics = {r.name: {"passed": r.passed, "detail": r.detail} for r in results}
    if not all(r.passed for r in results):
        raise CheckFailed("one or more equivariance checks failed")
    return 0


def cmd_gen(args, manifest: RunManifest) -> int:
    cfg = SynthConfig(sizes=args.sizes, h=args.latent_dim, mode=args.mode,
                      sparsity=_sparsity(args.sparsity), min_per_line=args.min_per_line, seed=args.seed)
    x, truth = generate(cfg)
    train, test = sparsify(x, cfg, target=0)
    manifest.outputs = save_data_dir(args.out, x, train, test)
    manifest.config.update(sizes=list(cfg.sizes), mode=cfg.mode, sparsity=cfg.sparsity
                           if isinstance(cfg.sparsity, float) else list(cfg.sparsity))
    manifest.metrics = {"observed": {r.name: int(m.sum()) for r, m in zip(x.schema.relations, train)},
                        "test": int(test[0].sum())}
    print(f"wrote synthetic data to {args.out}")
    return 0


def cmd_train_eern(args, manifest: RunManifest) -> int:
    x, train, test, meta = load_data_dir(args.data_dir, args.schema)
    s = x.schema
    t = s.relation_index(args.target_relation)
    m, secs = _fit_eern(args, x, train, args.seed, t)
    pred = m.predict(x.with_masks(train))
    truth = x.values[t][..., 0]
    tr, te = rmse(pred, truth, train[t]), rmse(pred, truth, test[t])
    os.makedirs(args.out, exist_ok=True)
    m.save(os.path.join(args.out, "checkpoint"))
    _write_predictions(os.path.join(args.out, "predictions.csv"), s, t, pred)
    with open(os.path.join(args.out, "codes.csv"), "w") as fh:
        dump_codes(m, x.with_masks(train), fh)
    mode, sp = _data_labels(meta)
    row = dict(run_id=f"eern-s{args.seed}", method="EERN", mode=mode, sparsity=sp, seed=args.seed,
               train_rmse=tr, test_rmse=te, seconds=round(secs, 3))
    write_metrics([row], os.path.join(args.out, "metrics.csv"))
    manifest.inputs = {"data_dir": args.data_dir}
    manifest.outputs = {k: os.path.join(args.out, v) for k, v in
                        (("checkpoint", "checkpoint"), ("predictions", "predictions.csv"),
                         ("codes", "codes.csv"), ("metrics", "metrics.csv"))}
    manifest.metrics = {"train_rmse": tr, "test_rmse": te, "final_loss": m.history_[-1] if m.history_ else None,
                        "n_params": sum(p.size for p in m._params())}
    print(f"EERN train RMSE {tr:.4f} test RMSE {te:.4f} ({secs:.1f}s)")
    return 0


def cmd_train_cmtf(args, manifest: RunManifest) -> int:
    x, train, test, meta = load_data_dir(args.data_dir, args.schema)
    s = x.schema
    t = s.relation_index(args.target_relation)
    mode, sp = _data_labels(meta)
    methods = ("cp", "tucker") if args.method == "both" else (args.method,)
    rows = []
    os.makedirs(args.out, exist_ok=True)
    for method in methods:
        f, secs = _fit_cmtf(args, method, x, train, args.seed)
        pred = reconstruct(f, s, t)
        truth = x.values[t][..., 0]
        tr, te = rmse(pred, truth, train[t]), rmse(pred, truth, test[t])
        _write_predictions(os.path.join(args.out, f"predictions_{method}.csv"), s, t, pred)
        dump_factors(f, s, os.path.join(args.out, f"factors_{method}"))
        rows.append(dict(run_id=f"{method}-s{args.seed}", method=CMTF_NAMES[method], mode=mode, sparsity=sp,
                         seed=args.seed, train_rmse=tr, test_rmse=te, seconds=round(secs, 3)))
        manifest.metrics[CMTF_NAMES[method]] = {"train_rmse": tr, "test_rmse": te}
        print(f"{CMTF_NAMES[method]} train RMSE {tr:.4f} test RMSE {te:.4f} ({secs:.1f}s)")
    write_metrics(rows, os.path.join(args.out, "metrics.csv"))
    manifest.inputs = {"data_dir": args.data_dir}
    manifest.outputs = {"metrics": os.path.join(args.out, "metrics.csv")}
    return 0


def read_predictions(path: str, schema: Schema, relation: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        sp = ingest_csv(schema, relation, fh)
    return sp.to_dense()[..., 0], sp.mask


def cmd_eval(args, manifest: RunManifest) -> int:
    x, train, test, _ = load_data_dir(args.data_dir, args.schema)
    t = x.schema.relation_index(args.target_relation)
    pred, have = read_predictions(args.predictions, x.schema, t)
    if (test[t] & ~have).any():
        raise DataError("predictions do not cover every test entry")
    truth = x.values[t][..., 0]
    te = rmse(pred, truth, test[t])
    tr = rmse(pred, truth, train[t] & have)
    manifest.inputs = {"data_dir": args.data_dir, "predictions": args.predictions}
    manifest.metrics = {"train_rmse": tr, "test_rmse": te}
    print(f"test RMSE {te:.6g}")
    return 0


def _synth(args, seed: int, sparsity=None, sizes=None):
    cfg = SynthConfig(sizes=sizes or args.sizes, h=args.latent_dim, mode=args.mode,
                      sparsity=sparsity if sparsity is not None else _sparsity(args.sparsity),
                      min_per_line=args.min_per_line, seed=seed)
    x, _ = generate(cfg)
    return cfg, x


def run_table1(args, seeds) -> list[dict]:
    """EERN, C-CPF and C-TKF on the same generated instance per seed."""
    rows = []
    for seed in seeds:
        cfg, x = _synth(args, seed)
        train, test = sparsify(x, cfg, target=0)
        sp = repr(cfg.sparsity) if isinstance(cfg.sparsity, float) else ";".join(map(repr, cfg.sparsity))
        truth = x.values[0][..., 0]
        m, secs = _fit_eern(args, x, train, seed, 0)
        pred = m.predict(x.with_masks(train))
        rows.append(dict(run_id=f"table1-eern-s{seed}", method="EERN", mode=args.mode, sparsity=sp, seed=seed,
                         train_rmse=rmse(pred, truth, train[0]), test_rmse=rmse(pred, truth, test[0]),
                         seconds=round(secs, 3)))
        for method in ("cp", "tucker"):
            f, secs = _fit_cmtf(args, method, x, train, seed)
            pred = reconstruct(f, x.schema, 0)
            rows.append(dict(run_id=f"table1-{method}-s{seed}", method=CMTF_NAMES[method], mode=args.mode,
                             sparsity=sp, seed=seed, train_rmse=rmse(pred, truth, train[0]),
                             test_rmse=rmse(pred, truth, test[0]), seconds=round(secs, 3)))
        if args.verbose:
            print(" ".join(f"{r['method']}={r['test_rmse']:.4f}" for r in rows[-3:]), f"(seed {seed})")
    return rows


def summarize(rows: list[dict], key: str = "method") -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(r[key], []).append(float(r["test_rmse"]))
    return {k: float(np.mean(v)) for k, v in out.items()}


def cmd_table1(args, manifest: RunManifest) -> int:
    seeds = range(args.seed, args.seed + args.trials)
    rows = run_table1(args, seeds)
    path = os.path.join(args.out, "metrics.csv")
    write_metrics(rows, path)
    means = summarize(rows)
    for k, v in means.items():
        print(f"{k}: mean test RMSE {v:.4f}")
    manifest.outputs = {"metrics": path}
    manifest.metrics = {"mean_test_rmse": means, "runs": {r["run_id"]: r["test_rmse"] for r in rows}}
    return 0


def run_sweep(args, seeds, levels) -> list[dict]:
    """Train at each nested level, evaluate with every level given at test time.

    Returns grid rows ``seed, train_level, test_level, rmse, baseline`` where
    the baseline predicts the mean of the training observations.
    """
    rows = []
    for seed in seeds:
        _, x = _synth(args, seed, sparsity=1.0)
        split = heldout_split(x, target=0, fraction=args.holdout, seed=seed)
        truth = x.values[0][..., 0]
        for a in levels:
            train = split.train_masks(a)
            m = _eern(args, seed, 0)
            t = time.perf_counter()
            m.fit(x.with_masks(train))
            secs = time.perf_counter() - t
            base = float(truth[train[0]].mean())
            for b in levels:
                pred = m.predict(x.with_masks(split.train_masks(b)))
                rows.append(dict(seed=seed, train_level=a, test_level=b,
                                 rmse=rmse(pred, truth, split.test_mask),
                                 train_rmse=rmse(pred, truth, train[0]),
                                 baseline=rmse(np.full_like(truth, base), truth, split.test_mask),
                                 seconds=round(secs, 3)))
    return rows


def cmd_sweep(args, manifest: RunManifest) -> int:
    seeds = range(args.seed, args.seed + args.trials)
    rows = run_sweep(args, seeds, args.levels)
    os.makedirs(args.out, exist_ok=True)
    grid = os.path.join(args.out, "grid.csv")
    with open(grid, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train_level", "test_level", "mean_rmse", "mean_baseline"])
        for a in args.levels:
            for b in args.levels:
                sel = [r for r in rows if r["train_level"] == a and r["test_level"] == b]
                w.writerow([a, b, repr(float(np.mean([r["rmse"] for r in sel]))),
                            repr(float(np.mean([r["baseline"] for r in sel])))])
    metrics = [dict(run_id=f"sweep-s{r['seed']}-train{r['train_level']}-test{r['test_level']}", method="EERN",
                    mode=args.mode, sparsity=repr(r["train_level"]), seed=r["seed"], train_rmse=r["train_rmse"],
                    test_rmse=r["rmse"], seconds=r["seconds"]) for r in rows]
    write_metrics(metrics, os.path.join(args.out, "metrics.csv"))
    manifest.outputs = {"grid": grid, "metrics": os.path.join(args.out, "metrics.csv")}
    manifest.metrics = {"grid": {f"{r['seed']}:{r['train_level']}:{r['test_level']}": r["rmse"] for r in rows}}
    print(f"wrote {len(args.levels)}x{len(args.levels)} grid to {grid}")
    return 0


def run_side_info(args, seeds, side_levels) -> dict:
    """``{level: (mean test RMSE, per-seed runs)}`` with the target level fixed."""
    out = {}
    for lvl in side_levels:
        runs = []
        for seed in seeds:
            cfg, x = _synth(args, seed, sparsity=(args.target_level, lvl, lvl))
            train, test = sparsify(x, cfg, target=0)
            m, secs = _fit_eern(args, x, train, seed, 0)
            xt = x.with_masks(train)
            runs.append(dict(seed=seed, train_rmse=m.rmse(xt, train[0]), test_rmse=m.rmse(xt, test[0]),
                             seconds=secs))
        out[lvl] = (float(np.mean([r["test_rmse"] for r in runs])), runs)
    return out


def inversions(values) -> int:
    return sum(b > a for a, b in zip(values[:-1], values[1:]))


def cmd_side_info(args, manifest: RunManifest) -> int:
    seeds = range(args.seed, args.seed + args.trials)
    res = run_side_info(args, seeds, args.side_levels)
    os.makedirs(args.out, exist_ok=True)
    rows = [dict(run_id=f"side-{lvl}-s{r['seed']}", method="EERN", mode=args.mode,
                 sparsity=f"{args.target_level!r};{lvl!r};{lvl!r}", **r)
            for lvl, (_, runs) in res.items() for r in runs]
    write_metrics(rows, os.path.join(args.out, "metrics.csv"))
    means = [res[lvl][0] for lvl in args.side_levels]
    for lvl, mu in zip(args.side_levels, means):
        print(f"side level {lvl}: mean test RMSE {mu:.4f}")
    inv = inversions(means)
    print(f"inversions in the trend: {inv}")
    manifest.outputs = {"metrics": os.path.join(args.out, "metrics.csv")}
    manifest.metrics = {"mean_test_rmse": {repr(k): v[0] for k, v in res.items()}, "inversions": inv}
    return 0


def run_inductive(args, seed: int) -> dict:
    """Train on one instantiation, apply unchanged to a fresh, larger one."""
    cfg, x = _synth(args, seed)
    train, _ = sparsify(x, cfg, target=0)
    m, secs = _fit_eern(args, x, train, seed, 0)
    cfg2, x2 = _synth(args, seed + 10_000, sizes=args.eval_sizes)
    train2, test2 = sparsify(x2, cfg2, target=0)
    truth = x2.values[0][..., 0]
    pred = m.predict(x2.with_masks(train2))
    base = float(truth[train2[0]].mean())
    return {"test_rmse": rmse(pred, truth, test2[0]),
            "baseline_rmse": rmse(np.full_like(truth, base), truth, test2[0]),
            "train_seconds": secs}


def cmd_inductive(args, manifest: RunManifest) -> int:
    res = run_inductive(args, args.seed)
    print(f"fresh instance {tuple(args.eval_sizes)}: EERN test RMSE {res['test_rmse']:.4f}, "
          f"mean baseline {res['baseline_rmse']:.4f}")
    manifest.metrics = {k: res[k] for k in ("test_rmse", "baseline_rmse")}
    return 0


def cmd_replay(args, manifest: RunManifest) -> int:
    """Re-run a recorded command and compare its metrics exactly."""
    old = read_manifest(args.manifest)
    argv = list(old["argv"])
    with tempfile.TemporaryDirectory() as tmp:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = os.path.join(tmp, "out")
        code = main(argv)
        new = read_manifest(os.path.join(tmp, "out", "manifest.json")) if "--out" in argv else None
    if code != 0:
        raise CheckFailed(f"replayed command exited with {code}")
    if new is None:
        print("command records no output directory; nothing to compare")
        return 0
    same = new["metrics"] == old["metrics"]
    print("metrics identical" if same else "metrics differ")
    manifest.metrics = {"identical": same}
    if not same:
        raise CheckFailed("replayed metrics differ from the manifest")
    return 0


# -- parser -----------------------------------------------------------------
def _add_schema(p, data_dir=False):
    default = "schema.txt in the data directory" if data_dir else "built-in student/course/prof example"
    p.add_argument("--schema", help=f"schema file (default: {default})")


def _add_synth(p, sparsity="0.5"):
    p.add_argument("--mode", choices=("cp", "tucker"), default="cp", help="generating factor model")
    p.add_argument("--sparsity", type=_floats, default=_floats(sparsity),
                   help="observed fraction, one value or one per relation")
    p.add_argument("--sizes", type=_ints, default=(50, 50, 50), help="instances per entity")
    p.add_argument("--latent-dim", type=int, default=2, help="latent dimension of the generator")
    p.add_argument("--min-per-line", type=int, default=5, help="minimum observations per row/column")


def _add_eern(p):
    p.add_argument("--h-code", type=int, default=10, help="entity code dimension")
    p.add_argument("--layers", type=int, default=3, help="hidden layers in encoder and decoder")
    p.add_argument("--width", type=int, default=16, help="channels per hidden layer")
    p.add_argument("--epochs", type=int, default=1500)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--pool", choices=("sum", "mean"), default="mean")
    p.add_argument("--dropout", type=float, default=0.0, help="channel dropout rate for hidden layers")
    p.add_argument("--input-mask", type=float, default=0.0,
                   help="fraction of observed inputs hidden from the encoder each epoch")


def _add_cmtf(p):
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--cmtf-iters", type=int, default=2000)
    p.add_argument("--cmtf-lr", type=float, default=10.0)
    p.add_argument("--cmtf-optimizer", choices=("gd", "adam"), default="gd")
    p.add_argument("--cmtf-zero-fill", action="store_true",
                   help="treat unobserved entries as zeros in the baseline loss")


def _add_common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="eern", description="Equivariant layers for relational data.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schema-check", help="validate a schema and list parameter counts")
    _add_schema(p)
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_schema_check)

    p = sub.add_parser("pattern", help="write the tying pattern as a PGM image")
    _add_schema(p)
    _add_common(p)
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("check-equivariance", help="run the numerical equivariance suites")
    _add_schema(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--break-tying", action="store_true", help="corrupt one weight (negative control)")
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_check_equivariance)

    p = sub.add_parser("gen", help="generate synthetic student/course/prof data")
    _add_synth(p)
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    for name, func, adder in (("train-eern", cmd_train_eern, _add_eern), ("train-cmtf", cmd_train_cmtf, _add_cmtf)):
        p = sub.add_parser(name, help=f"fit {'the auto-encoder' if adder is _add_eern else 'coupled factorization'}")
        _add_schema(p, data_dir=True)
        p.add_argument("--data-dir", required=True)
        p.add_argument("--target-relation", default="1", help="relation name or 1-based number")
        adder(p)
        if adder is _add_cmtf:
            p.add_argument("--method", choices=("cp", "tucker", "both"), default="both")
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="RMSE of a predictions CSV on the test entries")
    _add_schema(p, data_dir=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--target-relation", default="1")
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("table1", help="EERN vs C-CPF vs C-TKF on generated data over several seeds")
    _add_synth(p)
    _add_eern(p)
    _add_cmtf(p)
    p.add_argument("--trials", type=int, default=3, help="number of seeds")
    _add_common(p)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("sweep", help="train/test sparsity grid on a fixed held-out set")
    _add_synth(p)
    _add_eern(p)
    p.add_argument("--levels", type=_floats, default=(0.1, 0.3, 0.5, 0.7, 0.9))
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("side-info", help="vary side-table observation with the target fixed")
    _add_synth(p)
    _add_eern(p)
    p.add_argument("--target-level", type=float, default=0.1)
    p.add_argument("--side-levels", type=_floats, default=(0.05, 0.1, 0.2, 0.35, 0.5))
    p.add_argument("--trials", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_side_info, min_per_line=1)

    p = sub.add_parser("inductive", help="train on one instance, evaluate on a fresh larger one")
    _add_synth(p)
    _add_eern(p)
    p.add_argument("--eval-sizes", type=_ints, default=(70, 70, 70))
    _add_common(p)
    p.set_defaults(func=cmd_inductive)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest and compare metrics")
    p.add_argument("manifest")
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_replay)
    return ap


def _target(value: str):
    return int(value) - 1 if value.isdigit() else value


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if hasattr(args, "target_relation"):
        args.target_relation = _target(args.target_relation)
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "func"}
    manifest = RunManifest(args.command, argv, config, getattr(args, "seed", None))
    t = time.perf_counter()
    try:
        code = args.func(args, manifest)
    except UsageError as exc:
        print(f"eern: error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"eern: diverged: {exc}", file=sys.stderr)
        return 3
    except CheckFailed as exc:
        print(f"eern: check failed: {exc}", file=sys.stderr)
        code = 2
    except (SchemaError, DataError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"eern: invalid input: {exc}", file=sys.stderr)
        return 2
    manifest.seconds = round(time.perf_counter() - t, 3)
    if getattr(args, "out", None) and args.command != "replay":
        out = os.path.dirname(args.out) if args.out.endswith(".pgm") else args.out
        manifest.write(out or ".")
    return code


if __name__ == "__main__":
    sys.exit(main())
