"""Command line entry point: ``ctp {gen-data,train,eval,ablate}``.

Exit codes: 0 success, 2 usage or config error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import continual
from .config import RunConfig, load_config
from .data import generate, load_tasks, save_tasks
from .errors import ConfigError, CTPError
from .nn import load_expert, save_expert
from .router import RouterConfig, noise_percentiles, write_reports
from .svg import write_chart

MANIFEST = "manifest.json"
REGISTRY_FORMAT = "ctp-registry"


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths) -> str:
    """Hash over ``name blobhash`` lines of the given files, in name order."""
    lines = sorted(f"{Path(p).name} {git_blob_hash(Path(p).read_bytes())}" for p in paths)
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()


def _thread_count():
    raw = os.environ.get("CTP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CTP_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


def _pmap(fn, items):
    items = list(items)
    n = min(_thread_count(), len(items)) or 1
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _load_run_config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _materialize_data(cfg: RunConfig, out: Path) -> Path:
    """Return a directory holding task CSVs, generating the synthetic suite if needed."""
    if cfg.data_dir is not None:
        if not cfg.data_dir.is_dir():
            raise ConfigError(f"[data] dir: {cfg.data_dir} does not exist")
        return cfg.data_dir
    data_dir = out / "data"
    train, test = generate(cfg.synthetic)
    save_tasks(train + test, data_dir)
    return data_dir


def _data_files(data_dir: Path):
    return sorted(p for p in data_dir.iterdir() if p.suffix == ".csv")


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args):
    cfg = _load_run_config(args.config)
    spec = cfg.synthetic if args.seed is None else replace(cfg.synthetic, seed=args.seed)
    out = Path(args.out)
    train, test = generate(spec)
    paths = save_tasks(train + test, out)
    print(f"wrote {len(paths)} files to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def train_registries(cfg: RunConfig, data_dir: Path, out: Path, seeds):
    train_tasks = load_tasks(data_dir, "train")
    out.mkdir(parents=True, exist_ok=True)

    def one(seed):
        reg = continual.sequential_train(train_tasks, replace(cfg.train, seed=seed))
        folder = out / f"seed{seed}"
        folder.mkdir(exist_ok=True)
        files = []
        for e in reg:
            name = f"expert{e.task_id}.json"
            save_expert(e, folder / name)
            files.append(f"seed{seed}/{name}")
        return seed, reg, files

    results = _pmap(one, seeds)
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "task_id", "epoch", "loss"])
        for seed, reg, _ in results:
            for e in reg:
                for epoch, loss in enumerate(e.loss_history):
                    w.writerow([seed, e.task_id, epoch, repr(loss)])
    manifest = {
        "format": REGISTRY_FORMAT,
        "version": 1,
        "method": "ctp" if cfg.train.loss_kind == "dismax" else "ctp_ce",
        "loss_kind": cfg.train.loss_kind,
        "seeds": list(seeds),
        "train": {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in asdict(cfg.train).items() if k != "seed"},
        "data_dir": os.path.relpath(data_dir, out),
        "input_hash": content_hash(_data_files(data_dir)),
        "num_tasks": len(train_tasks),
        "experts": {str(seed): files for seed, _, files in results},
    }
    _dump_json(manifest, out / MANIFEST)
    return manifest, {seed: reg for seed, reg, _ in results}


def cmd_train(args):
    cfg = _load_run_config(args.config)
    seeds = tuple(args.seeds) if args.seeds else cfg.seeds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = _materialize_data(cfg, out)
    manifest, _ = train_registries(cfg, data_dir, out, seeds)
    print(f"trained {manifest['method']} registries for seeds {list(seeds)} "
          f"({manifest['num_tasks']} experts each) into {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def load_registry(registry_dir: Path):
    mpath = registry_dir / MANIFEST
    if not mpath.is_file():
        raise ConfigError(f"no registry manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != REGISTRY_FORMAT:
        raise ConfigError(f"{mpath} is not a {REGISTRY_FORMAT} manifest")
    regs = {}
    for seed, files in manifest["experts"].items():
        regs[int(seed)] = [load_expert(registry_dir / f) for f in files]
    return manifest, regs


def _load_test(data_dir: Path):
    if not data_dir.is_dir() or not any(data_dir.glob("task*_test.csv")):
        raise ConfigError(f"no task*_test.csv files in {data_dir}")
    return load_tasks(data_dir, "test")


def cmd_eval(args):
    registry_dir = Path(args.registry)
    manifest, regs = load_registry(registry_dir)
    cfg = _load_run_config(args.config)
    router = cfg.router
    overrides = {k: v for k, v in (("alpha", args.alpha), ("beta", args.beta),
                                   ("continuum_size", args.continuum)) if v is not None}
    router = replace(router, **overrides)
    data_dir = Path(args.data) if args.data else (registry_dir / manifest["data_dir"]).resolve()
    test_tasks = _load_test(data_dir)
    out = Path(args.out) if args.out else registry_dir / "results.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    tag = manifest["input_hash"]

    def one(seed):
        return seed, continual.evaluate(regs[seed], test_tasks, router, manifest["method"],
                                        keep_reports=bool(args.reports))

    results = _pmap(one, sorted(regs))
    rows, table = [], []
    for seed, r in results:
        rid = continual.run_id(tag, r.method, seed, r.continuum_size, r.alpha, r.beta,
                               r.tasks_seen, router.normalization)
        rows.append(continual.result_row(r, seed, rid))
        table.append(r)
    if args.baselines:
        train_tasks = load_tasks(data_dir, "train")
        train_cfg = replace(cfg.train, **{k: v for k, v in manifest["train"].items()
                                          if k in ("epochs", "learning_rate", "batch_size",
                                                   "entropic_scale")})
        for method in ("finetune", "joint"):
            for seed in sorted(regs):
                r = continual.run_method(method, train_tasks, test_tasks,
                                         replace(train_cfg, seed=seed))
                rid = continual.run_id(tag, method, seed, 1, None, None, r.tasks_seen)
                rows.append(continual.result_row(r, seed, rid))
                table.append(r)
    header = continual.result_columns(len(test_tasks))
    continual.write_results(out, rows, header)
    if args.reports:
        for seed, r in results:
            write_reports(Path(args.reports).with_name(f"{Path(args.reports).stem}_seed{seed}.csv"),
                          r.reports)
    lp, up = noise_percentiles(router.alpha, router.beta)
    _dump_json({
        "registry": str(registry_dir),
        "input_hash": tag,
        "alpha": router.alpha,
        "beta": router.beta,
        "continuum_size": router.continuum_size,
        "normalization": router.normalization,
        "lower_percentile": lp,
        "upper_percentile": up,
        "results": str(out),
        "run_ids": [r[0] for r in rows],
    }, out.with_name(out.stem + "_manifest.json"))
    print(continual.format_table(table))
    for seed, r in results:
        print(f"seed {seed}: m={r.continuum_size} task-prediction "
              f"{r.task_prediction_accuracy:.4f} classification {r.classification_accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate


SWEEP_COLUMNS = ["alpha", "beta", "m", "seed", "lower_percentile", "upper_percentile",
                 "task_prediction_accuracy", "classification_accuracy"]


def run_sweep(regs, test_tasks, alphas, betas, ms, normalization="minmax"):
    """Evaluate every (alpha, beta, m, seed) cell; rows come back sorted by config."""
    if not (alphas and betas and ms):
        raise ConfigError("ablation grid is empty")
    cells = sorted((a, b, m, s) for a in alphas for b in betas for m in ms for s in regs)

    def one(cell):
        a, b, m, s = cell
        router = RouterConfig(alpha=a, beta=b, continuum_size=m, normalization=normalization)
        r = continual.evaluate(regs[s], test_tasks, router)
        lp, up = noise_percentiles(a, b)
        return [a, b, m, s, lp, up, r.task_prediction_accuracy, r.classification_accuracy]

    return _pmap(one, cells)


def _marginal(rows, col):
    keys = sorted({r[col] for r in rows})
    tp = [float(np.mean([r[6] for r in rows if r[col] == k])) for k in keys]
    ca = [float(np.mean([r[7] for r in rows if r[col] == k])) for k in keys]
    return keys, tp, ca


def cmd_ablate(args):
    cfg = _load_run_config(args.config)
    alphas = tuple(args.alpha) if args.alpha else cfg.grid_alpha
    betas = tuple(args.beta) if args.beta else cfg.grid_beta
    ms = tuple(args.continuum) if args.continuum else cfg.grid_continuum
    if not (alphas and betas and ms):
        raise ConfigError("ablation grid is empty")
    for a in alphas:
        for b in betas:
            noise_percentiles(a, b)
    if min(ms) < 1:
        raise ConfigError("continuum sizes must be >= 1")
    seeds = tuple(args.seeds) if args.seeds else cfg.seeds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = _materialize_data(cfg, out)
    _, regs = train_registries(cfg, data_dir, out / "registry", seeds)
    test_tasks = _load_test(data_dir)
    rows = run_sweep(regs, test_tasks, alphas, betas, ms, cfg.router.normalization)

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[0])), repr(float(r[1])), r[2], r[3],
                        *(repr(float(v)) for v in r[4:])])

    names = {0: ("alpha", "alpha"), 1: ("beta", "beta"), 2: ("continuum", "data continuum size")}
    for col, (stem, label) in names.items():
        keys, tp, ca = _marginal(rows, col)
        write_chart(out / f"ablate_{stem}.svg",
                    f"Accuracy vs {label} (mean over seeds and other settings)",
                    label, "accuracy", [str(k) for k in keys],
                    [("task prediction", tp), ("classification", ca)], stamp=args.stamp)

    cells = {}
    for r in rows:
        cells.setdefault((r[0], r[1], r[2]), []).append(r[7])
    best = max(sorted(cells), key=lambda k: np.mean(cells[k]))
    print(f"{len(rows)} sweep rows written to {out / 'sweep.csv'}")
    print(f"best cell: alpha={best[0]} beta={best[1]} m={best[2]} "
          f"classification={np.mean(cells[best]):.4f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ctp", description="Confidence-based task-id prediction")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic suite as task CSVs")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one expert registry per seed")
    t.add_argument("--config")
    t.add_argument("--seeds", type=int, nargs="+")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="route test continua through a trained registry")
    e.add_argument("registry")
    e.add_argument("--data", help="directory with task*_test.csv (default: the registry's data)")
    e.add_argument("--config")
    e.add_argument("--alpha", type=float)
    e.add_argument("--beta", type=float)
    e.add_argument("--continuum", type=int)
    e.add_argument("--out", help="results CSV (default: <registry>/results.csv)")
    e.add_argument("--reports", help="also write per-continuum routing reports (one file per seed)")
    e.add_argument("--baselines", action="store_true", help="add finetune and joint rows")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="alpha/beta/continuum sweep with SVG charts")
    a.add_argument("--config")
    a.add_argument("--alpha", type=float, nargs="+")
    a.add_argument("--beta", type=float, nargs="+")
    a.add_argument("--continuum", type=int, nargs="+")
    a.add_argument("--seeds", type=int, nargs="+")
    a.add_argument("--out", required=True)
    a.add_argument("--stamp", action="store_true", help="embed a timestamp in the SVGs")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CTPError as exc:
        print(f"ctp {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
