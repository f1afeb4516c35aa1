"""Command-line entry point: ``sscn {generate,train,cluster,evaluate,verify}``.

Every subcommand reads an optional JSON config (``--config``); flags
override the file. Outputs go under ``--out`` (default: the config's
``out_dir``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, merge_overrides
from .dataio import (DataMatrix, SubspaceSpec, generate_union_of_subspaces, load_dataset,
                     save_dataset)
from .errors import DomainError, FormatError, SSCNError
from .kernels import BACKEND
from .metrics import metric_report
from .network import write_trace_csv
from .pipeline import Clusterer, fit, load_training_data
from .verify import run_suite

log = logging.getLogger("sscn")

METRICS = ("acc", "ari", "nmi")


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n",
                    encoding="utf-8")
    return path


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_labels_csv(path, labels, start=0, fh=None):
    """``index,label`` rows; appends to an open handle when given."""
    own = fh is None
    if own:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(path, "w", newline="")
        fh.write("index,label\n")
    w = csv.writer(fh)
    for i, lab in enumerate(labels, start):
        w.writerow((i, int(lab)))
    if own:
        fh.close()


def aggregate(rows) -> dict:
    """Sample mean and sample standard deviation per metric over successful seeds."""
    ok = [r for r in rows if r.get("status") == "ok"]
    out = {"n_ok": len(ok), "n_failed": len(rows) - len(ok)}
    for section in ("metrics", "pseudo_metrics", "holdout_metrics"):
        vals = [r[section] for r in ok if r.get(section)]
        if not vals:
            continue
        out[section] = {}
        for key in METRICS:
            arr = np.array([v[key] for v in vals], dtype=np.float64)
            out[section][key] = {"mean": float(arr.mean()),
                                 "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                                 "n": int(arr.size)}
    return out


def _load_cfg(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return merge_overrides(cfg, seeds=args.seed, out_dir=args.out,
                           batch_size=args.batch_size, data_path=getattr(args, "data", None))


# -- subcommands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    out = Path(args.out or cfg.out_dir)
    seeds = args.seed or [cfg.data.synthetic.get("seed", 0)]
    written = []
    for seed in seeds:
        spec = SubspaceSpec.from_dict(dict(cfg.data.synthetic, seed=int(seed)))
        data, _ = generate_union_of_subspaces(spec)
        path = out / f"dataset_seed{seed}.bin"
        save_dataset(path, data, spec, {"seed": int(seed)})
        _write_json(path.with_suffix(".json"), {"spec": spec.to_dict(), "seed": int(seed),
                                                "fingerprint": data.fingerprint(),
                                                "n": data.n, "d": data.d})
        written.append(str(path))
        print(f"wrote {path} ({data.d} x {data.n}, fingerprint {data.fingerprint()[:12]})")
    return 0


def _run_seed(data, holdout, cfg, seed, seed_dir) -> dict:
    row = {"seed": int(seed), "status": "ok"}
    t0 = time.perf_counter()
    try:
        res = fit(data, cfg, int(seed), out_dir=seed_dir)
    except SSCNError as exc:
        log.error("seed %s failed: %s", seed, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                   seconds=time.perf_counter() - t0)
        trace = getattr(exc, "trace", None)
        if trace:
            row["loss_trace_tail"] = [float(v) for v in trace[-5:]]
        return row
    artifacts = {}
    labels_path = seed_dir / "labels.csv"
    write_labels_csv(labels_path, res.in_sample.labels)
    artifacts["labels"] = str(labels_path)
    if res.clusterer is not None:
        ckpt = seed_dir / "model.bin"
        res.clusterer.save(ckpt, seed=int(seed), data_fingerprint=data.fingerprint(),
                           config=cfg.to_dict())
        artifacts["checkpoint"] = str(ckpt)
    if res.trace:
        write_trace_csv(seed_dir / "trace.csv", res.trace)
        artifacts["trace"] = str(seed_dir / "trace.csv")
    if (seed_dir / "pretrain.sscn").exists():
        artifacts["pretrain_checkpoint"] = str(seed_dir / "pretrain.sscn")
    if data.labels is not None:
        row["metrics"] = metric_report(res.in_sample.labels, data.labels, int(seed))
        row["pseudo_metrics"] = metric_report(res.pseudo.labels,
                                              data.labels[res.pseudo_index], int(seed))
    if holdout is not None and res.clusterer is not None:
        t1 = time.perf_counter()
        pred = res.clusterer.classify(holdout, cfg.batch_size or 1000)
        res.timings["holdout_classify"] = time.perf_counter() - t1
        if holdout.labels is not None:
            row["holdout_metrics"] = metric_report(pred.labels, holdout.labels, int(seed))
    row.update(info=res.info, timings=res.timings, artifacts=artifacts,
               seconds=time.perf_counter() - t0)
    _write_json(seed_dir / "report.json", row)
    return row


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.checkpoint:
        cfg.train.resume_from = str(args.checkpoint)
    out = Path(cfg.out_dir)
    cfg.save(out / "config.json")
    t0 = time.perf_counter()
    data, holdout = load_training_data(cfg.data)
    t_load = time.perf_counter() - t0
    rows = []
    for seed in cfg.seeds:
        row = _run_seed(data, holdout, cfg, seed, out / f"seed_{seed}")
        rows.append(row)
        summary = row.get("metrics", {})
        print(f"seed {seed}: {row['status']}"
              + "".join(f" {k}={summary[k]:.4f}" for k in METRICS if k in summary))
    report = {"version": __version__, "backend": BACKEND, "model": cfg.model.kind,
              "n": data.n, "d": data.d, "data_fingerprint": data.fingerprint(),
              "holdout_n": holdout.n if holdout is not None else None,
              "seeds": rows, "aggregate": aggregate(rows),
              "timings": {"load": t_load, "total": time.perf_counter() - t0},
              "artifacts": {"config": str(out / "config.json")}}
    path = _write_json(out / "report.json", report)
    agg = report["aggregate"]
    if "metrics" in agg:
        print("aggregate: " + " ".join(f"{k}={agg['metrics'][k]['mean']:.4f}"
                                       f"+-{agg['metrics'][k]['std']:.4f}" for k in METRICS)
              + f" over {agg['n_ok']} seed(s), {agg['n_failed']} failed")
    print(f"report: {path}")
    return 0 if agg["n_ok"] > 0 else 1


def _eval_data(args) -> DataMatrix:
    if args.data:
        data, _ = load_dataset(args.data)
        return data
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return load_training_data(cfg.data)[0]


def _clusterer(args) -> Clusterer:
    if not args.checkpoint:
        raise DomainError("--checkpoint is required")
    return Clusterer.load(args.checkpoint)


def cmd_cluster(args) -> int:
    """Classify points in batches, streaming labels and memberships to CSV."""
    clf = _clusterer(args)
    data = _eval_data(args)
    if data.d != clf.d_x:
        raise DomainError(f"checkpoint expects {clf.d_x}-dimensional points, data has {data.d}")
    out = Path(args.out or "runs/cluster")
    out.mkdir(parents=True, exist_ok=True)
    batch = args.batch_size or 1000
    sizes = np.zeros(clf.k, dtype=np.int64)
    with open(out / "labels.csv", "w", newline="") as lf, \
            open(out / "memberships.csv", "w", newline="") as sf:
        lf.write("index,label\n")
        sw = csv.writer(sf)
        sw.writerow(["index"] + [f"p{j}" for j in range(clf.k)])
        for start, labels, soft in clf.iter_classify(data, batch):
            write_labels_csv(None, labels, start, lf)
            for i, row in enumerate(soft, start):
                sw.writerow([i] + [repr(float(v)) for v in row])
            sizes += np.bincount(labels, minlength=clf.k)
    summary = {"n": data.n, "k": clf.k, "batch_size": batch, "cluster_sizes": sizes.tolist(),
               "labels": str(out / "labels.csv"), "memberships": str(out / "memberships.csv")}
    _write_json(out / "cluster.json", summary)
    print(json.dumps(summary))
    return 0


def cmd_evaluate(args) -> int:
    clf = _clusterer(args)
    data = _eval_data(args)
    if data.labels is None:
        raise DomainError("evaluation needs labelled data")
    if data.d != clf.d_x:
        raise DomainError(f"checkpoint expects {clf.d_x}-dimensional points, data has {data.d}")
    pred = clf.classify(data, args.batch_size or 1000)
    report = metric_report(pred.labels, data.labels, args.seed[0] if args.seed else None)
    if args.out:
        _write_json(Path(args.out) / "evaluation.json", report)
    print(json.dumps(report))
    return 0


def cmd_verify(args) -> int:
    seed = args.seed[0] if args.seed else 0
    report = run_suite(seed, inject_fault=args.inject_fault)
    if args.out:
        _write_json(Path(args.out) / "verify.json", report)
    print(json.dumps(report, indent=2))
    if not report["passed"]:
        print("failed checks: " + ", ".join(report["failed"]), file=sys.stderr)
        return 1
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "cluster": cmd_cluster,
            "evaluate": cmd_evaluate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sscn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"generate": "write synthetic union-of-subspaces datasets",
             "train": "fit the configured pipeline for every seed and write a run report",
             "cluster": "label (possibly unseen) points with a fitted checkpoint",
             "evaluate": "ACC/ARI/NMI of a checkpoint on labelled data",
             "verify": "run the randomized oracle suite"}
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--data", type=Path, help="dataset container to use instead of the config's data")
        sp.add_argument("--checkpoint", type=Path,
                        help="fitted model (cluster/evaluate) or pre-trained auto-encoder (train)")
        sp.add_argument("--batch-size", type=int, help="mini-batch / streaming chunk size")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            sp.add_argument("--inject-fault", action="store_true",
                            help="perturb the closed-form embedding; the suite must fail")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SSCNError, FormatError, FileNotFoundError, PermissionError) as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"sscn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
