"""Command line entry point.

Every subcommand prints one JSON object on success. Failures print a single
``{"error": ..., "type": ...}`` line to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..lifting import dump_anchors
from ..simkit import SimConfig, generate_dataset, read_dataset, write_dataset
from .ablate import ablate
from .config import load_config
from .train import evaluate, export_pseudo_labels, load_stage2, train_stage1, train_stage2


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, default=str))


def cmd_simulate(args):
    cfg = load_config(args.config, require_data=False)
    sim = SimConfig.from_json(cfg.sim)
    ds = generate_dataset(sim, rng_seed=cfg.seed)
    path = write_dataset(ds, args.out)
    _emit({"dataset": str(path), "n_sequences": len(ds.sequences), "n_frames": ds.n_frames, "seed": cfg.seed})


def cmd_train_stage1(args):
    cfg = load_config(args.config)
    res = train_stage1(cfg, out_dir=args.out)
    last = res.transcript[-1] if res.transcript else {}
    _emit({"checkpoint": str(res.checkpoint), "metrics": str(res.metrics_csv), "steps": len(res.transcript),
           "final_total": last.get("total"), "seconds": round(res.seconds, 2)})


def cmd_export_labels(args):
    out = Path(args.out) if args.out else Path(args.ckpt).with_name("pseudo_labels.json")
    path, doc = export_pseudo_labels(args.ckpt, args.data, out)
    _emit({"labels": str(path), "n_labels": len(doc["index"])})


def cmd_train_stage2(args):
    cfg = load_config(args.config)
    res = train_stage2(cfg, labels=args.labels, use_gt=args.use_gt, out_dir=args.out)
    last = res.transcript[-1] if res.transcript else {}
    _emit({"checkpoint": str(res.checkpoint), "metrics": str(res.metrics_csv), "steps": len(res.transcript),
           "final_l1": last.get("l1"), "seconds": round(res.seconds, 2)})


def cmd_eval(args):
    ds = read_dataset(args.data)
    rep = evaluate(args.ckpt, ds, args.stage, split=args.split)
    _emit(rep.to_json(ds.header.topology.joint_names))


def cmd_ablate(args):
    cfg = load_config(args.config)
    rows = ablate(cfg, out_path=args.out)
    doc = {"table": str(args.out or Path(cfg.out) / "ablation.csv"), "rows": rows}
    if args.anchors_from:
        path = Path(args.anchors_out or Path(cfg.out) / "anchors.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        doc["anchors"] = str(dump_anchors(load_stage2(args.anchors_from), path))
    _emit(doc)


def build_parser():
    p = argparse.ArgumentParser(prog="weakpose", description="Two-stage weakly supervised 3D pose estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train-stage1", help="train the point-cloud branch from 2D estimates")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: config 'out')")
    s.set_defaults(func=cmd_train_stage1)

    s = sub.add_parser("export-labels", help="write stage-1 predictions as pseudo labels")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="label file (default: next to the checkpoint)")
    s.set_defaults(func=cmd_export_labels)

    s = sub.add_parser("train-stage2", help="train the lifting network")
    s.add_argument("--config", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--labels")
    g.add_argument("--use-gt", action="store_true", help="oracle regime: fit ground truth")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_stage2)

    s = sub.add_parser("eval", help="score a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--split", choices=("test", "train", "all"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="matched-seed stage-1 ablations")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="CSV path (default: <out>/ablation.csv)")
    s.add_argument("--anchors-from", help="stage-2 checkpoint whose anchor set is exported as JSON")
    s.add_argument("--anchors-out", help="anchor JSON path (default: <out>/anchors.json)")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # report every failure as one machine-readable line
        print(json.dumps({"error": str(exc), "type": type(exc).__name__, "command": args.command}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
