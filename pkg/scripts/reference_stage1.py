"""Reference stage-1 run on the default synthetic config.

Generates the dataset in memory, scores the untrained network, trains with
weak/self supervision, scores again and writes a JSON summary. The numbers
it prints are the ones the acceptance thresholds were frozen from.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from weakpose.fusion import PointBranch, SamplingCache
from weakpose.pipeline import RunConfig, evaluate, train_stage1
from weakpose.pipeline.metrics import mpjpe_cm
from weakpose.pipeline.train import point_config
from weakpose.simkit import SimConfig, generate_dataset, ground_truth


def centroid_baseline_cm(ds, test_fraction):
    """Cloud centroid plus the mean train-split joint offset; no learning."""
    train, test = ds.split(test_fraction)

    def offsets(part):
        frames = list(part.frames())
        gt = np.stack([ground_truth(f).joints for f in frames])
        cen = np.stack([f.cloud.mean(axis=0) for f in frames])
        return gt, cen

    gt_tr, cen_tr = offsets(train)
    mean_off = (gt_tr - cen_tr[:, None]).mean(axis=0)
    gt_te, cen_te = offsets(test)
    return mpjpe_cm(cen_te[:, None] + mean_off, gt_te)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-sequences", type=int, default=200)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--batch-size", type=int, default=2)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/reference_stage1.json")
    args = ap.parse_args()

    t0 = time.time()
    ds = generate_dataset(SimConfig(n_sequences=args.n_sequences), rng_seed=args.seed)
    t_gen = time.time() - t0
    cfg = RunConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    cache = SamplingCache()
    untrained = PointBranch(point_config(cfg, ds), seed=cfg.seed)
    before = evaluate(untrained, ds, stage=1, test_fraction=cfg.test_fraction, cache=cache)
    res = train_stage1(cfg, dataset=ds, save=False, cache=cache)
    after = evaluate(res.net, ds, stage=1, test_fraction=cfg.test_fraction, cache=cache)
    total = time.time() - t0
    summary = {
        "config": cfg.to_json(), "n_sequences": args.n_sequences,
        "untrained_mpjpe_cm": before.mpjpe_cm, "trained_mpjpe_cm": after.mpjpe_cm,
        "improvement": before.mpjpe_cm / after.mpjpe_cm,
        "centroid_baseline_cm": centroid_baseline_cm(ds, cfg.test_fraction), "trained_mean_map": after.mean_map,
        "loss_first": res.transcript[0]["total"], "loss_last": res.transcript[-1]["total"],
        "loss_last10_mean": sum(r["total"] for r in res.transcript[-10:]) / min(10, len(res.transcript)),
        "seconds_generate": t_gen, "seconds_train": res.seconds, "seconds_total": total,
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(summary, indent=2))
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))


if __name__ == "__main__":
    main()
