"""Matched-seed ablation runner."""

from __future__ import annotations

import csv
from pathlib import Path

from ..fusion import SamplingCache
from ..simkit import SequenceDataset, read_dataset
from .config import VARIANTS, RunConfig
from .train import evaluate, train_stage1

COLUMNS = ["variant", "loss_manner", "mean_map", "mpjpe_cm", "final_total", "seconds"]


def run_variant(cfg: RunConfig, name, ds, cache=None):
    vcfg = cfg.with_overrides(**VARIANTS[name])
    res = train_stage1(vcfg, dataset=ds, save=False, cache=cache)
    rep = evaluate(res.net, ds, stage=1, split="test", test_fraction=vcfg.test_fraction, cache=cache)
    return {"variant": name, "loss_manner": vcfg.loss_manner, "mean_map": rep.mean_map,
            "mpjpe_cm": rep.mpjpe_cm, "final_total": res.transcript[-1]["total"] if res.transcript else float("nan"),
            "seconds": res.seconds}, rep, res.net


def ablate(cfg: RunConfig, dataset=None, out_path=None):
    """Train every variant in ``cfg.variants`` with the same seed and budget.

    Returns the table rows; writes them as CSV when ``out_path`` (default
    ``<out>/ablation.csv``) is not False.
    """
    ds = dataset if isinstance(dataset, SequenceDataset) else read_dataset(dataset or cfg.data)
    cache = SamplingCache(cfg.point.get("downsample", 4))
    rows = [run_variant(cfg, name, ds, cache)[0] for name in cfg.variants]
    if out_path is not False:
        path = Path(out_path or Path(cfg.out) / "ablation.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows
