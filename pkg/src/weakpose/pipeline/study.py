"""Matched-budget comparison study: supervision manner, prior and fusion
ablations, stage-2 regimes and 2D-perturbation robustness on one synthetic dataset."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

from ..fusion import SamplingCache
from ..simkit import SimConfig, generate_dataset
from .ablate import run_variant
from .config import RunConfig
from .train import evaluate, export_pseudo_labels, perturbation_shift, train_stage2

STAGE1_VARIANTS = ("full", "project3d2d", "no_con", "no_sym", "no_bone", "no_fusion")


@dataclass
class StudyConfig:
    sim: dict = field(default_factory=lambda: dict(n_sequences=60, n_points=512))
    seed: int = 0
    steps: int = 300
    batch_size: int = 2
    lr: float = 3e-3
    stage2_steps: int = 200
    stage2_batch: int = 8
    stage2_lr: float = 1e-3
    perturb_pixels: float = 40.0

    def run_config(self, **kw):
        return RunConfig(seed=self.seed, steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                         stage2_steps=self.stage2_steps, stage2_batch=self.stage2_batch,
                         stage2_lr=self.stage2_lr, sim=dict(self.sim), **kw)


def run_study(cfg: StudyConfig | None = None, log=print):
    cfg = cfg or StudyConfig()
    t0 = time.time()
    ds = generate_dataset(SimConfig(**cfg.sim), rng_seed=cfg.seed)
    run = cfg.run_config()
    cache = SamplingCache()
    stage1, nets = {}, {}
    for name in STAGE1_VARIANTS:
        row, _, nets[name] = run_variant(run, name, ds, cache)
        stage1[name] = row
        log(f"stage1 {name}: mAP {row['mean_map']:.4f} MPJPE {row['mpjpe_cm']:.2f} cm ({row['seconds']:.0f} s)")

    _, labels = export_pseudo_labels(nets["full"], ds, cache=cache)
    label_rep = evaluate(nets["full"], ds, stage=1, test_fraction=run.test_fraction, cache=cache)
    stage2 = {"pseudo_label_mpjpe_cm": label_rep.mpjpe_cm}
    _, test = ds.split(run.test_fraction)
    frames = list(test.frames())
    K = ds.header.intrinsics
    for tag, kw, single in [("gt", dict(use_gt=True), False), ("pseudo", dict(labels=labels), False),
                            ("single_anchor", dict(labels=labels), True)]:
        rcfg = cfg.run_config(single_anchor_baseline=single)
        res = train_stage2(rcfg, dataset=ds, save=False, **kw)
        rep = evaluate(res.net, ds, stage=2, test_fraction=rcfg.test_fraction)
        stage2[f"{tag}_mpjpe_cm"] = rep.mpjpe_cm
        stage2[f"{tag}_mean_map"] = rep.mean_map
        stage2[f"{tag}_seconds"] = res.seconds
        if tag != "gt":
            stage2[f"{tag}_shift_cm"] = perturbation_shift(res.net, frames, K, cfg.perturb_pixels, seed=cfg.seed)
        log(f"stage2 {tag}: MPJPE {rep.mpjpe_cm:.2f} cm ({res.seconds:.0f} s)")
    return {"config": asdict(cfg), "stage1": stage1, "stage2": stage2, "seconds": time.time() - t0}
