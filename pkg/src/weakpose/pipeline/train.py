"""Two-stage training, pseudo-label export and checkpoint evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ..diffcore.checkpoint import decode_array, encode_array
from ..fusion import PointBranch, PointBranchConfig, SamplingCache, make_batch
from ..lifting import LiftConfig, LiftNet, frame_inputs, l1_label_loss
from ..simkit import SequenceDataset, ground_truth, read_dataset
from ..supervision import NearZeroJoint, total_loss
from .config import RunConfig
from .metrics import EvalReport, evaluate_predictions

log = logging.getLogger(__name__)

LABELS_FORMAT = "weakpose-labels"
LABELS_VERSION = 1
STAGE1_COLUMNS = ["step", "lr", "l_2d", "l_bone", "l_sym", "l_con", "total"]
STAGE2_COLUMNS = ["step", "lr", "l1"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path | None
    metrics_csv: Path | None
    transcript: list = field(default_factory=list)  # one dict per step
    seconds: float = 0.0
    net: object = None


def _dataset(ds_or_path):
    if isinstance(ds_or_path, SequenceDataset):
        return ds_or_path
    return read_dataset(ds_or_path)


def _lr_at(base, step, total, schedule):
    if schedule == "constant" or total <= 1:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


def _write_csv(path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def header_fingerprint(ds: SequenceDataset):
    h = ds.header
    return {"n_joints": h.topology.n_joints, "intrinsics": h.intrinsics.to_json(),
            "n_points": h.config.n_points, "seed": h.seed}


def _check_header(meta, ds):
    want = meta.get("dataset")
    got = header_fingerprint(ds)
    if want and (want["n_joints"] != got["n_joints"] or want["intrinsics"] != got["intrinsics"]):
        raise TrainingError(f"checkpoint was trained on an incompatible dataset ({want} vs {got})")


# ----------------------------------------------------------------------------
# stage 1


def point_config(cfg: RunConfig, ds: SequenceDataset) -> PointBranchConfig:
    fr = ds.sequences[0][0]
    over = dict(cfg.point)
    over.setdefault("n_joints", ds.header.topology.n_joints)
    over.setdefault("rgb_levels", [tuple(lv.shape) for lv in fr.pyramid.levels])
    over.setdefault("depth_levels", [tuple(lv.shape) for lv in fr.depth_pyramid.levels])
    over["use_fusion"] = not cfg.disable_fusion and over.get("use_fusion", True)
    return PointBranchConfig(**over)


def _targets(seq):
    return (np.stack([f.pose2d.joints for f in seq]), np.stack([f.pose2d.confidence for f in seq]))


def stage1_step(net: PointBranch, seqs, cfg: RunConfig, ds, cache):
    """Forward/backward one batch of sequences, one sequence graph at a time.

    Every loss term only couples frames of the same sequence, so accumulating
    per-sequence gradients (scaled to the batch normalization) equals the
    whole-batch gradient while keeping one graph in memory.
    """
    K, topo = ds.header.intrinsics, ds.header.topology
    n_total = sum(len(s) for s in seqs)
    parts = dict(l_2d=0.0, l_bone=0.0, l_sym=0.0, l_con=0.0, total=0.0)
    net.store.zero_grad()
    for seq in seqs:
        out = net.forward(make_batch(seq, cache, net.cfg.downsample))
        rep, grads = total_loss([out.data], [_targets(seq)], K, topo, cfg.weights, manner=cfg.loss_manner,
                                use_bone=not cfg.disable_bone, use_sym=not cfg.disable_sym,
                                use_con=not cfg.disable_con, detach_mu=cfg.detach_mu)
        share = len(seq) / n_total
        out.backward(grads[0] * share)
        for key in parts:
            parts[key] += share * getattr(rep, key)
    return parts


def train_stage1(cfg: RunConfig, dataset=None, out_dir=None, save=True, cache=None) -> TrainResult:
    """Weak/self-supervised training of the point branch.

    Reads only clouds, pyramids and 2D estimates from the training split.
    """
    t0 = time.time()
    ds = _dataset(dataset if dataset is not None else cfg.data)
    train, _ = ds.split(cfg.test_fraction)
    net = PointBranch(point_config(cfg, ds), seed=cfg.seed)
    cache = cache or SamplingCache(net.cfg.downsample)
    cache.warm(list(train.frames()))
    rng = np.random.default_rng(cfg.seed)
    order, pos = rng.permutation(len(train.sequences)), 0
    rows = []
    for step in range(cfg.steps):
        idx = []
        while len(idx) < min(cfg.batch_size, len(train.sequences)):
            if pos == len(order):
                order, pos = rng.permutation(len(train.sequences)), 0
            idx.append(order[pos])
            pos += 1
        lr = _lr_at(cfg.lr, step, cfg.steps, cfg.lr_schedule)
        try:
            parts = stage1_step(net, [train.sequences[i] for i in idx], cfg, ds, cache)
        except NearZeroJoint as exc:
            raise TrainingError(f"stage 1 step {step}: {exc}") from exc
        dc.adamw_step(net.store, lr=lr, weight_decay=cfg.weight_decay)
        rows.append({"step": step, "lr": lr, **parts})
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("stage1 step %d total %.5f l_2d %.5f", step, parts["total"], parts["l_2d"])
    ckpt = csv_path = None
    if save:
        out = Path(out_dir or cfg.out)
        ckpt = dc.save_store(net.store, out / "stage1.ckpt.json", meta={
            "stage": 1, "net": net.cfg.to_json(), "run": cfg.to_json(), "dataset": header_fingerprint(ds)})
        cols = list(STAGE1_COLUMNS)
        if cfg.loss_manner == "project3d2d":
            cols[2] = "l_rgb"
            rows_out = [{**r, "l_rgb": r["l_2d"]} for r in rows]
        else:
            rows_out = rows
        csv_path = _write_csv(out / "stage1_metrics.csv", cols, rows_out)
    return TrainResult(ckpt, csv_path, rows, time.time() - t0, net)


def load_stage1(path) -> PointBranch:
    doc = dc.read_manifest(path)
    if doc["meta"].get("stage") != 1:
        raise TrainingError(f"{path} is not a stage-1 checkpoint")
    net = PointBranch(PointBranchConfig.from_json(doc["meta"]["net"]))
    dc.load_into(net.store, doc)
    net.meta = doc["meta"]
    return net


# ----------------------------------------------------------------------------
# pseudo labels


def export_pseudo_labels(stage1_ckpt, dataset, out_path=None, cache=None):
    """Predict every frame with the stage-1 network and write them as labels."""
    net = load_stage1(stage1_ckpt) if not isinstance(stage1_ckpt, PointBranch) else stage1_ckpt
    ds = _dataset(dataset)
    if hasattr(net, "meta"):
        _check_header(net.meta, ds)
    if net.cfg.n_joints != ds.header.topology.n_joints:
        raise TrainingError(f"network predicts {net.cfg.n_joints} joints, dataset has {ds.header.topology.n_joints}")
    frames = list(ds.frames())
    joints = net.predict(frames, cache or SamplingCache(net.cfg.downsample), chunk=30)
    doc = {"format": LABELS_FORMAT, "version": LABELS_VERSION,
           "index": [[f.sequence_index, f.frame_index] for f in frames],
           "shape": list(joints.shape), "joints": encode_array(joints)}
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(doc, sort_keys=True))
    return out_path, doc


def read_labels(path_or_doc):
    doc = path_or_doc if isinstance(path_or_doc, dict) else json.loads(Path(path_or_doc).read_text())
    if doc.get("format") != LABELS_FORMAT or doc.get("version") != LABELS_VERSION:
        raise TrainingError("not a pseudo-label file")
    joints = decode_array(doc["joints"], tuple(doc["shape"]))
    return {tuple(k): j for k, j in zip(doc["index"], joints)}


# ----------------------------------------------------------------------------
# stage 2


def lift_config(cfg: RunConfig, ds: SequenceDataset) -> LiftConfig:
    fr = ds.sequences[0][0]
    over = dict(cfg.lift)
    over.setdefault("n_joints", ds.header.topology.n_joints)
    over.setdefault("rgb_levels", [tuple(lv.shape) for lv in fr.pyramid.levels])
    K = ds.header.intrinsics
    over.setdefault("image_size", (K.width, K.height))
    over["single_anchor"] = cfg.single_anchor_baseline or over.get("single_anchor", False)
    return LiftConfig(**over)


def train_stage2(cfg: RunConfig, labels=None, use_gt=False, dataset=None, out_dir=None, save=True) -> TrainResult:
    """Fit the lifting network to pseudo labels (or, as the oracle regime, to ground truth)."""
    if (labels is None) == (not use_gt):
        raise TrainingError("train_stage2 needs exactly one of labels / use_gt")
    t0 = time.time()
    ds = _dataset(dataset if dataset is not None else cfg.data)
    train, _ = ds.split(cfg.test_fraction)
    frames = list(train.frames())
    if use_gt:
        targets = np.stack([ground_truth(f).joints for f in frames])
    else:
        table = read_labels(labels)
        try:
            targets = np.stack([table[(f.sequence_index, f.frame_index)] for f in frames])
        except KeyError as exc:
            raise TrainingError(f"pseudo labels missing frame {exc}") from None
    net = LiftNet(lift_config(cfg, ds), seed=cfg.seed)
    K = ds.header.intrinsics
    rng = np.random.default_rng(cfg.seed)
    levels, uv, conf = frame_inputs(frames)
    order, pos = rng.permutation(len(frames)), 0
    rows = []
    for step in range(cfg.stage2_steps):
        if pos + cfg.stage2_batch > len(order):
            order, pos = rng.permutation(len(frames)), 0
        idx = np.sort(order[pos:pos + cfg.stage2_batch])
        pos += cfg.stage2_batch
        lr = _lr_at(cfg.stage2_lr, step, cfg.stage2_steps, cfg.lr_schedule)
        net.store.zero_grad()
        out = net.forward([lv[idx] for lv in levels], uv[idx], conf[idx], K)
        value, grad = l1_label_loss(out.data, targets[idx])
        out.backward(grad)
        dc.adamw_step(net.store, lr=lr, weight_decay=cfg.weight_decay)
        rows.append({"step": step, "lr": lr, "l1": value})
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("stage2 step %d l1 %.5f", step, value)
    ckpt = csv_path = None
    if save:
        out = Path(out_dir or cfg.out)
        tag = "gt" if use_gt else "pseudo"
        ckpt = dc.save_store(net.store, out / f"stage2_{tag}.ckpt.json", meta={
            "stage": 2, "net": net.cfg.to_json(), "run": cfg.to_json(), "labels": tag,
            "dataset": header_fingerprint(ds)})
        csv_path = _write_csv(out / f"stage2_{tag}_metrics.csv", STAGE2_COLUMNS, rows)
    return TrainResult(ckpt, csv_path, rows, time.time() - t0, net)


def load_stage2(path) -> LiftNet:
    doc = dc.read_manifest(path)
    if doc["meta"].get("stage") != 2:
        raise TrainingError(f"{path} is not a stage-2 checkpoint")
    net = LiftNet(LiftConfig.from_json(doc["meta"]["net"]))
    dc.load_into(net.store, doc)
    net.meta = doc["meta"]
    return net


# ----------------------------------------------------------------------------
# evaluation


def predict(net, frames, K, cache=None):
    if isinstance(net, PointBranch):
        return net.predict(frames, cache or SamplingCache(net.cfg.downsample), chunk=30)
    return net.predict(frames, K)


def evaluate(ckpt, dataset, stage, split="test", test_fraction=0.2, cache=None) -> EvalReport:
    """Score a checkpoint (path or network) against hidden ground truth."""
    ds = _dataset(dataset)
    if isinstance(ckpt, (str, Path)):
        net = load_stage1(ckpt) if int(stage) == 1 else load_stage2(ckpt)
        _check_header(net.meta, ds)
        test_fraction = net.meta.get("run", {}).get("test_fraction", test_fraction)
    else:
        net = ckpt
    train, test = ds.split(test_fraction)
    part = {"test": test, "train": train, "all": ds}[split]
    frames = list(part.frames())
    pred = predict(net, frames, ds.header.intrinsics, cache)
    gt = np.stack([ground_truth(f).joints for f in frames])
    return evaluate_predictions(pred, gt)


def perturbation_shift(net: LiftNet, frames, K, pixels=40.0, seed=0, chunk=64):
    """Mean 3D displacement (cm) when one joint's 2D estimate moves by ``pixels``.

    Every joint is perturbed in turn, in a seeded random direction per frame;
    the displacement is averaged over all predicted joints, frames and
    perturbed joints. Pyramid features are left untouched.
    """
    levels, uv, conf = frame_inputs(frames)
    rng = np.random.default_rng(seed)
    n, k = uv.shape[:2]
    angle = rng.uniform(0.0, 2.0 * np.pi, size=(k, n))
    base = np.concatenate([net.forward([lv[i:i + chunk] for lv in levels], uv[i:i + chunk], conf[i:i + chunk], K).data
                           for i in range(0, n, chunk)])
    shifts = []
    for j in range(k):
        moved = uv.copy()
        moved[:, j] += pixels * np.stack([np.cos(angle[j]), np.sin(angle[j])], axis=-1)
        out = np.concatenate([net.forward([lv[i:i + chunk] for lv in levels], moved[i:i + chunk], conf[i:i + chunk], K).data
                              for i in range(0, n, chunk)])
        shifts.append(np.linalg.norm(out - base, axis=-1).mean())
    return float(np.mean(shifts) * 100.0)
