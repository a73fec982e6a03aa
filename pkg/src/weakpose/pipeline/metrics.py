"""3D pose metrics: mAP under the 10 cm rule and MPJPE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAP_THRESHOLD = 0.10  # meters; a joint counts when its error is strictly below


@dataclass
class EvalReport:
    per_joint_map: np.ndarray  # (K,) in [0, 1]
    mean_map: float
    mpjpe_cm: float
    per_joint_error_cm: np.ndarray  # (K,)
    n_frames: int = 0

    def row(self, joint_names=None):
        d = {"mean_map": self.mean_map, "mpjpe_cm": self.mpjpe_cm, "n_frames": self.n_frames}
        names = joint_names or [f"j{k}" for k in range(len(self.per_joint_map))]
        for n, m in zip(names, self.per_joint_map):
            d[f"map_{n}"] = float(m)
        return d

    def to_json(self, joint_names=None):
        d = self.row(joint_names)
        d["per_joint_error_cm"] = [float(e) for e in self.per_joint_error_cm]
        return d


def joint_errors(pred, gt):
    """(F, K) Euclidean errors in meters."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def evaluate_predictions(pred, gt, threshold=MAP_THRESHOLD) -> EvalReport:
    err = joint_errors(pred, gt).reshape(-1, np.shape(gt)[-2])
    hit = err < threshold
    per_joint = hit.mean(axis=0)
    return EvalReport(per_joint_map=per_joint, mean_map=float(per_joint.mean()),
                      mpjpe_cm=float(err.mean() * 100.0), per_joint_error_cm=err.mean(axis=0) * 100.0,
                      n_frames=int(err.shape[0]))


def mpjpe_cm(pred, gt):
    return float(joint_errors(pred, gt).mean() * 100.0)
