"""Training losses for the point-cloud branch.

Every loss returns ``(value, grad)`` with ``grad`` shaped like the predicted
joints, so callers can push it into a network output with
``Tensor.backward(grad)``. Joint arrays are (..., K, 3) in camera meters;
2D targets are (..., K, 2) pixels with (..., K) confidences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, back_project, point_to_ray_distance_and_grad
from .skeleton import Pose2D, Pose3D, SkeletonTopology

EPS_NORM = 1e-6
BEHIND_CAMERA_EPS = 1e-3


class NearZeroJoint(ValueError):
    pass


class SequenceTooShort(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    l2d: float = 10.0
    bone: float = 1.0
    sym: float = 0.1
    con: float = 0.1

    def __post_init__(self):
        if min(self.l2d, self.bone, self.sym, self.con) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossReport:
    l_2d: float
    l_bone: float
    l_sym: float
    l_con: float
    total: float
    ray_distances: np.ndarray = field(default=None)
    manner: str = "ray"

    def row(self):
        return {"l_rgb" if self.manner == "project3d2d" else "l_2d": self.l_2d,
                "l_bone": self.l_bone, "l_sym": self.l_sym, "l_con": self.l_con, "total": self.total}


def _arrays(pred, target2d, confidence=None):
    p = pred.joints if isinstance(pred, Pose3D) else np.asarray(pred, dtype=np.float64)
    if isinstance(target2d, Pose2D):
        uv, conf = target2d.joints, target2d.confidence
    else:
        uv = np.asarray(target2d, dtype=np.float64)
        conf = None
    if confidence is not None:
        conf = np.asarray(confidence, dtype=np.float64)
    if conf is None:
        conf = np.ones(uv.shape[:-1])
    return p, uv, conf


# ----------------------------------------------------------------------------
# weak supervision from 2D


def loss_rgb_baseline(pred, target2d, K: CameraIntrinsics, confidence=None):
    """Sum over joints of the pixel distance between target and projected prediction.

    Joints at z <= 1e-3 cannot be projected; each contributes the image
    diagonal with zero gradient. Terms are weighted by confidence.
    """
    p, uv, conf = _arrays(pred, target2d, confidence)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    front = z > BEHIND_CAMERA_EPS
    zs = np.where(front, z, 1.0)
    u = K.fx * x / zs + K.cx
    v = K.fy * y / zs + K.cy
    ru, rv = u - uv[..., 0], v - uv[..., 1]
    dist = np.hypot(ru, rv)
    safe = np.where(dist > 0, dist, 1.0)
    gu = np.where(dist > 0, ru / safe, 0.0) * conf
    gv = np.where(dist > 0, rv / safe, 0.0) * conf
    grad = np.stack([gu * K.fx / zs, gv * K.fy / zs, -(gu * K.fx * x + gv * K.fy * y) / (zs * zs)], axis=-1)
    grad = np.where(front[..., None], grad, 0.0)
    terms = np.where(front, dist, K.diagonal) * conf
    return float(terms.sum()), grad


def ray_terms(pred, uv, K: CameraIntrinsics):
    """Per-joint ray distance D, norm mu and dD/dp for (..., K, 3) predictions."""
    ray = back_project(uv, K)
    dist, gdist = point_to_ray_distance_and_grad(pred, ray)
    mu = np.linalg.norm(pred, axis=-1)
    return dist, mu, gdist


def loss_2d_ray(pred, target2d, K: CameraIntrinsics, confidence=None, detach_mu=False):
    """Sum over joints of confidence * D(joint, ray) / ||joint||.

    By default the norm is differentiated too. D is homogeneous of degree one
    in the joint position, so grad(D) . p = D > 0: with the norm frozen every
    step also pulls joints toward the camera, and training slides the whole
    skeleton along its rays. D / ||p|| is scale invariant, so the full
    gradient has no radial component. ``detach_mu=True`` gives the frozen-norm
    gradient.
    """
    p, uv, conf = _arrays(pred, target2d, confidence)
    dist, mu, gdist = ray_terms(p, uv, K)
    if np.any(mu <= EPS_NORM):
        raise NearZeroJoint(f"joint norm {mu.min():.3g} <= {EPS_NORM}")
    w = conf / mu
    grad = gdist * w[..., None]
    if not detach_mu:
        grad = grad - (w * dist / mu)[..., None] * p / mu[..., None]
    return float((w * dist).sum()), grad


# ----------------------------------------------------------------------------
# self supervision from physical priors


def _bone_vectors(p, topology):
    par = np.array([a for a, _ in topology.bones])
    chi = np.array([c for _, c in topology.bones])
    vec = p[..., chi, :] - p[..., par, :]
    return vec, par, chi


def _scatter_bones(gvec, par, chi, shape):
    grad = np.zeros(shape)
    np.add.at(grad, (..., chi, slice(None)), gvec)
    np.add.at(grad, (..., par, slice(None)), -gvec)
    return grad


def _unit(vec):
    n = np.linalg.norm(vec, axis=-1, keepdims=True)
    return np.where(n > 0, vec / np.where(n > 0, n, 1.0), 0.0), n[..., 0]


def loss_bone(seq_preds, topology: SkeletonTopology):
    """Sum over bones and frames of |length_t - mean_t(length)| for one sequence (T, K, 3)."""
    p = np.stack([f.joints for f in seq_preds]) if isinstance(seq_preds, (list, tuple)) else np.asarray(seq_preds, dtype=np.float64)
    if p.shape[0] < 2:
        raise SequenceTooShort("bone-length consistency needs at least two frames")
    vec, par, chi = _bone_vectors(p, topology)
    unit, length = _unit(vec)  # (T, B)
    dev = length - length.mean(axis=0, keepdims=True)
    sgn = np.sign(dev)
    dlen = sgn - sgn.mean(axis=0, keepdims=True)
    return float(np.abs(dev).sum()), _scatter_bones(unit * dlen[..., None], par, chi, p.shape)


def loss_sym(pred, topology: SkeletonTopology):
    """Sum over symmetric bone pairs of |len(left) - len(right)|; batched over leading axes."""
    if not topology.symmetric_pairs:
        raise ValueError("topology has no symmetric pairs")
    p = pred.joints if isinstance(pred, Pose3D) else np.asarray(pred, dtype=np.float64)
    vec, par, chi = _bone_vectors(p, topology)
    unit, length = _unit(vec)
    left = np.array([a for a, _ in topology.symmetric_pairs])
    right = np.array([b for _, b in topology.symmetric_pairs])
    gap = length[..., left] - length[..., right]
    sgn = np.sign(gap)
    dlen = np.zeros_like(length)
    np.add.at(dlen, (..., left), sgn)
    np.add.at(dlen, (..., right), -sgn)
    return float(np.abs(gap).sum()), _scatter_bones(unit * dlen[..., None], par, chi, p.shape)


def loss_con(seq_preds):
    """Sum over joints and interior frames of ||j[t+1] - 2 j[t] + j[t-1]||."""
    p = np.stack([f.joints for f in seq_preds]) if isinstance(seq_preds, (list, tuple)) else np.asarray(seq_preds, dtype=np.float64)
    if p.shape[0] < 3:
        raise SequenceTooShort(f"temporal consistency needs >= 3 frames, got {p.shape[0]}")
    acc = p[2:] - 2 * p[1:-1] + p[:-2]
    unit, norm = _unit(acc)
    grad = np.zeros_like(p)
    grad[2:] += unit
    grad[1:-1] -= 2 * unit
    grad[:-2] += unit
    return float(norm.sum()), grad


# ----------------------------------------------------------------------------
# weighted total


def total_loss(seq_preds, targets2d, K: CameraIntrinsics, topology: SkeletonTopology,
               weights: LossWeights = LossWeights(), manner="ray", use_bone=True, use_sym=True, use_con=True,
               detach_mu=False):
    """Weighted sum of the weak and self supervision terms over a batch of sequences.

    ``seq_preds`` is a list of (T, K, 3) arrays; ``targets2d`` a matching list
    of ``(uv (T, K, 2), confidence (T, K))``. Components are sums over
    joints/bones and frames divided by (frames * K), so the scale does not
    depend on batch size. ``manner`` selects the ray loss ("ray") or the
    pixel-projection baseline ("project3d2d") for the 2D term.
    """
    if manner not in ("ray", "project3d2d"):
        raise ValueError(f"unknown supervision manner {manner!r}")
    n_frames = sum(len(p) for p in seq_preds)
    k = topology.n_joints
    norm = 1.0 / (n_frames * k)
    sums = dict(l2d=0.0, bone=0.0, sym=0.0, con=0.0)
    grads = []
    ray_d = np.zeros(k)
    for pred, (uv, conf) in zip(seq_preds, targets2d):
        pred = np.asarray(pred, dtype=np.float64)
        g = np.zeros_like(pred)
        if manner == "ray":
            v, gv = loss_2d_ray(pred, uv, K, conf, detach_mu=detach_mu)
        else:
            v, gv = loss_rgb_baseline(pred, uv, K, conf)
        sums["l2d"] += v
        g += weights.l2d * norm * gv
        ray_d += ray_terms(pred, uv, K)[0].sum(axis=0)
        if use_bone:
            v, gv = loss_bone(pred, topology)
            sums["bone"] += v
            g += weights.bone * norm * gv
        if use_sym:
            v, gv = loss_sym(pred, topology)
            sums["sym"] += v
            g += weights.sym * norm * gv
        if use_con:
            v, gv = loss_con(pred)
            sums["con"] += v
            g += weights.con * norm * gv
        grads.append(g)
    comp = {key: val * norm for key, val in sums.items()}
    total = weights.l2d * comp["l2d"] + weights.bone * comp["bone"] + weights.sym * comp["sym"] + weights.con * comp["con"]
    report = LossReport(comp["l2d"], comp["bone"], comp["sym"], comp["con"], total, ray_d / n_frames, manner)
    return report, grads
