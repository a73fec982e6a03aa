"""Stage-2 image-modality lifting with pose-guided anchors.

Image tokens from an adaptive projector and one token per 2D joint estimate
are fused, refined by a self-attention encoder, and read by one decoder query
per anchor. Each anchor predicts a weight and a (u, v, depth) offset for every
joint; a joint is the weighted mean of ``anchor + offset`` over its own local
anchors and the shared global grid, computed in uvd space and then
back-projected through the intrinsics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import MLP, LayerNorm, Linear, MultiHeadAttention, ParamStore, ShapeMismatch
from .fusion import AdaptiveProjector
from .geometry import CameraIntrinsics, NonPositiveDepth
from .skeleton import Pose2D, Pose3D

MIN_DEPTH = 1e-3


@dataclass
class LiftConfig:
    n_joints: int = 15
    width: int = 64
    code_width: int = 64
    image_tokens: int = 32
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    n_local: int = 20
    global_grid: tuple = (16, 12)  # rows x cols
    ring_radius: float = 8.0
    ring_depths: tuple = (-0.2, 0.0, 0.2)
    offset_uv_scale: float = 16.0  # pixels per unit of raw offset
    offset_depth_scale: float = 0.5  # meters per unit of raw offset
    depth_ref: float = 3.0  # added to every depth offset; anchors sit at depth 0
    image_size: tuple = (192, 256)  # width, height
    rgb_levels: list = field(default_factory=lambda: [(32, 24, 15), (16, 12, 15), (8, 6, 15)])
    single_anchor: bool = False

    def __post_init__(self):
        if self.single_anchor:
            # one fixed anchor per joint at its 2D estimate, no global grid
            self.n_local = 1
            self.global_grid = (0, 0)
        self.global_grid = tuple(self.global_grid)
        self.ring_depths = tuple(self.ring_depths)
        self.image_size = tuple(self.image_size)

    @property
    def n_global(self):
        return self.global_grid[0] * self.global_grid[1]

    @property
    def n_anchors(self):
        return self.n_local * self.n_joints + self.n_global

    def to_json(self):
        d = dict(self.__dict__)
        d["rgb_levels"] = [list(s) for s in self.rgb_levels]
        for k in ("global_grid", "ring_depths", "image_size"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["rgb_levels"] = [tuple(s) for s in d["rgb_levels"]]
        return cls(**d)


# ----------------------------------------------------------------------------
# anchors


def ring_offsets(n_local, radius, depths):
    """Deterministic initial local offsets: an evenly spaced ring in (u, v),
    depths cycled through ``depths``. The ring is centered on zero."""
    ang = 2 * np.pi * np.arange(n_local) / n_local
    uv = radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if n_local == 1:
        uv = np.zeros((1, 2))
    z = np.array([depths[i % len(depths)] for i in range(n_local)], dtype=np.float64)
    return np.concatenate([uv, z[:, None]], axis=-1)


def global_grid(rows, cols, image_size):
    """(rows*cols, 3) uvd anchors at cell centers, depth 0."""
    w, h = image_size
    if rows * cols == 0:
        return np.zeros((0, 3))
    v = (np.arange(rows) + 0.5) * h / rows
    u = (np.arange(cols) + 0.5) * w / cols
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel(), np.zeros(rows * cols)], axis=-1)


def anchor_scope(n_joints, n_local, n_global):
    """Boolean (A, K): anchor a may contribute to joint k."""
    a = n_local * n_joints + n_global
    scope = np.zeros((a, n_joints), dtype=bool)
    for k in range(n_joints):
        scope[k * n_local:(k + 1) * n_local, k] = True
    scope[n_local * n_joints:, :] = True
    return scope


def scope_indices(n_joints, n_local, n_global):
    """(K, n_local + n_global) anchor indices of each joint's admissible set."""
    glob = np.arange(n_local * n_joints, n_local * n_joints + n_global)
    return np.stack([np.concatenate([np.arange(k * n_local, (k + 1) * n_local), glob])
                     for k in range(n_joints)])


@dataclass
class AnchorSet:
    """Anchors for a batch of frames in (u, v, depth) space.

    ``uvd`` is a Tensor (B, A, 3); the first K*n_local rows are local anchors
    grouped by joint, the rest the global grid.
    """

    uvd: dc.Tensor
    n_joints: int
    n_local: int
    n_global: int

    def __len__(self):
        return self.n_local * self.n_joints + self.n_global

    def local(self, joint):
        return self.uvd.data[..., joint * self.n_local:(joint + 1) * self.n_local, :]

    def global_anchors(self):
        return self.uvd.data[..., self.n_local * self.n_joints:, :]

    def to_json(self):
        return {"n_joints": self.n_joints, "n_local": self.n_local, "n_global": self.n_global,
                "uvd": np.asarray(self.uvd.data).tolist()}


def _sinusoid(n, dim):
    pos = np.arange(n)[:, None]
    i = np.arange(dim // 2)[None, :]
    ang = pos / (10000.0 ** (2 * i / dim))
    pe = np.zeros((n, dim))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe


class AttentionBlock:
    """LN(x + MHA(q, k, v)) followed by LN(x + FFN(x))."""

    def __init__(self, store, name, width, heads):
        self.attn = MultiHeadAttention(store, f"{name}.attn", width, heads)
        self.norm1 = LayerNorm(store, f"{name}.norm1", width)
        self.ffn = MLP(store, f"{name}.ffn", [width, 2 * width, width], final_relu=False)
        self.norm2 = LayerNorm(store, f"{name}.norm2", width)

    def __call__(self, x, q, k, v):
        x = self.norm1(dc.add(x, self.attn(q, k, v)))
        return self.norm2(dc.add(x, self.ffn(x)))


class LiftNet:
    """Stage-2 network; parameters live in ``self.store``."""

    def __init__(self, cfg: LiftConfig | None = None, seed=0):
        self.cfg = cfg = cfg or LiftConfig()
        self.store = store = ParamStore(seed)
        c = cfg.width
        self.proj = AdaptiveProjector(store, "proj_rgb", cfg.rgb_levels, cfg.code_width, cfg.image_tokens, c)
        self.pose_emb = Linear(store, "pose_emb", 3, c)
        self.encoder = [AttentionBlock(store, f"enc{i}", c, cfg.heads) for i in range(cfg.enc_layers)]
        init = np.tile(ring_offsets(cfg.n_local, cfg.ring_radius, cfg.ring_depths), (cfg.n_joints, 1, 1))
        if cfg.single_anchor:
            self.delta = dc.Tensor(init)  # fixed, not trained
        else:
            self.delta = store.add("anchors.delta", init)
        self.queries = store.glorot("anchors.query", cfg.n_anchors, c)
        self.anchor_emb = Linear(store, "anchor_emb", 3, c)
        self.decoder = [AttentionBlock(store, f"dec{i}", c, cfg.heads) for i in range(cfg.dec_layers)]
        self.weight_head = Linear(store, "head.weight", c, cfg.n_joints)
        self.offset_head = Linear(store, "head.offset", c, 3 * cfg.n_joints)
        self.grid = global_grid(*cfg.global_grid, cfg.image_size)
        self.scope = anchor_scope(cfg.n_joints, cfg.n_local, cfg.n_global)
        self.scope_idx = scope_indices(cfg.n_joints, cfg.n_local, cfg.n_global)
        self.pe = _sinusoid(cfg.image_tokens + cfg.n_joints, c)

    # -- stages ------------------------------------------------------------

    def _pose_input(self, uv, conf):
        w, h = self.cfg.image_size
        return np.concatenate([2 * uv[..., :1] / w - 1, 2 * uv[..., 1:] / h - 1, conf[..., None]], axis=-1)

    def fuse(self, img_levels, uv, conf):
        """Image tokens then K pose tokens, with matching positional embeddings."""
        uv = np.asarray(uv, dtype=np.float64)
        if uv.shape[-2] != self.cfg.n_joints:
            raise ShapeMismatch(f"expected {self.cfg.n_joints} joints, got {uv.shape[-2]}")
        img = self.proj(img_levels)
        pose = self.pose_emb(self._pose_input(uv, np.asarray(conf, dtype=np.float64)))
        return dc.concat([img, pose], axis=-2), self.pe

    def encode(self, fused, pe):
        x = fused
        for block in self.encoder:
            qk = dc.add(x, pe)
            x = block(x, qk, qk, x)
        return x

    def generate_anchors(self, uv):
        """Local anchors around each 2D joint plus the fixed global grid."""
        cfg = self.cfg
        uv = np.asarray(uv, dtype=np.float64)
        lead = uv.shape[:-2]
        centers = np.concatenate([uv, np.zeros((*lead, cfg.n_joints, 1))], axis=-1)
        local = dc.add(self.delta, centers[..., :, None, :])  # (..., K, L, 3)
        local = dc.reshape(local, (*lead, cfg.n_joints * cfg.n_local, 3))
        if cfg.n_global:
            grid = dc.Tensor(np.broadcast_to(self.grid, (*lead, cfg.n_global, 3)).copy())
            uvd = dc.concat([local, grid], axis=-2)
        else:
            uvd = local
        return AnchorSet(uvd, cfg.n_joints, cfg.n_local, cfg.n_global)

    def _anchor_input(self, uvd):
        w, h = self.cfg.image_size
        return dc.mul(uvd, np.array([2.0 / w, 2.0 / h, 1.0])) - np.array([1.0, 1.0, 0.0])

    def decode_anchors(self, anchors: AnchorSet, enc, pe):
        """Return (W (..., A, K) softmax over admissible anchors, O (..., A, K, 3))."""
        cfg = self.cfg
        if len(anchors) != cfg.n_anchors:
            raise ShapeMismatch(f"{len(anchors)} anchors, network built for {cfg.n_anchors}")
        emb = self.anchor_emb(self._anchor_input(anchors.uvd))
        x = dc.mul(self.queries, np.ones((*emb.shape[:-2], 1, 1)))
        keys = dc.add(enc, pe)
        for block in self.decoder:
            x = block(x, dc.add(x, emb), keys, enc)
        logits = self.weight_head(x)
        w = dc.softmax(logits, axis=-2, mask=self.scope)
        raw = self.offset_head(x)
        raw = dc.reshape(raw, (*raw.shape[:-1], cfg.n_joints, 3))
        o = dc.add(dc.mul(raw, np.array([cfg.offset_uv_scale, cfg.offset_uv_scale, cfg.offset_depth_scale])),
                   np.array([0.0, 0.0, cfg.depth_ref]))
        return w, o

    def aggregate_uvd(self, anchors: AnchorSet, w, o):
        """Weighted mean of anchor + offset over each joint's admissible set, (..., K, 3) uvd."""
        idx = self.scope_idx  # (K, S)
        k = np.arange(self.cfg.n_joints)[:, None]
        ws = dc.take(w, (Ellipsis, idx, k))  # (..., K, S)
        pts = dc.add(dc.take(o, (Ellipsis, idx, k, slice(None))),
                     dc.take(anchors.uvd, (Ellipsis, idx, slice(None))))  # (..., K, S, 3)
        lead = ws.shape
        return dc.tsum(dc.mul(dc.reshape(ws, (*lead, 1)), pts), axis=-2)

    def forward(self, img_levels, uv, conf, K_cam: CameraIntrinsics):
        """(..., K, 3) camera-frame joints as a Tensor."""
        fused, pe = self.fuse(img_levels, uv, conf)
        enc = self.encode(fused, pe)
        anchors = self.generate_anchors(uv)
        w, o = self.decode_anchors(anchors, enc, pe)
        return uvd_to_xyz(self.aggregate_uvd(anchors, w, o), K_cam)

    def predict(self, frames, K_cam, chunk=64):
        out = []
        for i in range(0, len(frames), chunk):
            levels, uv, conf = frame_inputs(frames[i:i + chunk])
            out.append(self.forward(levels, uv, conf, K_cam).data)
        return np.concatenate(out, axis=0)


def uvd_to_xyz(uvd, K_cam: CameraIntrinsics, strict=False):
    """Differentiable back-projection of (..., 3) uvd; depth is clamped at MIN_DEPTH."""
    uvd = dc.as_tensor(uvd)
    if strict and np.any(uvd.data[..., 2] <= 0):
        raise NonPositiveDepth(f"aggregated depth {uvd.data[..., 2].min():.3g} <= 0")
    z = dc.clamp_min(dc.take(uvd, (Ellipsis, slice(2, 3))), MIN_DEPTH)
    uv = dc.sub(dc.take(uvd, (Ellipsis, slice(0, 2))), np.array([K_cam.cx, K_cam.cy]))
    xy = dc.mul(dc.mul(uv, np.array([1.0 / K_cam.fx, 1.0 / K_cam.fy])), z)
    return dc.concat([xy, z], axis=-1)


def frame_inputs(frames):
    levels = [np.stack([f.pyramid.levels[i] for f in frames]).astype(np.float64)
              for i in range(len(frames[0].pyramid.levels))]
    uv = np.stack([f.pose2d.joints for f in frames])
    conf = np.stack([f.pose2d.confidence for f in frames])
    return levels, uv, conf


# ----------------------------------------------------------------------------
# functional entry points (single frame)


def fuse_pose_features(img_levels, pose2d: Pose2D, params: LiftNet):
    return params.fuse(img_levels, pose2d.joints, pose2d.confidence)


def encode(fused, params: LiftNet):
    return params.encode(fused, params.pe)


def generate_anchors(pose2d: Pose2D, params: LiftNet, K_cam: CameraIntrinsics = None) -> AnchorSet:
    return params.generate_anchors(pose2d.joints)


def decode_anchors(anchors: AnchorSet, F_enc, params: LiftNet):
    return params.decode_anchors(anchors, F_enc, params.pe)


def aggregate_joints(anchors: AnchorSet, W, O, K_cam: CameraIntrinsics, params: LiftNet | None = None) -> Pose3D:
    """Joint = sum over admissible anchors of W * (anchor + offset), back-projected.

    Raises NonPositiveDepth when an aggregated depth is not positive.
    """
    uvd_a = np.asarray(getattr(anchors, "uvd", anchors).data if hasattr(anchors, "uvd") else anchors, dtype=np.float64)
    W = np.asarray(getattr(W, "data", W), dtype=np.float64)
    O = np.asarray(getattr(O, "data", O), dtype=np.float64)
    if not np.allclose(W.sum(axis=-2), 1.0, atol=1e-9):
        raise ValueError("weight columns must sum to 1")
    if params is not None:
        scope = params.scope
    elif isinstance(anchors, AnchorSet):
        scope = anchor_scope(anchors.n_joints, anchors.n_local, anchors.n_global)
    else:
        scope = np.ones(W.shape[-2:], dtype=bool)
    pts = uvd_a[..., :, None, :] + O  # (A, K, 3)
    uvd = (np.where(scope, W, 0.0)[..., None] * pts).sum(axis=-3)
    if np.any(uvd[..., 2] <= 0):
        raise NonPositiveDepth(f"aggregated depth {uvd[..., 2].min():.3g} <= 0")
    return Pose3D(uvd_to_xyz(uvd, K_cam).data)


def lift_forward(img_levels, pose2d: Pose2D, params: LiftNet, K_cam: CameraIntrinsics) -> Pose3D:
    levels = [np.asarray(lv, dtype=np.float64) for lv in getattr(img_levels, "levels", img_levels)]
    return Pose3D(params.forward(levels, pose2d.joints, pose2d.confidence, K_cam).data)


def dump_anchors(net: LiftNet, path):
    """Write the learned local-anchor offsets and the global grid as JSON."""
    doc = {"n_local": net.cfg.n_local, "global_grid": list(net.cfg.global_grid),
           "local_offsets_uvd": np.asarray(net.delta.data).tolist(), "global_uvd": net.grid.tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    return path


def l1_label_loss(pred, labels):
    """Mean over joints of the coordinate-wise L1 distance, and its gradient."""
    diff = np.asarray(pred) - np.asarray(labels)
    n = math.prod(diff.shape[:-1])
    return float(np.abs(diff).sum() / n), np.sign(diff) / n
