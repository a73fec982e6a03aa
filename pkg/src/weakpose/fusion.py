"""Stage-1 point-cloud network with image-feature fusion.

Layout: shared-MLP point encoder -> two stacked encoder/decoder stages ->
global max-pool -> regression head. Each stage's encoder keeps a
farthest-point subset of the points, and (unless fusion is disabled)
cross-attends to image tokens produced by an adaptive projector: the depth
pyramid in stage 1, the RGB pyramid in stage 2. The decoder copies each
subset feature back to its nearest full-resolution points and adds the skip.

Clouds are centered on their centroid before encoding and predictions are
shifted back, so the head regresses joint offsets from the centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import diffcore as dc
from .diffcore import Linear, MultiHeadAttention, ParamStore, PointEncoder, ShapeMismatch
from .skeleton import Pose3D


@dataclass
class PointBranchConfig:
    n_joints: int = 15
    width: int = 64
    point_hidden: int = 32
    code_width: int = 64
    image_tokens: int = 32
    heads: int = 4
    downsample: int = 4
    rgb_levels: list = field(default_factory=lambda: [(32, 24, 15), (16, 12, 15), (8, 6, 15)])
    depth_levels: list = field(default_factory=lambda: [(32, 24, 16), (16, 12, 16), (8, 6, 16)])
    use_fusion: bool = True
    head_init_scale: float = 1.0

    def to_json(self):
        d = dict(self.__dict__)
        d["rgb_levels"] = [list(s) for s in self.rgb_levels]
        d["depth_levels"] = [list(s) for s in self.depth_levels]
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["rgb_levels"] = [tuple(s) for s in d["rgb_levels"]]
        d["depth_levels"] = [tuple(s) for s in d["depth_levels"]]
        return cls(**d)


class AdaptiveProjector:
    """Per-level linear regression of flattened feature maps, concatenated,
    then one linear layer to ``n_tokens`` x ``width`` image tokens."""

    def __init__(self, store, name, level_shapes, code_width, n_tokens, width):
        self.level_shapes = [tuple(s) for s in level_shapes]
        self.levels = [Linear(store, f"{name}.level{i}", int(np.prod(s)), code_width)
                       for i, s in enumerate(self.level_shapes)]
        self.align = Linear(store, f"{name}.align", code_width * len(self.level_shapes), n_tokens * width)
        self.n_tokens, self.width = n_tokens, width

    def __call__(self, levels):
        if len(levels) != len(self.levels):
            raise ShapeMismatch(f"projector built for {len(self.levels)} levels, got {len(levels)}")
        codes = []
        for x, layer, shape in zip(levels, self.levels, self.level_shapes):
            x = dc.as_tensor(x)
            if tuple(x.shape[-3:]) != shape:
                raise ShapeMismatch(f"pyramid level {x.shape[-3:]} vs projector {shape}")
            lead = x.shape[:-3]
            # an unbatched frame is run as a batch of one
            codes.append(layer(dc.reshape(x, (*(lead or (1,)), int(np.prod(shape))))))
        out = self.align(dc.concat(codes, axis=-1))
        return dc.reshape(out, (*lead, self.n_tokens, self.width))


def adaptive_project(pyramid, params: AdaptiveProjector, n_points=None):
    """Project one frame's pyramid to an (n_points, C) token matrix."""
    levels = [np.asarray(lv, dtype=np.float64) for lv in getattr(pyramid, "levels", pyramid)]
    if n_points is not None and n_points != params.n_tokens:
        raise ShapeMismatch(f"projector emits {params.n_tokens} tokens, {n_points} requested")
    return params(levels)


class DynamicAlign:
    """Cross-attention from point features to image tokens, residual, layer norm."""

    def __init__(self, store, name, width, heads):
        self.attn = MultiHeadAttention(store, f"{name}.attn", width, heads)
        self.norm = dc.LayerNorm(store, f"{name}.norm", width)

    def __call__(self, point_feats, img_feats):
        return dynamic_align(point_feats, img_feats, self)


def dynamic_align(point_feats, img_feats, params: DynamicAlign):
    point_feats, img_feats = dc.as_tensor(point_feats), dc.as_tensor(img_feats)
    if point_feats.shape[-1] != img_feats.shape[-1]:
        raise ShapeMismatch(f"channel mismatch {point_feats.shape} vs {img_feats.shape}")
    return params.norm(dc.add(point_feats, params.attn(point_feats, img_feats, img_feats)))


# ----------------------------------------------------------------------------
# sampling helpers (depend only on coordinates, so they are precomputed)


def farthest_point_sample(points, m):
    """Indices of ``m`` farthest-point samples.

    Sampling starts from the point farthest from the centroid, which does not
    depend on point order, so the sampled set is permutation invariant.
    ``points`` is (N, 3) or a stack (F, N, 3); stacks are sampled in lockstep.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    f, n, _ = pts.shape
    m = min(m, n)
    x, y, z = (np.ascontiguousarray(pts[..., i]) for i in range(3))
    rows = np.arange(f)
    idx = np.zeros((f, m), dtype=np.int64)
    d = np.full((f, n), np.inf)
    cur = np.argmax(((pts - pts.mean(axis=1, keepdims=True)) ** 2).sum(axis=-1), axis=1)
    for i in range(m):
        idx[:, i] = cur
        dx = x - x[rows, cur][:, None]
        dy = y - y[rows, cur][:, None]
        dz = z - z[rows, cur][:, None]
        np.minimum(d, dx * dx + dy * dy + dz * dz, out=d)
        cur = np.argmax(d, axis=1)
    return idx[0] if single else idx


def nearest_sampled(points, idx):
    """For every point, the position within ``idx`` of its nearest sampled point."""
    points = np.asarray(points, dtype=np.float64)
    return cKDTree(points[idx]).query(points)[1]


@dataclass
class CloudBatch:
    """Network-ready arrays for a stack of frames."""

    points: np.ndarray  # (B, N, 3) centered
    centroid: np.ndarray  # (B, 3)
    fps: np.ndarray  # (B, M)
    nn: np.ndarray  # (B, N)
    rgb: list  # per level (B, h, w, c)
    depth: list

    def __len__(self):
        return len(self.points)


class SamplingCache:
    """Memoizes farthest-point/nearest-neighbour indices per frame."""

    def __init__(self, downsample=4):
        self.downsample = downsample
        self._cache = {}

    @staticmethod
    def _key(frame):
        return (frame.sequence_index, frame.frame_index, id(frame.cloud))

    def warm(self, frames, chunk=256):
        """Fill the cache for many frames at once (vectorized sampling)."""
        todo = [f for f in frames if self._key(f) not in self._cache]
        by_size = {}
        for f in todo:
            by_size.setdefault(len(f.cloud), []).append(f)
        for n, group in by_size.items():
            m = max(1, n // self.downsample)
            for i in range(0, len(group), chunk):
                part = group[i:i + chunk]
                pts = np.stack([f.cloud for f in part]).astype(np.float64)
                fps = farthest_point_sample(pts, m)
                for f, p, ix in zip(part, pts, fps):
                    self._cache[self._key(f)] = (ix, nearest_sampled(p, ix))

    def get(self, frame):
        hit = self._cache.get(self._key(frame))
        if hit is None:
            self.warm([frame])
            hit = self._cache[self._key(frame)]
        return hit


def make_batch(frames, cache: SamplingCache | None = None, downsample=4) -> CloudBatch:
    cache = cache or SamplingCache(downsample)
    clouds = np.stack([f.cloud for f in frames]).astype(np.float64)
    centroid = clouds.mean(axis=1)
    cache.warm(frames)
    samp = [cache.get(f) for f in frames]
    return CloudBatch(
        points=clouds - centroid[:, None, :],
        centroid=centroid,
        fps=np.stack([s[0] for s in samp]),
        nn=np.stack([s[1] for s in samp]),
        rgb=[np.stack([f.pyramid.levels[i] for f in frames]).astype(np.float64)
             for i in range(len(frames[0].pyramid.levels))],
        depth=[np.stack([f.depth_pyramid.levels[i] for f in frames]).astype(np.float64)
               for i in range(len(frames[0].depth_pyramid.levels))],
    )


class PointBranch:
    """The stage-1 network; parameters live in ``self.store``."""

    def __init__(self, cfg: PointBranchConfig | None = None, seed=0):
        self.cfg = cfg = cfg or PointBranchConfig()
        self.store = store = ParamStore(seed)
        c = cfg.width
        self.encoder = PointEncoder(store, "point", 3, c, cfg.point_hidden)
        self.depth_proj = AdaptiveProjector(store, "proj_depth", cfg.depth_levels, cfg.code_width, cfg.image_tokens, c)
        self.rgb_proj = AdaptiveProjector(store, "proj_rgb", cfg.rgb_levels, cfg.code_width, cfg.image_tokens, c)
        self.enc1 = Linear(store, "stage1.enc", 2 * c, c)
        self.align1 = DynamicAlign(store, "stage1.align", c, cfg.heads)
        self.enc2 = Linear(store, "stage2.enc", c, c)
        self.align2 = DynamicAlign(store, "stage2.align", c, cfg.heads)
        self.head = dc.MLP(store, "head", [c, c, 3 * cfg.n_joints], final_relu=False)
        if cfg.head_init_scale != 1.0:
            self.head.layers[-1].w.data *= cfg.head_init_scale

    def active_parameters(self):
        skip = () if self.cfg.use_fusion else ("proj_", "stage1.align", "stage2.align")
        return [n for n in self.store.params if not n.startswith(skip)]

    def forward(self, batch: CloudBatch, use_fusion=None):
        """Return a (B, K, 3) Tensor of camera-frame joints."""
        fuse = self.cfg.use_fusion if use_fusion is None else use_fusion
        c = self.cfg.width
        # [local, global] rows are only consumed at the sampled points, so
        # gather before concatenating
        local = self.encoder.mlp(batch.points)
        glob = dc.max_pool_over_points(local, axis=-2)
        m = batch.fps.shape[-1]
        tiled = dc.mul(dc.reshape(glob, (len(batch), 1, c)), np.ones((m, 1)))
        sampled = dc.concat([dc.gather_rows(local, batch.fps), tiled], axis=-1)
        s1 = dc.relu(self.enc1(sampled))
        if fuse:
            s1 = self.align1(s1, self.depth_proj(batch.depth))
        # decoder 1 copies s1 back to every point and adds the skip; reading
        # it at the sampled points gives s1 + local[fps] since each sampled
        # point is its own nearest sample
        s2 = dc.relu(self.enc2(dc.add(s1, dc.gather_rows(local, batch.fps))))
        if fuse:
            s2 = self.align2(s2, self.rgb_proj(batch.rgb))
        # decoder 2 output: s2[nn] + d1 = (s1 + s2)[nn] + local
        d2 = dc.add(dc.gather_rows(dc.add(s1, s2), batch.nn), local)
        out = self.head(dc.max_pool_over_points(d2, axis=-2))
        out = dc.reshape(out, (len(batch), self.cfg.n_joints, 3))
        return dc.add(out, batch.centroid[:, None, :])

    def predict(self, frames, cache=None, chunk=64):
        out = []
        for i in range(0, len(frames), chunk):
            out.append(self.forward(make_batch(frames[i:i + chunk], cache, self.cfg.downsample)).data)
        return np.concatenate(out, axis=0)


def point_branch_forward(frame, params: PointBranch) -> Pose3D:
    if len(frame.cloud) == 0:
        raise ShapeMismatch("empty point cloud")
    return Pose3D(params.forward(make_batch([frame], downsample=params.cfg.downsample)).data[0])
