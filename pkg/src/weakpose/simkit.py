"""Synthetic RGB-D observations of an articulated skeleton.

Each frame carries what a single-view RGB-D rig plus an off-the-shelf 2D
pose estimator would give: a point cloud sampled from body capsules, a noisy
2D pose, and two feature pyramids (heatmap stand-ins for backbone features
of the RGB image and the depth map). The true 3D pose is kept on the frame
but is only reachable through :func:`ground_truth`, which training code
never calls.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, NonPositiveDepth, project
from .skeleton import (
    Pose2D,
    Pose3D,
    SkeletonTopology,
    default_topology,
    interpolate_motion,
    sample_pose,
)

FORMAT = "weakpose-dataset"
VERSION = 1
DATASET_FILE = "dataset.jsonl"
OUTLIER_CONFIDENCE = 0.1


class FormatError(ValueError):
    pass


# capsule radius (m) keyed by the bone's child joint
CAPSULE_RADII = {
    "neck": 0.14, "head": 0.10, "l_shoulder": 0.06, "r_shoulder": 0.06,
    "l_elbow": 0.05, "r_elbow": 0.05, "l_hand": 0.04, "r_hand": 0.04,
    "l_hip": 0.09, "r_hip": 0.09, "l_knee": 0.07, "r_knee": 0.07,
    "l_foot": 0.05, "r_foot": 0.05,
}
DEFAULT_RADIUS = 0.05


def capsule_radii(topology):
    return np.array([CAPSULE_RADII.get(topology.joint_names[c], DEFAULT_RADIUS) for _, c in topology.bones])


@dataclass
class SimConfig:
    n_sequences: int = 200
    frames_per_sequence: int = 30
    frame_rate: float = 30.0
    n_points: int = 2048
    cloud_noise: float = 0.01
    pixel_sigma: float = 3.0
    outlier_rate: float = 0.05
    image_width: int = 192
    image_height: int = 256
    focal: float = 200.0
    pyramid_levels: int = 3
    feature_stride: int = 8
    heatmap_sigma: float = 1.0
    feature_noise: float = 0.02
    depth_range: tuple = (2.0, 4.0)
    max_root_shift: float = 0.3

    def intrinsics(self):
        return CameraIntrinsics(fx=self.focal, fy=self.focal, cx=self.image_width / 2.0,
                                cy=self.image_height / 2.0, width=self.image_width, height=self.image_height)

    def to_json(self):
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        if "depth_range" in d:
            d["depth_range"] = tuple(d["depth_range"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown simulation settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PyramidFeatures:
    levels: list  # (h, w, c) float32 arrays, finest first

    @property
    def n_levels(self):
        return len(self.levels)

    def shapes(self):
        return [tuple(lv.shape) for lv in self.levels]


class Frame:
    """One RGB-D observation. ``gt`` is hidden behind :func:`ground_truth`."""

    __slots__ = ("cloud", "pose2d", "pyramid", "depth_pyramid", "frame_index", "sequence_index",
                 "intrinsics", "_gt_pose3d")

    def __init__(self, cloud, pose2d, pyramid, depth_pyramid, frame_index, sequence_index, intrinsics, gt_pose3d):
        self.cloud = cloud
        self.pose2d = pose2d
        self.pyramid = pyramid
        self.depth_pyramid = depth_pyramid
        self.frame_index = frame_index
        self.sequence_index = sequence_index
        self.intrinsics = intrinsics
        self._gt_pose3d = gt_pose3d

    def __repr__(self):
        return f"Frame(seq={self.sequence_index}, idx={self.frame_index}, points={len(self.cloud)})"


def ground_truth(frame: Frame) -> Pose3D:
    """Evaluation-only access to the true pose."""
    return frame._gt_pose3d


def _set_ground_truth(frame: Frame, pose: Pose3D):
    frame._gt_pose3d = pose


@dataclass
class DatasetHeader:
    intrinsics: CameraIntrinsics
    topology: SkeletonTopology
    config: SimConfig
    seed: int

    def to_json(self):
        return {
            "format": FORMAT,
            "version": VERSION,
            "seed": self.seed,
            "intrinsics": self.intrinsics.to_json(),
            "topology": self.topology.to_json(),
            "config": self.config.to_json(),
        }


@dataclass
class SequenceDataset:
    header: DatasetHeader
    sequences: list = field(default_factory=list)  # list of list[Frame]

    @property
    def n_frames(self):
        return sum(len(s) for s in self.sequences)

    def frames(self):
        for seq in self.sequences:
            yield from seq

    def split(self, test_fraction=0.2):
        """Train/test split by whole sequences; the last ones are test."""
        n_test = max(1, int(round(len(self.sequences) * test_fraction))) if test_fraction > 0 else 0
        n_train = len(self.sequences) - n_test
        return (SequenceDataset(self.header, self.sequences[:n_train]),
                SequenceDataset(self.header, self.sequences[n_train:]))


# ----------------------------------------------------------------------------
# rendering


def _allocate(counts_real, total):
    """Largest-remainder rounding of ``counts_real`` to integers summing to ``total``."""
    base = np.floor(counts_real).astype(int)
    short = total - base.sum()
    order = np.argsort(-(counts_real - base), kind="stable")
    base[order[:short]] += 1
    return base


def _orthonormal(d):
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def render_cloud(pose: Pose3D, topology: SkeletonTopology, n_points, noise_sigma, rng_seed, radii=None):
    """Points on the surfaces of per-bone capsules, plus isotropic noise.

    Points per bone are proportional to bone length. Within a bone the
    capsule surface (cylinder and two hemispherical caps) is sampled
    uniformly by area.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(rng_seed)
    radii = capsule_radii(topology) if radii is None else np.asarray(radii)
    j = pose.joints
    lengths = np.array([np.linalg.norm(j[c] - j[p]) for p, c in topology.bones])
    counts = _allocate(n_points * lengths / lengths.sum(), n_points)
    out = []
    for b, (p, c) in enumerate(topology.bones):
        n = counts[b]
        if n == 0:
            continue
        a, L, r = j[p], lengths[b], radii[b]
        d = (j[c] - a) / L
        e1, e2 = _orthonormal(d)
        on_side = rng.uniform(size=n) < (2 * np.pi * r * L) / (2 * np.pi * r * L + 4 * np.pi * r * r)
        phi = rng.uniform(0, 2 * np.pi, size=n)
        t = rng.uniform(0, 1, size=n)
        # caps: uniform direction on the outward hemisphere
        w = rng.standard_normal((n, 3))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        cap_end = rng.uniform(size=n) < 0.5
        along = w @ d
        w = np.where(((along < 0) & cap_end)[:, None] | ((along > 0) & ~cap_end)[:, None], w - 2 * along[:, None] * d, w)
        side_pts = a + (t * L)[:, None] * d + r * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        cap_pts = np.where(cap_end[:, None], j[c], a) + r * w
        out.append(np.where(on_side[:, None], side_pts, cap_pts))
    cloud = np.concatenate(out, axis=0)
    if noise_sigma > 0:
        cloud = cloud + rng.normal(0.0, noise_sigma, size=cloud.shape)
    return cloud


def synth_pose2d(pose: Pose3D, K: CameraIntrinsics, pixel_sigma, outlier_rate, rng_seed) -> Pose2D:
    if np.any(pose.joints[:, 2] <= 0):
        raise NonPositiveDepth("synth_pose2d needs every joint in front of the camera")
    rng = np.random.default_rng(rng_seed)
    uv = project(pose.joints, K)
    uv = uv + rng.normal(0.0, pixel_sigma, size=uv.shape) if pixel_sigma > 0 else uv
    outlier = rng.uniform(size=len(uv)) < outlier_rate
    random_px = np.stack([rng.uniform(0, K.width, size=len(uv)), rng.uniform(0, K.height, size=len(uv))], axis=-1)
    uv = np.where(outlier[:, None], random_px, uv)
    conf = np.where(outlier, OUTLIER_CONFIDENCE, 1.0)
    return Pose2D(uv, conf)


def level_shape(image_size, level, stride=1):
    h, w = image_size
    f = stride * 2**level
    return h // f, w // f


def _heatmaps(uv, conf, shape, scale, sigma):
    """(h, w, K) Gaussian bumps; pixel i has its center at image coordinate (i + 0.5) * scale."""
    h, w = shape
    xs = (np.arange(w) + 0.5) * scale
    ys = (np.arange(h) + 0.5) * scale
    s = sigma * scale
    amp = np.where(conf >= 0.5, 1.0, 0.5)
    gx = np.exp(-((xs[None, :] - uv[:, 0:1]) ** 2) / (2 * s * s))  # (K, w)
    gy = np.exp(-((ys[None, :] - uv[:, 1:2]) ** 2) / (2 * s * s))  # (K, h)
    return np.einsum("kh,kw,k->hwk", gy, gx, amp)


def synth_pyramid(pose2d: Pose2D, image_size, n_levels, channels=1, rng_seed=0, stride=1,
                  sigma=1.0, noise=0.02) -> PyramidFeatures:
    """Heatmap pyramid for ``pose2d``.

    ``image_size`` is (height, width) in pixels; level l has resolution
    image_size / (stride * 2**l). Each joint owns ``channels`` channels (the
    group repeats the same bump). ``sigma`` is in level pixels, so the bump
    widens in image pixels as levels coarsen. Joints with confidence below
    0.5 render at half amplitude.
    """
    if n_levels < 1:
        raise ValueError("need at least one pyramid level")
    rng = np.random.default_rng(rng_seed)
    levels = []
    for lv in range(n_levels):
        shape = level_shape(image_size, lv, stride)
        hm = _heatmaps(pose2d.joints, pose2d.confidence, shape, stride * 2**lv, sigma)
        if channels > 1:
            hm = np.repeat(hm, channels, axis=-1)
        if noise > 0:
            hm = hm + rng.normal(0.0, noise, size=hm.shape)
        levels.append(hm.astype(np.float32))
    return PyramidFeatures(levels)


def zbuffer(cloud, K: CameraIntrinsics, shape, scale):
    """Nearest depth per cell of an (h, w) grid with cell size ``scale`` px; 0 where empty."""
    h, w = shape
    front = cloud[cloud[:, 2] > 1e-6]
    uv = project(front, K)
    col = np.floor(uv[:, 0] / scale).astype(int)
    row = np.floor(uv[:, 1] / scale).astype(int)
    ok = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    depth = np.full(h * w, np.inf)
    np.minimum.at(depth, row[ok] * w + col[ok], front[ok, 2])
    depth[np.isinf(depth)] = 0.0
    return depth.reshape(h, w)


def synth_depth_pyramid(pose2d, cloud, K, n_levels, rng_seed=0, stride=1, sigma=1.0, noise=0.02):
    """Depth-map stand-in: heatmaps with an independent noise draw plus a z-buffer channel."""
    base = synth_pyramid(pose2d, (K.height, K.width), n_levels, 1, rng_seed, stride, sigma, noise)
    levels = []
    for lv, hm in enumerate(base.levels):
        z = zbuffer(cloud, K, hm.shape[:2], stride * 2**lv)
        levels.append(np.concatenate([hm, z[..., None].astype(np.float32)], axis=-1))
    return PyramidFeatures(levels)


# ----------------------------------------------------------------------------
# dataset


def _frame_seeds(master, seq, frame):
    ss = np.random.SeedSequence([master, seq, frame])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(4)]


def make_frame(pose, topology, K, cfg: SimConfig, seeds, frame_index, sequence_index):
    cloud = render_cloud(pose, topology, cfg.n_points, cfg.cloud_noise, seeds[0]).astype(np.float32)
    p2 = synth_pose2d(pose, K, cfg.pixel_sigma, cfg.outlier_rate, seeds[1])
    rgb = synth_pyramid(p2, (K.height, K.width), cfg.pyramid_levels, 1, seeds[2], cfg.feature_stride,
                        cfg.heatmap_sigma, cfg.feature_noise)
    depth = synth_depth_pyramid(p2, cloud.astype(np.float64), K, cfg.pyramid_levels, seeds[3],
                                cfg.feature_stride, cfg.heatmap_sigma, cfg.feature_noise)
    return Frame(cloud, p2, rgb, depth, frame_index, sequence_index, K, pose)


def generate_sequence_poses(topology, cfg: SimConfig, master_seed, seq):
    ss = np.random.SeedSequence([master_seed, seq, 1 << 20])
    a, b, c = (int(x.generate_state(1)[0]) for x in ss.spawn(3))
    start = sample_pose(topology, a, cfg.depth_range)
    end = sample_pose(topology, b, cfg.depth_range)
    rng = np.random.default_rng(c)
    shift = rng.uniform(-cfg.max_root_shift, cfg.max_root_shift, size=3) * np.array([1.0, 0.3, 1.0])
    root = topology.root
    target = start.joints[root] + shift
    target[2] = np.clip(target[2], *cfg.depth_range)
    end = Pose3D(end.joints - end.joints[root] + target)
    return interpolate_motion(start, end, cfg.frames_per_sequence, cfg.frame_rate, topology)


def generate_dataset(config: SimConfig | None = None, rng_seed=0, topology=None) -> SequenceDataset:
    cfg = config or SimConfig()
    topology = topology or default_topology()
    K = cfg.intrinsics()
    header = DatasetHeader(K, topology, cfg, int(rng_seed))
    sequences = []
    for s in range(cfg.n_sequences):
        motion = generate_sequence_poses(topology, cfg, rng_seed, s)
        frames = [make_frame(pose, topology, K, cfg, _frame_seeds(rng_seed, s, f), f, s)
                  for f, pose in enumerate(motion.frames)]
        sequences.append(frames)
    return SequenceDataset(header, sequences)


def _b64(a, dtype):
    return base64.b64encode(np.ascontiguousarray(a, dtype=dtype).tobytes()).decode("ascii")


def _unb64(s, dtype, shape):
    try:
        raw = base64.b64decode(s, validate=True)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad payload: {exc}") from None
    arr = np.frombuffer(raw, dtype=dtype)
    if arr.size != int(np.prod(shape)):
        raise FormatError(f"payload has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape)


def _frame_record(fr: Frame):
    return {
        "s": fr.sequence_index,
        "f": fr.frame_index,
        "n_points": len(fr.cloud),
        "cloud": _b64(fr.cloud, "<f4"),
        "pose2d": _b64(fr.pose2d.joints, "<f8"),
        "confidence": _b64(fr.pose2d.confidence, "<f8"),
        "rgb": [_b64(lv, "<f4") for lv in fr.pyramid.levels],
        "depth": [_b64(lv, "<f4") for lv in fr.depth_pyramid.levels],
        "gt": _b64(fr._gt_pose3d.joints, "<f8"),
    }


def dataset_path(path):
    path = Path(path)
    return path / DATASET_FILE if path.is_dir() or path.suffix == "" else path


def write_dataset(ds: SequenceDataset, path):
    """Write ``ds`` as JSON lines; ``path`` may be a directory or a file name."""
    path = dataset_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = ds.header.to_json()
    head["n_sequences"] = len(ds.sequences)
    head["sequence_lengths"] = [len(s) for s in ds.sequences]
    head["rgb_levels"] = [list(lv.shape) for lv in ds.sequences[0][0].pyramid.levels] if ds.n_frames else []
    head["depth_levels"] = [list(lv.shape) for lv in ds.sequences[0][0].depth_pyramid.levels] if ds.n_frames else []
    dump = lambda obj: json.dumps(obj, sort_keys=True, separators=(",", ":"))  # noqa: E731
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dump(head) + "\n")
        for fr in ds.frames():
            fh.write(dump(_frame_record(fr)) + "\n")
    return path


def read_dataset(path) -> SequenceDataset:
    path = dataset_path(path)
    with open(path, encoding="ascii") as fh:
        first = fh.readline()
        try:
            head = json.loads(first)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: unreadable header ({exc})") from None
        if head.get("format") != FORMAT:
            raise FormatError(f"{path}: not a {FORMAT} file")
        if head.get("version") != VERSION:
            raise FormatError(f"{path}: version {head.get('version')} (reader supports {VERSION})")
        K = CameraIntrinsics.from_json(head["intrinsics"])
        topo = SkeletonTopology.from_json(head["topology"])
        cfg = SimConfig.from_json(head["config"])
        header = DatasetHeader(K, topo, cfg, int(head["seed"]))
        k = topo.n_joints
        rgb_shapes = [tuple(s) for s in head["rgb_levels"]]
        depth_shapes = [tuple(s) for s in head["depth_levels"]]
        sequences = []
        for s, n in enumerate(head["sequence_lengths"]):
            frames = []
            for f in range(n):
                line = fh.readline()
                if not line:
                    raise FormatError(f"{path}: truncated at sequence {s} frame {f}")
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}: corrupt record at sequence {s} frame {f} ({exc})") from None
                if rec["s"] != s or rec["f"] != f:
                    raise FormatError(f"{path}: out-of-order record {rec['s']}/{rec['f']}, expected {s}/{f}")
                cloud = _unb64(rec["cloud"], "<f4", (rec["n_points"], 3)).astype(np.float32)
                p2 = Pose2D(_unb64(rec["pose2d"], "<f8", (k, 2)).copy(), _unb64(rec["confidence"], "<f8", (k,)).copy())
                rgb = PyramidFeatures([_unb64(b, "<f4", sh).astype(np.float32) for b, sh in zip(rec["rgb"], rgb_shapes)])
                dep = PyramidFeatures([_unb64(b, "<f4", sh).astype(np.float32) for b, sh in zip(rec["depth"], depth_shapes)])
                gt = Pose3D(_unb64(rec["gt"], "<f8", (k, 3)).copy())
                frames.append(Frame(cloud, p2, rgb, dep, f, s, K, gt))
            sequences.append(frames)
        if fh.readline().strip():
            raise FormatError(f"{path}: trailing data after the declared frames")
    return SequenceDataset(header, sequences)


def corrupt_ground_truth(ds: SequenceDataset, rng_seed=0):
    """Copy of ``ds`` whose hidden poses are replaced by noise (label-hygiene checks)."""
    rng = np.random.default_rng(rng_seed)
    seqs = []
    for seq in ds.sequences:
        out = []
        for fr in seq:
            g = Frame(fr.cloud, fr.pose2d, fr.pyramid, fr.depth_pyramid, fr.frame_index, fr.sequence_index,
                      fr.intrinsics, Pose3D(rng.uniform(-50, 50, size=fr._gt_pose3d.joints.shape)))
            out.append(g)
        seqs.append(out)
    return SequenceDataset(replace(ds.header), seqs)
