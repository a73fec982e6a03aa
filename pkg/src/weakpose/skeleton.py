"""Kinematic skeleton: topology, forward-kinematics pose sampling, motion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UP = (0.0, -1.0, 0.0)  # camera y points down
DOWN = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: tuple
    bones: tuple  # (parent, child) joint indices
    symmetric_pairs: tuple  # (left bone, right bone) indices into ``bones``
    rest_lengths: tuple

    def __post_init__(self):
        k = len(self.joint_names)
        if k < 2:
            raise ValueError("a skeleton needs at least two joints")
        if len(self.bones) != k - 1:
            raise ValueError(f"a tree over {k} joints has {k - 1} bones, got {len(self.bones)}")
        if len(self.rest_lengths) != len(self.bones):
            raise ValueError("one rest length per bone")
        if any(length <= 0 for length in self.rest_lengths):
            raise ValueError("rest lengths must be positive")
        children = [c for _, c in self.bones]
        if len(set(children)) != len(children):
            raise ValueError("a joint has two parents")
        roots = set(range(k)) - set(children)
        if len(roots) != 1:
            raise ValueError(f"expected a single root, found {sorted(roots)}")
        # every joint must reach the root
        parent = {c: p for p, c in self.bones}
        for j in range(k):
            seen = set()
            while j in parent:
                if j in seen:
                    raise ValueError("bone graph has a cycle")
                seen.add(j)
                j = parent[j]
        for a, b in self.symmetric_pairs:
            if a == b or not (0 <= a < len(self.bones) and 0 <= b < len(self.bones)):
                raise ValueError(f"bad symmetric pair ({a}, {b})")

    @property
    def n_joints(self):
        return len(self.joint_names)

    @property
    def root(self):
        return (set(range(self.n_joints)) - {c for _, c in self.bones}).pop()

    def parent_of(self):
        par = np.full(self.n_joints, -1)
        for p, c in self.bones:
            par[c] = p
        return par

    def bone_order(self):
        """Bone indices sorted so every parent bone precedes its children."""
        depth = {self.root: 0}
        pending = list(range(len(self.bones)))
        order = []
        while pending:
            nxt = []
            for b in pending:
                p, c = self.bones[b]
                if p in depth:
                    depth[c] = depth[p] + 1
                    order.append(b)
                else:
                    nxt.append(b)
            pending = nxt
        return order

    def chain(self, joint):
        """Bone indices from the root down to ``joint``."""
        by_child = {c: b for b, (_, c) in enumerate(self.bones)}
        out = []
        while joint in by_child:
            b = by_child[joint]
            out.append(b)
            joint = self.bones[b][0]
        return out[::-1]

    def to_json(self):
        return {
            "joint_names": list(self.joint_names),
            "bones": [list(b) for b in self.bones],
            "symmetric_pairs": [list(p) for p in self.symmetric_pairs],
            "rest_lengths": list(self.rest_lengths),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            joint_names=tuple(d["joint_names"]),
            bones=tuple(tuple(int(i) for i in b) for b in d["bones"]),
            symmetric_pairs=tuple(tuple(int(i) for i in p) for p in d["symmetric_pairs"]),
            rest_lengths=tuple(float(x) for x in d["rest_lengths"]),
        )


@dataclass
class Pose3D:
    joints: np.ndarray  # (K, 3)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ValueError(f"Pose3D joints must be (K, 3), got {self.joints.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("Pose3D has non-finite coordinates")


@dataclass
class Pose2D:
    joints: np.ndarray  # (K, 2) pixels
    confidence: np.ndarray = None  # (K,)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.confidence is None:
            self.confidence = np.ones(len(self.joints))
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValueError("confidences must lie in [0, 1]")


@dataclass
class MotionSequence:
    frames: list = field(default_factory=list)
    frame_rate: float = 30.0

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("a motion sequence needs at least one frame")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def as_array(self):
        return np.stack([f.joints for f in self.frames])


# ----------------------------------------------------------------------------
# default 15-joint layout

JOINTS = (
    "head", "neck", "r_shoulder", "l_shoulder", "r_elbow", "l_elbow", "r_hand", "l_hand",
    "torso", "r_hip", "l_hip", "r_knee", "l_knee", "r_foot", "l_foot",
)
_J = {n: i for i, n in enumerate(JOINTS)}

# child joint -> (parent, length m, rest direction in the body frame)
# body frame: x toward the subject's left (image right when facing the camera),
# y down, z away from the camera
_BONES = (
    ("neck", "torso", 0.50, UP),
    ("head", "neck", 0.25, UP),
    ("l_shoulder", "neck", 0.18, (1.0, 0.0, 0.0)),
    ("r_shoulder", "neck", 0.18, (-1.0, 0.0, 0.0)),
    ("l_elbow", "l_shoulder", 0.28, DOWN),
    ("r_elbow", "r_shoulder", 0.28, DOWN),
    ("l_hand", "l_elbow", 0.27, DOWN),
    ("r_hand", "r_elbow", 0.27, DOWN),
    ("l_hip", "torso", 0.17, (0.45, 0.9, 0.0)),
    ("r_hip", "torso", 0.17, (-0.45, 0.9, 0.0)),
    ("l_knee", "l_hip", 0.43, DOWN),
    ("r_knee", "r_hip", 0.43, DOWN),
    ("l_foot", "l_knee", 0.42, DOWN),
    ("r_foot", "r_knee", 0.42, DOWN),
)

_PAIRS = (("l_shoulder", "r_shoulder"), ("l_elbow", "r_elbow"), ("l_hand", "r_hand"),
          ("l_hip", "r_hip"), ("l_knee", "r_knee"), ("l_foot", "r_foot"))


def default_topology() -> SkeletonTopology:
    bones = tuple((_J[p], _J[c]) for c, p, _, _ in _BONES)
    by_child = {c: b for b, (c, _, _, _) in enumerate(_BONES)}
    pairs = tuple((by_child[left], by_child[right]) for left, right in _PAIRS)
    return SkeletonTopology(
        joint_names=JOINTS,
        bones=bones,
        symmetric_pairs=pairs,
        rest_lengths=tuple(length for _, _, length, _ in _BONES),
    )


# ----------------------------------------------------------------------------
# forward kinematics

def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


DEG = np.pi / 180.0

# Articulation limits in degrees. Flexion about the body x axis: negative
# values swing the limb toward the camera (-z).
LIMITS = {
    "root_yaw": (-40, 40), "root_pitch": (-8, 8), "root_roll": (-6, 6),
    "spine_pitch": (-5, 20), "spine_roll": (-10, 10),
    "head_pitch": (-20, 20), "head_roll": (-15, 15),
    "shoulder_flex": (-150, 40), "shoulder_abd": (0, 100),
    "elbow": (0, 150),
    "hip_flex": (-90, 20), "hip_abd": (0, 35),
    "knee": (0, 150),
}


def _draw(rng, key):
    lo, hi = LIMITS[key]
    return rng.uniform(lo, hi) * DEG


def _local_rotations(topology, rng):
    """Per-bone rotation relative to the parent bone's frame."""
    rots = {}
    for b, (_, c) in enumerate(topology.bones):
        name = topology.joint_names[c]
        side = 1.0 if name.startswith("l_") else -1.0
        if name == "neck":
            r = _rx(_draw(rng, "spine_pitch")) @ _rz(_draw(rng, "spine_roll"))
        elif name == "head":
            r = _rx(_draw(rng, "head_pitch")) @ _rz(_draw(rng, "head_roll"))
        elif name.endswith("_elbow"):
            r = _rz(-side * _draw(rng, "shoulder_abd")) @ _rx(_draw(rng, "shoulder_flex"))
        elif name.endswith("_hand"):
            r = _rx(-_draw(rng, "elbow"))
        elif name.endswith("_knee"):
            r = _rz(-side * _draw(rng, "hip_abd")) @ _rx(_draw(rng, "hip_flex"))
        elif name.endswith("_foot"):
            r = _rx(_draw(rng, "knee"))
        elif name in _J:
            r = np.eye(3)
        else:
            # unknown joint: random swing inside a 30 degree cone
            r = _rx(rng.uniform(-30, 30) * DEG) @ _rz(rng.uniform(-30, 30) * DEG)
        rots[b] = r
    return rots


def _rest_directions(topology):
    known = {c: np.array(d, dtype=np.float64) / np.linalg.norm(d) for c, _, _, d in _BONES}
    return [known.get(topology.joint_names[c], np.array(DOWN)) for _, c in topology.bones]


def forward_kinematics(topology, root_position, root_rotation, local_rotations):
    rest = _rest_directions(topology)
    joints = np.zeros((topology.n_joints, 3))
    joints[topology.root] = root_position
    frame = {topology.root: root_rotation}
    for b in topology.bone_order():
        p, c = topology.bones[b]
        r = frame[p] @ local_rotations[b]
        frame[c] = r
        joints[c] = joints[p] + topology.rest_lengths[b] * (r @ rest[b])
    return joints


def sample_pose(topology: SkeletonTopology, rng_seed, depth_range=(2.0, 4.0)) -> Pose3D:
    """Random plausible pose with the root at depth ``depth_range`` m.

    Bone lengths equal ``topology.rest_lengths`` exactly (up to rounding).
    The root is placed near the optical axis so the body stays in view.
    """
    rng = np.random.default_rng(rng_seed)
    root_rot = _ry(_draw(rng, "root_yaw")) @ _rx(_draw(rng, "root_pitch")) @ _rz(_draw(rng, "root_roll"))
    z = rng.uniform(*depth_range)
    root = np.array([rng.uniform(-0.06, 0.06) * z, rng.uniform(-0.04, 0.04) * z, z])
    joints = forward_kinematics(topology, root, root_rot, _local_rotations(topology, rng))
    if np.any(joints[:, 2] <= 0):
        raise RuntimeError("sampled pose left the frustum")
    return Pose3D(joints)


def bone_length(pose: Pose3D, bone, topology: SkeletonTopology | None = None):
    """Length of ``bone``: an index into ``topology.bones`` or a (parent, child) pair."""
    if topology is not None and np.isscalar(bone):
        bone = topology.bones[int(bone)]
    p, c = bone
    j = pose.joints if isinstance(pose, Pose3D) else np.asarray(pose)
    return float(np.linalg.norm(j[c] - j[p]))


def bone_lengths(joints, topology):
    """All bone lengths for (..., K, 3) joints -> (..., n_bones)."""
    joints = np.asarray(joints)
    par = np.array([p for p, _ in topology.bones])
    chi = np.array([c for _, c in topology.bones])
    return np.linalg.norm(joints[..., chi, :] - joints[..., par, :], axis=-1)


# ----------------------------------------------------------------------------
# motion

def ease(s):
    """Cubic ease 3s^2 - 2s^3: zero velocity at both ends."""
    return s * s * (3.0 - 2.0 * s)


def _slerp(a, b, s):
    """Spherical interpolation between unit vectors a, b (rows) at scalar s."""
    dot = np.clip((a * b).sum(-1), -1.0, 1.0)
    theta = np.arccos(dot)
    small = theta < 1e-9
    sin_t = np.where(small, 1.0, np.sin(theta))
    wa = np.where(small, 1.0 - s, np.sin((1.0 - s) * theta) / sin_t)
    wb = np.where(small, s, np.sin(s * theta) / sin_t)
    out = wa[:, None] * a + wb[:, None] * b
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def bone_directions(joints, topology):
    par = np.array([p for p, _ in topology.bones])
    chi = np.array([c for _, c in topology.bones])
    d = joints[chi] - joints[par]
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def bone_angles(start: Pose3D, end: Pose3D, topology):
    """Great-circle angle each bone direction sweeps between two poses."""
    a = bone_directions(start.joints, topology)
    b = bone_directions(end.joints, topology)
    return np.arccos(np.clip((a * b).sum(-1), -1.0, 1.0))


def interpolate_motion(start: Pose3D, end: Pose3D, n_frames, frame_rate=30.0, topology=None) -> MotionSequence:
    """Smooth motion from ``start`` to ``end``.

    Each bone direction follows the great circle between its endpoint
    directions and the root translates along a straight line, both timed by
    the cubic ease, so bone lengths are preserved on every frame. Bone
    lengths are taken from ``start``.
    """
    if n_frames < 2:
        raise ValueError("n_frames must be at least 2")
    topology = topology or default_topology()
    if start.joints.shape != end.joints.shape or start.joints.shape[0] != topology.n_joints:
        raise ValueError("start and end must share the topology")
    root = topology.root
    lengths = bone_lengths(start.joints, topology)
    da = bone_directions(start.joints, topology)
    db = bone_directions(end.joints, topology)
    order = topology.bone_order()
    frames = [Pose3D(start.joints.copy())]
    for i in range(1, n_frames - 1):
        s = ease(i / (n_frames - 1))
        dirs = _slerp(da, db, s)
        j = np.zeros_like(start.joints)
        j[root] = (1 - s) * start.joints[root] + s * end.joints[root]
        for b in order:
            p, c = topology.bones[b]
            j[c] = j[p] + lengths[b] * dirs[b]
        frames.append(Pose3D(j))
    frames.append(Pose3D(end.joints.copy()))
    return MotionSequence(frames=frames, frame_rate=frame_rate)


def second_difference_bound(start: Pose3D, end: Pose3D, n_frames, topology):
    """Per-joint bound on |p[i+1] - 2 p[i] + p[i-1]| for :func:`interpolate_motion`.

    Along the path, joint j is root(s) + sum_b L_b d_b(s) with s = ease(tau).
    With |d'| = theta_b, |d''| = theta_b^2, max|ease'| = 3/2 and
    max|ease''| = 6, the second tau-derivative is bounded by
    6|root delta| + sum_b L_b (9/4 theta_b^2 + 6 theta_b), and a central
    second difference with step h is at most h^2 times that.
    """
    h = 1.0 / (n_frames - 1)
    theta = bone_angles(start, end, topology)
    lengths = bone_lengths(start.joints, topology)
    droot = np.linalg.norm(end.joints[topology.root] - start.joints[topology.root])
    out = np.zeros(topology.n_joints)
    for j in range(topology.n_joints):
        ch = topology.chain(j)
        out[j] = 6.0 * droot + sum(lengths[b] * (2.25 * theta[b] ** 2 + 6.0 * theta[b]) for b in ch)
    return out * h * h


def step_bound(start: Pose3D, end: Pose3D, n_frames, topology):
    """Per-joint bound on frame-to-frame displacement: h * max|dp/dtau|."""
    h = 1.0 / (n_frames - 1)
    theta = bone_angles(start, end, topology)
    lengths = bone_lengths(start.joints, topology)
    droot = np.linalg.norm(end.joints[topology.root] - start.joints[topology.root])
    return np.array([1.5 * h * (droot + sum(lengths[b] * theta[b] for b in topology.chain(j)))
                     for j in range(topology.n_joints)])
