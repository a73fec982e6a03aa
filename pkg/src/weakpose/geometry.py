"""Pinhole camera geometry: projection, pixel rays and point-to-ray distance.

Points are numpy arrays with a trailing axis of 3 (x, y, z in meters, camera
frame: x right, y down, z forward). Pixels have a trailing axis of 2 (u, v).
All functions broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DEGENERATE_DISTANCE = 1e-9


class NonPositiveDepth(ValueError):
    pass


class DegenerateGradient(ArithmeticError):
    """Distance gradient requested where the point sits on the ray."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    @property
    def diagonal(self):
        return float(np.hypot(self.width, self.height))

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
                   width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class Ray3:
    origin: np.ndarray
    direction: np.ndarray

    def point_at(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


def project(p, K: CameraIntrinsics):
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"cannot project points with z <= 0 (min z = {z.min():.3g})")
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def back_project(c, K: CameraIntrinsics) -> Ray3:
    c = np.asarray(c, dtype=np.float64)
    d = np.stack([(c[..., 0] - K.cx) / K.fx, (c[..., 1] - K.cy) / K.fy, np.ones(c.shape[:-1])], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return Ray3(origin=np.zeros(d.shape), direction=d)


def uvd_to_camera(uvd, K: CameraIntrinsics):
    """(u, v, depth) -> camera-frame xyz."""
    uvd = np.asarray(uvd, dtype=np.float64)
    z = uvd[..., 2]
    return np.stack([(uvd[..., 0] - K.cx) * z / K.fx, (uvd[..., 1] - K.cy) * z / K.fy, z], axis=-1)


def _residual(p, ray):
    d = np.asarray(p, dtype=np.float64) - ray.origin
    t = np.maximum((d * ray.direction).sum(axis=-1), 0.0)
    return d - t[..., None] * ray.direction, t


def point_to_ray_distance(p, ray: Ray3):
    """Distance from ``p`` to the half-line ``origin + t*direction``, t >= 0."""
    r, _ = _residual(p, ray)
    return np.linalg.norm(r, axis=-1)


def point_to_ray_distance_and_grad(p, ray: Ray3):
    """Vectorized distance and gradient; the gradient is zero where the
    distance is below ``DEGENERATE_DISTANCE``."""
    r, _ = _residual(p, ray)
    dist = np.linalg.norm(r, axis=-1)
    safe = np.where(dist < DEGENERATE_DISTANCE, 1.0, dist)
    grad = np.where((dist < DEGENERATE_DISTANCE)[..., None], 0.0, r / safe[..., None])
    return dist, grad


def point_to_ray_distance_grad(p, ray: Ray3):
    """Gradient of :func:`point_to_ray_distance` with respect to ``p``.

    Whether the closest point is interior or clamped to the origin, the
    gradient is the unit vector from the closest point to ``p``. Raises
    :class:`DegenerateGradient` when the distance is below 1e-9; callers
    that want the zero subgradient should use
    :func:`point_to_ray_distance_and_grad`.
    """
    dist, grad = point_to_ray_distance_and_grad(p, ray)
    if np.any(dist < DEGENERATE_DISTANCE):
        raise DegenerateGradient("point lies on the ray; distance is not differentiable there")
    return grad
