import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakpose.geometry import (
    CameraIntrinsics,
    DegenerateGradient,
    NonPositiveDepth,
    Ray3,
    back_project,
    point_to_ray_distance,
    point_to_ray_distance_and_grad,
    point_to_ray_distance_grad,
    project,
    uvd_to_camera,
)

from conftest import dense_ray_distance

AXIS = Ray3(np.zeros(3), np.array([0.0, 0.0, 1.0]))
coords = st.floats(-5, 5, allow_nan=False)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1, 1, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 4, 1, 4, 4)
    K = CameraIntrinsics(1.0, 2.0, 1.5, 1.0, 4, 3)
    assert CameraIntrinsics.from_json(K.to_json()) == K


def test_project_examples(K640):
    assert np.allclose(project([0, 0, 3.7], K640), [320, 240])
    assert np.allclose(project([1, 2, 5], K640), [420, 440])


def test_project_rejects_nonpositive_depth(K640):
    with pytest.raises(NonPositiveDepth):
        project([0.1, 0.2, 0.0], K640)
    with pytest.raises(NonPositiveDepth):
        project([[0, 0, 1], [0, 0, -1]], K640)


def test_back_project_examples(K640):
    assert np.allclose(back_project([320, 240], K640).direction, [0, 0, 1])
    d = back_project([320 + 500, 240], K640).direction
    assert np.allclose(d, np.array([1, 0, 1]) / np.sqrt(2))


def test_back_project_unit_norm(K640):
    rng = np.random.default_rng(0)
    c = rng.uniform(-200, 900, size=(1000, 2))
    assert np.allclose(np.linalg.norm(back_project(c, K640).direction, axis=-1), 1.0, atol=1e-12)


def test_roundtrip_random_pixels(K):
    rng = np.random.default_rng(1)
    c = rng.uniform(-50, 300, size=(1000, 2))
    t = rng.uniform(0.1, 50, size=1000)
    back = project(back_project(c, K).point_at(t), K)
    assert np.abs(back - c).max() <= 1e-9


@given(u=st.floats(-100, 400), v=st.floats(-100, 400), t=st.floats(0.01, 100))
def test_roundtrip_property(u, v, t):
    K = CameraIntrinsics(200.0, 210.0, 96.0, 128.0, 192, 256)
    ray = back_project([u, v], K)
    assert np.allclose(project(ray.point_at(t), K), [u, v], atol=1e-9)


def test_uvd_to_camera_inverts_projection(K):
    p = np.array([[0.3, -0.2, 2.5], [-1.0, 0.4, 4.0]])
    uvd = np.concatenate([project(p, K), p[:, 2:]], axis=-1)
    assert np.allclose(uvd_to_camera(uvd, K), p, atol=1e-12)


def test_distance_examples():
    assert point_to_ray_distance([0, 0, 4.0], AXIS) == 0.0
    assert point_to_ray_distance([3, 4, 10.0], AXIS) == pytest.approx(5.0, abs=1e-15)
    # behind the origin: the half-line clamps to the origin
    assert point_to_ray_distance([0, 0, -2.0], AXIS) == pytest.approx(2.0, abs=1e-15)


def test_distance_matches_dense_sampling():
    rng = np.random.default_rng(2)
    n = 1000
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = rng.uniform(-1, 1, size=(n, 3))
    # keep the closest point inside the sampled range t < 100
    p = o + rng.uniform(-10, 60, size=(n, 1)) * d + rng.normal(scale=2.0, size=(n, 3))
    got = point_to_ray_distance(p, Ray3(o, d))
    ref = dense_ray_distance(p, o, d)
    assert np.abs(got - ref).max() <= 1e-5


def test_gradient_example():
    assert np.allclose(point_to_ray_distance_grad([3, 4, 10.0], AXIS), [0.6, 0.8, 0.0])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    n, h = 1000, 1e-5
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = rng.normal(size=(n, 3))
    p = rng.normal(scale=3.0, size=(n, 3))
    ray = Ray3(o, d)
    g = point_to_ray_distance_grad(p, ray)
    fd = np.zeros_like(p)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd[:, i] = (point_to_ray_distance(p + e, ray) - point_to_ray_distance(p - e, ray)) / (2 * h)
    rel = np.abs(fd - g).max(axis=1) / np.maximum(np.abs(g).max(axis=1), 1e-12)
    # the kink at t* = 0 is the only place differences straddle two formulas
    t = ((p - o) * d).sum(axis=1)
    smooth = np.abs(t) > 10 * h
    assert rel[smooth].max() <= 1e-5


def test_gradient_orthogonal_to_ray_when_interior():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(500, 3)) + [0, 0, 5]
    g = point_to_ray_distance_grad(p, AXIS)
    assert np.abs(g @ AXIS.direction).max() <= 1e-12


def test_degenerate_gradient():
    with pytest.raises(DegenerateGradient):
        point_to_ray_distance_grad([0, 0, 3.0], AXIS)
    dist, g = point_to_ray_distance_and_grad(np.array([0, 0, 3.0]), AXIS)
    assert dist == 0.0 and np.all(g == 0.0)


@given(arrays(np.float64, 3, elements=coords), st.floats(0.01, 3), st.floats(0, 2 * np.pi))
def test_isotropy_about_ray(base, radius, angle):
    # two points at the same foot point and perpendicular distance
    d = base + np.array([0.0, 0.0, 6.0])
    d = d / np.linalg.norm(d)
    ray = Ray3(np.zeros(3), d)
    a = np.cross(d, [1.0, 0, 0]) if abs(d[0]) < 0.9 else np.cross(d, [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(d, a)
    foot = 4.0 * d
    p1 = foot + radius * a
    p2 = foot + radius * (np.cos(angle) * a + np.sin(angle) * b)
    assert abs(point_to_ray_distance(p1, ray) - point_to_ray_distance(p2, ray)) <= 1e-12


def test_projection_anisotropy(K):
    # equal ray distance, different depth: the nearer-to-camera point has the
    # larger pixel error
    c = np.array([150.0, 60.0])
    ray = back_project(c, K)
    perp = np.cross(ray.direction, [0, 1.0, 0])
    perp /= np.linalg.norm(perp)
    for t_near, t_far in [(2.0, 4.0), (1.5, 3.0), (2.5, 6.0)]:
        deep = ray.point_at(t_far) + 0.1 * perp
        shallow = ray.point_at(t_near) + 0.1 * perp
        assert point_to_ray_distance(deep, ray) == pytest.approx(point_to_ray_distance(shallow, ray), abs=1e-12)
        assert np.linalg.norm(project(deep, K) - c) < np.linalg.norm(project(shallow, K) - c)
