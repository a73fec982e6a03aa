import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakpose import diffcore as dc
from weakpose.diffcore import ParamStore, ShapeMismatch, Tensor, check_gradients, check_parameters
from weakpose.fusion import (
    AdaptiveProjector,
    DynamicAlign,
    PointBranch,
    PointBranchConfig,
    SamplingCache,
    adaptive_project,
    dynamic_align,
    farthest_point_sample,
    make_batch,
    nearest_sampled,
    point_branch_forward,
)
from weakpose.simkit import Frame

GRAD_TOL = 1e-4
SMALL = PointBranchConfig(width=8, point_hidden=6, code_width=5, image_tokens=4, heads=2,
                          rgb_levels=[(4, 3, 2), (2, 2, 2)], depth_levels=[(4, 3, 3), (2, 2, 3)])


def _levels(shapes, seed=0, lead=()):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(*lead, *s)) for s in shapes]


# ----------------------------------------------------------------------------
# adaptive projector


@pytest.mark.parametrize("shapes", [[(4, 3, 2), (2, 2, 2)], [(8, 6, 1), (4, 3, 1), (2, 2, 1)]])
def test_projector_output_shape(shapes):
    proj = AdaptiveProjector(ParamStore(0), "p", shapes, 5, 7, 6)
    assert adaptive_project(_levels(shapes), proj).shape == (7, 6)
    assert proj(_levels(shapes, lead=(3,))).shape == (3, 7, 6)
    with pytest.raises(ShapeMismatch):
        adaptive_project(_levels(shapes), proj, n_points=8)


def test_projector_zero_input_gives_bias():
    shapes = [(4, 3, 2), (2, 2, 2)]
    store = ParamStore(0)
    proj = AdaptiveProjector(store, "p", shapes, 5, 3, 4)
    for name, p in store:
        if name.endswith(".b"):
            p.data[...] = np.random.default_rng(len(name)).normal(size=p.shape)
    out = adaptive_project([np.zeros(s) for s in shapes], proj).data
    codes = np.concatenate([store["p.level0.b"].data, store["p.level1.b"].data])
    expected = codes @ store["p.align.w"].data + store["p.align.b"].data
    assert np.allclose(out, expected.reshape(3, 4), atol=1e-12)


def test_projector_shape_errors():
    shapes = [(4, 3, 2), (2, 2, 2)]
    proj = AdaptiveProjector(ParamStore(0), "p", shapes, 5, 3, 4)
    with pytest.raises(ShapeMismatch):
        proj(_levels(shapes[:1]))
    with pytest.raises(ShapeMismatch):
        proj(_levels([(4, 3, 2), (2, 2, 3)]))


def test_projector_gradient_through_all_levels():
    shapes = [(4, 3, 2), (2, 2, 2)]
    store = ParamStore(1)
    proj = AdaptiveProjector(store, "p", shapes, 5, 3, 4)
    w = np.random.default_rng(2).normal(size=(3, 4))
    fn = lambda a, b: dc.tsum(dc.mul(proj([a, b]), w))  # noqa: E731
    assert check_gradients(fn, _levels(shapes, 3)) <= GRAD_TOL
    lv = _levels(shapes, 4)
    worst, name = check_parameters(store, lambda: dc.tsum(dc.mul(proj(lv), w)))
    assert worst <= GRAD_TOL, name


def test_depth_and_rgb_projectors_are_disjoint():
    net = PointBranch(SMALL, seed=0)
    depth = {n for n in net.store.params if n.startswith("proj_depth")}
    rgb = {n for n in net.store.params if n.startswith("proj_rgb")}
    assert depth and rgb and not depth & rgb
    assert all(net.store[a].data is not net.store[b].data for a in depth for b in rgb)


# ----------------------------------------------------------------------------
# dynamic alignment


def test_dynamic_align_shapes_and_residual():
    store = ParamStore(0)
    al = DynamicAlign(store, "a", 4, 2)
    x = np.random.default_rng(0).normal(size=(6, 4))
    out = dynamic_align(x, x, al).data
    assert out.shape == (6, 4) and np.all(np.isfinite(out))
    expected = dc.layer_norm(dc.add(Tensor(x), al.attn(Tensor(x), Tensor(x), Tensor(x)))).data
    assert np.allclose(out, expected, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        dynamic_align(x, np.zeros((6, 3)), al)


def test_dynamic_align_single_token():
    store = ParamStore(1)
    al = DynamicAlign(store, "a", 4, 2)
    rng = np.random.default_rng(1)
    x, img = rng.normal(size=(5, 4)), rng.normal(size=(1, 4))
    out = dynamic_align(x, img, al).data
    # one key: every query receives the output projection of that token's value
    value = al.attn.o(al.attn.v(Tensor(img))).data
    expected = dc.layer_norm(Tensor(x + value)).data
    assert np.allclose(out, expected, atol=1e-12)


def test_dynamic_align_gradients():
    store = ParamStore(2)
    al = DynamicAlign(store, "a", 4, 2)
    rng = np.random.default_rng(2)
    w = rng.normal(size=(5, 4))
    fn = lambda x, y: dc.tsum(dc.mul(dynamic_align(x, y, al), w))  # noqa: E731
    assert check_gradients(fn, [rng.normal(size=(5, 4)), rng.normal(size=(3, 4))]) <= GRAD_TOL


# ----------------------------------------------------------------------------
# sampling


def test_fps_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 3))
    idx = farthest_point_sample(pts, 10)
    assert len(set(idx.tolist())) == 10
    # reference: greedy max-min selection from the same start
    sel = [int(np.argmax(((pts - pts.mean(0)) ** 2).sum(1)))]
    for _ in range(9):
        d = np.linalg.norm(pts[:, None] - pts[sel][None], axis=-1).min(axis=1)
        sel.append(int(np.argmax(d)))
    assert idx.tolist() == sel
    stack = farthest_point_sample(np.stack([pts, pts[::-1]]), 10)
    assert stack[0].tolist() == sel and sorted(stack[1]) == sorted(39 - np.array(sel))


def test_nearest_sampled_brute_force():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(50, 3))
    idx = farthest_point_sample(pts, 12)
    nn = nearest_sampled(pts, idx)
    ref = np.argmin(np.linalg.norm(pts[:, None] - pts[idx][None], axis=-1), axis=1)
    assert np.array_equal(nn, ref)
    assert np.array_equal(nn[idx], np.arange(12))


def _frames(ds, n=3):
    return list(ds.frames())[:n]


def test_sampling_cache_reuses(tiny_dataset):
    cache = SamplingCache()
    frames = _frames(tiny_dataset)
    cache.warm(frames)
    a = cache.get(frames[0])
    assert cache.get(frames[0]) is a
    assert len(a[0]) == len(frames[0].cloud) // 4


# ----------------------------------------------------------------------------
# full branch


def test_forward_shape_and_finite(tiny_dataset):
    net = PointBranch(seed=0)
    fr = _frames(tiny_dataset, 1)[0]
    pose = point_branch_forward(fr, net)
    assert pose.joints.shape == (15, 3) and np.all(np.isfinite(pose.joints))
    out = net.forward(make_batch(_frames(tiny_dataset, 4)))
    assert out.shape == (4, 15, 3)
    assert np.allclose(out.data[0], pose.joints, atol=1e-12)


def _with_cloud(frame, cloud):
    return Frame(cloud, frame.pose2d, frame.pyramid, frame.depth_pyramid, frame.frame_index,
                 frame.sequence_index, frame.intrinsics, frame._gt_pose3d)


@given(st.integers(0, 10_000))
def test_forward_permutation_invariant(seed):
    net = _NET
    fr = _FRAME
    perm = np.random.default_rng(seed).permutation(len(fr.cloud))
    a = point_branch_forward(fr, net).joints
    b = point_branch_forward(_with_cloud(fr, fr.cloud[perm]), net).joints
    assert np.abs(a - b).max() <= 1e-9


def test_fusion_is_live(tiny_dataset):
    net = PointBranch(seed=3)
    batch = make_batch(_frames(tiny_dataset, 2))
    on = net.forward(batch, use_fusion=True).data
    off = net.forward(batch, use_fusion=False).data
    assert np.abs(on - off).max() > 1e-6
    assert set(net.active_parameters()) == set(net.store.params)
    off_net = PointBranch(PointBranchConfig(use_fusion=False), seed=3)
    assert not any(n.startswith("proj_") for n in off_net.active_parameters())


def test_branch_parameter_gradients(tiny_dataset):
    frames = _frames(tiny_dataset, 2)
    # shrink the pyramids to the small projector shapes
    rng = np.random.default_rng(0)
    batch = make_batch(frames)
    batch.rgb = [rng.normal(size=(2, *s)) for s in SMALL.rgb_levels]
    batch.depth = [rng.normal(size=(2, *s)) for s in SMALL.depth_levels]
    net = PointBranch(SMALL, seed=1)
    w = rng.normal(size=(2, 15, 3))
    loss = lambda: dc.tsum(dc.mul(net.forward(batch), w))  # noqa: E731
    # key biases and the last softmax-invariant directions have zero gradient;
    # the floor keeps their roundoff from dominating the ratio
    worst, name = check_parameters(net.store, loss, max_per_param=8, floor=1e-4)
    assert worst <= GRAD_TOL, name


def test_all_parameters_receive_gradient(tiny_dataset):
    frames = list(tiny_dataset.frames())
    net = PointBranch(seed=0)
    batch = make_batch(frames)
    w = np.random.default_rng(5).normal(size=(len(frames), 15, 3))
    net.store.zero_grad()
    dc.tsum(dc.mul(net.forward(batch), w)).backward()
    dead = []
    for name, p in net.store:
        if p.grad is None or not np.any(p.grad):
            dead.append(name)
    # attention key biases shift every logit of a query equally, so softmax
    # makes them exactly gradient-free; everything else must be live
    assert all(n.endswith("attn.k.b") for n in dead), dead


def test_head_init_scale():
    a = PointBranch(seed=0)
    b = PointBranch(PointBranchConfig(head_init_scale=0.5), seed=0)
    assert np.allclose(b.store["head.1.w"].data, 0.5 * a.store["head.1.w"].data)
    assert PointBranchConfig.from_json(SMALL.to_json()) == SMALL


def test_empty_cloud_rejected(tiny_dataset):
    fr = _frames(tiny_dataset, 1)[0]
    empty = _with_cloud(fr, np.zeros((0, 3)))
    with pytest.raises(ShapeMismatch):
        point_branch_forward(empty, PointBranch(seed=0))


def _setup_module_net():
    from weakpose.simkit import SimConfig, generate_dataset
    ds = generate_dataset(SimConfig(n_sequences=1, frames_per_sequence=2, n_points=128), rng_seed=3)
    return PointBranch(seed=2), ds.sequences[0][0]


_NET, _FRAME = _setup_module_net()
