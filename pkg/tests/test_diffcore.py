import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakpose import diffcore as dc
from weakpose.diffcore import (
    CheckpointError,
    NonFiniteValue,
    ParamStore,
    ShapeMismatch,
    Tensor,
    adamw_step,
    check_gradients,
    check_parameters,
    directional_check,
    load_into,
    read_manifest,
    save_store,
)

from gradcases import OP_CASES

GRAD_TOL = 1e-5


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    fn, inputs = OP_CASES[name]
    assert check_gradients(fn, inputs) <= GRAD_TOL
    assert directional_check(fn, inputs) <= GRAD_TOL


def test_layer_parameter_gradients():
    store = ParamStore(0)
    mlp = dc.MLP(store, "mlp", [3, 6, 4], final_relu=False)
    ln = dc.LayerNorm(store, "ln", 4)
    mha = dc.MultiHeadAttention(store, "mha", 4, heads=2)
    x = np.random.default_rng(0).normal(size=(5, 3))
    w = np.random.default_rng(1).normal(size=(5, 4))

    def loss():
        h = ln(mlp(Tensor(x)))
        return dc.tsum(dc.mul(mha(h, h, h), w))
    worst, name = check_parameters(store, loss, floor=1e-4)
    # key-projection biases get exactly zero gradient (softmax shift
    # invariance), so the floor absorbs their roundoff-level differences
    assert worst <= GRAD_TOL, name


def test_matmul_identity():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(dc.matmul(np.eye(4), x).data, x)


def test_softmax_single_entry():
    assert dc.softmax(Tensor(np.array([3.7])), axis=-1).data.tolist() == [1.0]


def test_softmax_mask_zeroes_excluded():
    m = np.array([[True, False, True]])
    s = dc.softmax(Tensor(np.array([[1.0, 50.0, 2.0]])), axis=-1, mask=m).data
    assert s[0, 1] == 0.0 and s.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        dc.softmax(Tensor(np.zeros((1, 2))), mask=np.zeros((1, 2), bool))


@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(a):
    s = dc.softmax(Tensor(a), axis=-1).data
    assert np.all(s >= 0) and np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(0)
    q, k, v = rng.normal(size=(4, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
    out = dc.attention(q, k, v).data
    assert np.allclose(out, np.repeat(v, 4, axis=0), atol=1e-15)


def test_attention_dominant_key():
    c = 4
    q = np.zeros((1, c))
    q[0, 0] = 1.0
    k = np.zeros((3, c))
    k[1, 0] = 20.0 * np.sqrt(c)  # logit gap 20 after 1/sqrt(C) scaling
    v = np.array([[1.0, 0.0], [5.0, -3.0], [2.0, 2.0]])
    out = dc.attention(q, k, v).data
    assert np.abs(out[0] - v[1]).max() <= 1e-6


def test_attention_shape_errors():
    with pytest.raises(ShapeMismatch):
        dc.attention(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeMismatch):
        dc.attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((5, 2)))


@given(st.integers(0, 1000), st.integers(1, 12))
def test_point_encoder_permutation_invariant(seed, n):
    store = ParamStore(seed)
    enc = dc.PointEncoder(store, "enc", 3, width=8, hidden=6)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    perm = rng.permutation(n)
    per_a, glob_a = enc(Tensor(x))
    per_b, glob_b = enc(Tensor(x[perm]))
    assert np.allclose(glob_a.data, glob_b.data, atol=1e-12)
    assert np.allclose(per_a.data[perm], per_b.data, atol=1e-12)
    assert per_a.shape == (n, 16)


def test_point_encoder_single_point():
    store = ParamStore(2)
    enc = dc.PointEncoder(store, "enc", 3, width=8, hidden=6)
    x = np.array([[0.1, -0.4, 2.0]])
    per, glob = enc(Tensor(x))
    assert np.array_equal(glob.data, per.data[0, :8])
    assert np.array_equal(per.data[0, 8:], glob.data)
    with pytest.raises(ShapeMismatch):
        enc(Tensor(np.zeros((0, 3))))


def test_linear_shape_check():
    store = ParamStore(0)
    lin = dc.Linear(store, "l", 3, 2)
    with pytest.raises(ShapeMismatch):
        lin(Tensor(np.zeros((4, 5))))


def test_matmul_shape_errors():
    with pytest.raises(ShapeMismatch):
        dc.matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeMismatch):
        dc.matmul(np.zeros(3), np.zeros((3, 2)))


def test_nonfinite_values_raise():
    with pytest.raises(NonFiniteValue):
        Tensor(np.array([1.0, np.nan]))
    big = Tensor(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteValue):
        dc.mul(big, 10.0)


def test_backward_needs_scalar_or_explicit_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    y = dc.scale(x, 2.0)
    with pytest.raises(ShapeMismatch):
        y.backward()
    y.backward(np.ones(3))
    assert np.array_equal(x.grad, [2.0, 2.0, 2.0])


def test_gradient_accumulates_over_shared_use():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    dc.tsum(dc.add(dc.mul(x, x), x)).backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def _small_store(seed=0):
    store = ParamStore(seed)
    dc.Linear(store, "a", 3, 4)
    dc.LayerNorm(store, "n", 4)
    return store


def test_adamw_zero_grad_zero_decay_is_identity():
    store = _small_store()
    before = {n: p.data.copy() for n, p in store}
    adamw_step(store, grads={}, lr=1e-2, weight_decay=0.0)
    assert all(np.array_equal(before[n], p.data) for n, p in store)


def test_adamw_defaults():
    import inspect
    sig = inspect.signature(adamw_step)
    assert sig.parameters["lr"].default == 1e-4
    assert sig.parameters["weight_decay"].default == 1e-4


def test_adamw_descends_quadratic():
    store = ParamStore(0)
    theta = store.add("theta", np.array([2.0, -1.5, 0.7]))
    prev = float((theta.data ** 2).sum())
    for _ in range(50):
        store.zero_grad()
        dc.tsum(dc.mul(theta, theta)).backward()
        adamw_step(store, lr=1e-2)
        cur = float((theta.data ** 2).sum())
        assert cur < prev
        prev = cur


def test_adamw_rejects_wrong_gradient_shape():
    store = _small_store()
    with pytest.raises(ShapeMismatch):
        adamw_step(store, grads={"a.w": np.zeros(2)})


def test_checkpoint_roundtrip(tmp_path):
    store = _small_store(3)
    store.zero_grad()
    x = Tensor(np.ones((2, 3)))
    w = store["a.w"]
    dc.tsum(dc.matmul(x, w)).backward()
    adamw_step(store)
    path = save_store(store, tmp_path / "p.json", meta={"tag": "x"})
    other = _small_store(99)
    doc = read_manifest(path)
    load_into(other, doc)
    assert doc["meta"] == {"tag": "x"} and other.step == store.step == 1
    for n, p in store:
        assert np.array_equal(p.data, other[n].data)
        assert np.array_equal(store.m[n], other.m[n]) and np.array_equal(store.v[n], other.v[n])


def test_checkpoint_errors(tmp_path):
    store = _small_store()
    path = save_store(store, tmp_path / "p.json")
    bad = ParamStore(0)
    dc.Linear(bad, "a", 3, 5)
    with pytest.raises(CheckpointError):
        load_into(bad, read_manifest(path))
    junk = tmp_path / "junk.json"
    junk.write_text("not json")
    with pytest.raises(CheckpointError):
        read_manifest(junk)


def test_seeded_stores_are_identical():
    a, b = _small_store(5), _small_store(5)
    assert all(np.array_equal(p.data, b[n].data) for n, p in a)
    c = _small_store(6)
    assert not np.array_equal(a["a.w"].data, c["a.w"].data)
