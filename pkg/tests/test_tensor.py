import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from scalefuse import tensor as T

dims = st.integers(1, 5)
finite = st.floats(-1e6, 1e6, allow_nan=False)


def tensors(elements=finite):
    return st.tuples(dims, dims, dims).flatmap(lambda s: arrays(np.float64, s, elements=elements))


def test_relu_examples():
    assert np.array_equal(T.relu(-np.ones((2, 3, 3))), np.zeros((2, 3, 3)))
    x = np.arange(12.0).reshape(1, 3, 4)
    assert np.array_equal(T.relu(x), x)
    assert np.array_equal(T.relu(np.array([[[-1.0, 2.5]]])), np.array([[[0.0, 2.5]]]))


def test_normalize_examples():
    x = np.zeros((2, 2, 2))
    x[0, 0, 0], x[0, 1, 1] = 4.0, 2.0
    out = T.normalize_per_channel(x)
    assert out[0, 1, 1] == 0.5 and out[0, 0, 0] == 1.0
    assert np.array_equal(out[1], np.zeros((2, 2)))
    y = np.array([[[0.3, 1.0], [0.0, 0.7]]])
    assert np.array_equal(T.normalize_per_channel(y), y)


def test_normalize_guard_below_eps():
    x = np.full((1, 2, 2), 1e-13)
    assert np.array_equal(T.normalize_per_channel(x), np.zeros((1, 2, 2)))


@given(tensors(st.floats(0, 1e6)))
def test_normalize_range_and_idempotent(x):
    once = T.normalize_per_channel(x)
    assert once.min() >= 0.0 and once.max() <= 1.0
    np.testing.assert_allclose(T.normalize_per_channel(once), once, atol=1e-12, rtol=0)


@given(tensors())
def test_relu_idempotent(x):
    assert np.array_equal(T.relu(T.relu(x)), T.relu(x))


@given(tensors(), st.floats(0, 10))
def test_relu_monotone(x, d):
    assert np.all(T.relu(x) <= T.relu(x + d))


@given(tensors())
def test_elementwise_identities(a):
    assert np.array_equal(T.add(a, np.zeros_like(a)), a)
    assert np.array_equal(T.scale(a, 1.0), a)
    assert np.array_equal(T.sub(a, a), np.zeros_like(a))
    assert np.array_equal(T.hadamard(a, np.ones_like(a)), a)


@pytest.mark.parametrize("op", [T.add, T.sub, T.hadamard])
def test_shape_mismatch_names_both_shapes(op):
    with pytest.raises(T.ShapeError, match=r"\(1, 2, 3\).*\(1, 3, 2\)"):
        op(np.zeros((1, 2, 3)), np.zeros((1, 3, 2)))


def test_as_tensor_rejects_bad_shapes():
    with pytest.raises(T.ShapeError):
        T.as_tensor(np.zeros((2, 2)))
    with pytest.raises(T.ShapeError):
        T.as_tensor(np.zeros((0, 2, 2)))


def test_check_finite():
    T.check_finite(np.zeros((1, 1, 1)))
    with pytest.raises(FloatingPointError):
        T.check_finite(np.array([[[np.nan]]]))


# -- SMT1 ---------------------------------------------------------------------


def test_smt1_layout_by_hand():
    x = np.array([[[1.0, -2.0]]])
    raw = T.to_bytes(x)
    expected = b"SMT1" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    expected += np.array([1.0, -2.0], dtype="<f8").tobytes()
    assert raw == expected


@given(tensors(st.floats(allow_nan=False)))
def test_smt1_round_trip_bit_exact(x):
    t, end = T.from_buffer(T.to_bytes(x))
    assert end == 12 + 4 + 8 * x.size
    assert t.tobytes() == x.tobytes()


def test_load_save(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 4, 5))
    p = tmp_path / "a.smt1"
    T.save(x, p)
    assert np.array_equal(T.load(p), x)


@pytest.mark.parametrize(
    "mutate, msg",
    [
        (lambda b: b[:-1], "truncated SMT1 payload"),
        (lambda b: b[:10], "truncated SMT1 header"),
        (lambda b: b"XXXX" + b[4:], "bad magic"),
        (lambda b: b + b"\0", "trailing bytes"),
    ],
)
def test_load_rejects_corruption(tmp_path, mutate, msg):
    p = tmp_path / "bad.smt1"
    p.write_bytes(mutate(T.to_bytes(np.ones((1, 2, 2)))))
    with pytest.raises(T.FormatError, match=msg) as e:
        T.load(p)
    assert str(p) in str(e.value)
