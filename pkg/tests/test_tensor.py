import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuenet.tensor import (
    Shape2D,
    ShapeError,
    flat_index,
    get,
    hadamard,
    map_elementwise,
    matvec,
    strides_of,
    tensor_new,
    transpose2d,
    unflat_index,
)
from cuenet.layers import sigmoid


def naive_matvec(w, a):
    out = []
    for j in range(w.shape[0]):
        acc = 0.0
        for k in range(w.shape[1]):
            acc += float(w[j, k]) * float(a[k])
        out.append(acc)
    return np.array(out)


class TestTensorNew:
    def test_zero_fill(self):
        t = tensor_new([2, 2], 0)
        assert t.shape == (2, 2) and not t.any()

    def test_constant_fill(self):
        assert tensor_new([3], 1.5).tolist() == [1.5, 1.5, 1.5]

    def test_element_count(self):
        assert tensor_new([2, 3, 4], 0).size == 24

    @pytest.mark.parametrize("dims", [[], [0], [2, -1]])
    def test_rejects_bad_dims(self, dims):
        with pytest.raises(ShapeError):
            tensor_new(dims, 0)

    def test_default_dtype_is_float32(self):
        assert tensor_new([1]).dtype == np.float32


def test_hadamard():
    a = np.array([1.0, 2, 3])
    assert hadamard(a, np.array([4.0, 5, 6])).tolist() == [4, 10, 18]
    assert np.array_equal(hadamard(a, np.ones(3)), a)
    assert not hadamard(a, np.zeros(3)).any()


def test_hadamard_never_broadcasts():
    with pytest.raises(ShapeError):
        hadamard(np.ones((2, 2)), np.ones(2))


class TestMatvec:
    def test_identity(self):
        assert matvec(np.eye(2), np.array([3.0, 7.0])).tolist() == [3, 7]

    def test_hand(self):
        assert matvec(np.array([[1.0, 2], [3, 4]]), np.array([1.0, 1])).tolist() == [3, 7]

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            matvec(np.ones((2, 3)), np.ones(2))

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
    def test_against_loop_oracle(self, dtype, tol):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            w = rng.standard_normal((5, 4)).astype(dtype)
            a = rng.standard_normal(4).astype(dtype)
            ref = naive_matvec(w, a)
            got = matvec(w, a).astype(np.float64)
            assert np.all(np.abs(got - ref) <= tol * np.maximum(1.0, np.abs(ref)))


class TestTranspose:
    def test_hand(self):
        assert transpose2d(np.array([[1, 2], [3, 4]])).tolist() == [[1, 3], [2, 4]]

    def test_involution(self):
        w = np.arange(15.0).reshape(3, 5)
        assert np.array_equal(transpose2d(transpose2d(w)), w)

    def test_shape(self):
        assert transpose2d(np.zeros((3, 5))).shape == (5, 3)

    def test_rank_error(self):
        with pytest.raises(ShapeError):
            transpose2d(np.zeros(3))


class TestMapElementwise:
    def test_negate(self):
        assert map_elementwise(np.array([1.0, -2.0]), lambda v: -v).tolist() == [-1, 2]

    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(map_elementwise(a, lambda v: v), a)

    def test_sigmoid_on_zeros(self):
        assert map_elementwise(np.zeros(4), lambda v: float(sigmoid(np.array([v]))[0])).tolist() == [0.5] * 4

    def test_ufunc(self):
        assert map_elementwise(np.array([0.0]), np.exp).tolist() == [1.0]


def test_shape2d():
    s = Shape2D(180, 240, 3)
    assert s.dims == (3, 180, 240)
    with pytest.raises(ShapeError):
        Shape2D(0, 1, 1)


def test_indexing_is_bounds_checked():
    a = np.arange(6.0).reshape(2, 3)
    assert get(a, (1, 2)) == 5.0
    for bad in [(2, 0), (0, 3), (-1, 0)]:
        with pytest.raises(IndexError):
            get(a, bad)


def test_row_major_strides():
    assert strides_of([2, 3, 4]) == (12, 4, 1)


dims_st = st.lists(st.integers(1, 5), min_size=1, max_size=4)


@given(dims_st, st.data())
def test_flat_index_round_trip(dims, data):
    size = math.prod(dims)
    i = data.draw(st.integers(0, size - 1))
    coord = unflat_index(dims, i)
    assert flat_index(dims, coord) == i
    # agrees with numpy's row-major layout
    assert np.ravel_multi_index(coord, dims) == i


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_hadamard_and_map_commute_with_transpose(r, c, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((r, c)), rng.standard_normal((r, c))
    assert np.array_equal(transpose2d(hadamard(a, b)), hadamard(transpose2d(a), transpose2d(b)))
    assert np.array_equal(transpose2d(map_elementwise(a, np.tanh)), map_elementwise(transpose2d(a), np.tanh))
