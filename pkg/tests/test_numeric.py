import numpy as np
import pytest

import fedalc
import fedalc.numeric
import fedalc.settings
from fedalc.err import (
    DegenerateInputError,
    ShapeMismatchError,
)
from fedalc.numeric import (
    SparseVector,
)


def test_dot():
    assert fedalc.numeric.dot(np.array([1., 2., 3.]), np.ones(3)) == 6.0
    with pytest.raises(ShapeMismatchError):
        fedalc.numeric.dot(np.ones(3), np.ones(2))


def test_l2_normalize():
    v = fedalc.numeric.l2_normalize(np.array([1., 2., 2.]))
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DegenerateInputError):
        fedalc.numeric.l2_normalize(np.zeros(4))


def test_normalize_rows():
    m = fedalc.numeric.normalize_rows(np.array([[3., 4.], [0., 2.]]))
    np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0)
    with pytest.raises(DegenerateInputError):
        fedalc.numeric.normalize_rows(np.array([[1., 0.], [0., 0.]]))


def test_cosine_distance():
    e0, e1 = np.eye(2)
    assert fedalc.numeric.cosine_distance(e0, e0) == 0.0
    assert fedalc.numeric.cosine_distance(e0, -e0) == 2.0
    assert fedalc.numeric.cosine_distance(e0, e1) == 1.0


def test_cosine_distance_checks_unit_norm_in_debug(monkeypatch):
    monkeypatch.setattr(fedalc.settings, 'DEBUG', True)
    with pytest.raises(AssertionError):
        fedalc.numeric.cosine_distance(np.array([2., 0.]), np.array([1., 0.]))
    monkeypatch.setattr(fedalc.settings, 'DEBUG', False)
    assert fedalc.numeric.cosine_distance(
        np.array([2., 0.]), np.array([1., 0.])) == -1.0


def test_sgd_step():
    param = np.array([1., -2.])
    np.testing.assert_array_equal(
        fedalc.numeric.sgd_step(param, np.array([5., 5.]), 0.0), param)
    np.testing.assert_array_equal(
        fedalc.numeric.sgd_step(param, np.array([1., 1.]), 1.0), [0., -3.])
    with pytest.raises(ValueError):
        fedalc.numeric.sgd_step(param, param, -0.1)


def test_finite_diff_grad_any_shape(rng):
    x = rng.standard_normal((3, 2))
    before = x.copy()
    grad = fedalc.numeric.finite_diff_grad(lambda m: float(np.sum(m ** 3)), x)
    np.testing.assert_allclose(grad, 3 * x ** 2, rtol=1e-8, atol=1e-8)
    np.testing.assert_array_equal(x, before)


def test_relative_error():
    assert fedalc.numeric.relative_error(np.ones(2), np.ones(2)) == 0.0
    assert fedalc.numeric.relative_error(
        np.array([1., 0.]), np.array([0., 0.])) == 1.0
    # both below the floor: absolute error
    assert fedalc.numeric.relative_error(
        np.array([1e-10]), np.array([0.])) == pytest.approx(1e-10)


def test_sparse_vector_from_pairs():
    x = SparseVector.from_pairs([(5, 1.5), (2, -1.0), (7, 0.0)])
    assert x.indices.tolist() == [2, 5]
    assert x.values.tolist() == [-1.0, 1.5]
    assert x == SparseVector([2, 5], [-1.0, 1.5])
    assert hash(x) == hash(SparseVector([2, 5], [-1.0, 1.5]))
    with pytest.raises(ValueError):
        SparseVector.from_pairs([(1, 1.0), (1, 2.0)])


@pytest.mark.parametrize('indices, values', [
    ([3, 1], [1.0, 1.0]),
    ([1, 1], [1.0, 1.0]),
    ([-1], [1.0]),
    ([0], [0.0]),
    ([0], [np.nan]),
])
def test_sparse_vector_rejects(indices, values):
    with pytest.raises(ValueError):
        SparseVector(indices, values)


def test_sparse_vector_is_read_only():
    indices = np.array([0, 4])
    x = SparseVector(indices, np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        x.values[0] = 3.0
    # the caller's array is copied, not frozen
    indices[0] = 1
    assert x.indices.tolist() == [0, 4]
    np.testing.assert_array_equal(x.to_dense(5), [1., 0., 0., 0., 2.])
