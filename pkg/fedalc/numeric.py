# Copyright 2026 fedalc contributors
#
# Permission is hereby granted, free of charge, to any person obtaining a copy of
# this software and associated documentation files (the "Software"), to deal in
# the Software without restriction, including without limitation the rights to
# use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies
# of the Software, and to permit persons to whom the Software is furnished to do
# so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import logging

from typing import (
    Callable,
    Iterable,
    Tuple,
)

import numpy as np

import fedalc
import fedalc.settings
from fedalc.err import (
    DegenerateInputError,
    ShapeMismatchError,
)

__all__ = [
    'DenseVector',
    'SparseVector',
    'assert_unit',
    'cosine_distance',
    'dot',
    'finite_diff_grad',
    'l2_normalize',
    'normalize_rows',
    'relative_error',
    'sgd_step',
]

logger = logging.getLogger(__name__)

# float64 ndarray, length D
DenseVector = np.ndarray


class SparseVector(object):
    """
    An index/value pair list for a high dimensional sparse feature vector.
    Indices are strictly increasing, values are finite and non-zero.

    >>> x = SparseVector.from_pairs([(3, 1.0), (1, 0.5)])
    >>> x.indices.tolist(), x.values.tolist()
    ([1, 3], [0.5, 1.0])
    """
    __slots__ = ('indices', 'values')

    def __init__(self, indices: Iterable[int], values: Iterable[float]):
        indices = np.array(list(indices) if not isinstance(
            indices, np.ndarray) else indices, dtype=np.int64).reshape(-1)
        values = np.array(list(values) if not isinstance(
            values, np.ndarray) else values, dtype=np.float64).reshape(-1)
        if indices.shape != values.shape:
            raise ShapeMismatchError(
                f"{len(indices)} indices but {len(values)} values")
        if len(indices):
            if indices[0] < 0:
                raise ValueError("sparse indices must be non-negative")
            if np.any(np.diff(indices) <= 0):
                raise ValueError(
                    "sparse indices must be strictly increasing (use "
                    "SparseVector.from_pairs for unsorted input)")
            if not np.all(np.isfinite(values)):
                raise ValueError("sparse values must be finite")
            if np.any(values == 0.0):
                raise ValueError("sparse values must be non-zero")
        indices.setflags(write=False)
        values.setflags(write=False)
        self.indices = indices
        self.values = values

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, float]]) -> 'SparseVector':
        """builds a vector from unordered (index, value) pairs, dropping zeros

        :raises: ValueError on a repeated index
        """
        pairs = sorted((int(i), float(v)) for i, v in pairs if float(v) != 0.0)
        indices = [i for i, _ in pairs]
        if len(set(indices)) != len(indices):
            raise ValueError("repeated feature index in sparse vector")
        return cls(indices, [v for _, v in pairs])

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and \
            np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.indices.tobytes(), self.values.tobytes()))

    def __repr__(self):
        pairs = ', '.join(
            f"{i}:{v!r}" for i, v in zip(self.indices.tolist(),
                                         self.values.tolist()))
        return f"{__class__.__name__}({pairs})"

    def to_dense(self, size: int) -> DenseVector:
        out = np.zeros(size)
        out[self.indices] = self.values
        return out


def _check_lengths(a: np.ndarray, b: np.ndarray):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(
            f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def dot(a: DenseVector, b: DenseVector) -> float:
    """
    >>> dot(np.array([1., 2.]), np.array([3., 4.]))
    11.0
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_lengths(a, b)
    return float(np.dot(a, b))


def l2_normalize(v: DenseVector) -> DenseVector:
    """
    :returns: |v| scaled to unit euclidean norm
    :raises: DegenerateInputError if |v| is the zero vector

    >>> l2_normalize(np.array([3., 4.])).tolist()
    [0.6, 0.8]
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norm


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """row-wise l2_normalize, raising DegenerateInputError on a zero row"""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError(
            f"cannot normalize zero row(s) {np.flatnonzero(norms == 0.0)}")
    return m / norms


def assert_unit(v: np.ndarray, what: str = "vector"):
    """checks unit norm (row-wise for matrices) in debug mode only"""
    if not fedalc.settings.DEBUG:
        return
    norms = np.linalg.norm(np.atleast_2d(v), axis=1)
    tol = fedalc.settings.UNIT_NORM_TOLERANCE
    if np.any(np.abs(norms - 1.0) > tol):
        raise AssertionError(
            f"{what} is not unit norm (norms {norms}, tolerance {tol})")


def cosine_distance(x: DenseVector, y: DenseVector) -> float:
    """
    cosine distance 1 - x.y between two unit vectors, in [0, 2]

    >>> cosine_distance(np.array([1., 0.]), np.array([-1., 0.]))
    2.0
    """
    assert_unit(x, "x")
    assert_unit(y, "y")
    return 1.0 - dot(x, y)


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """
    :returns: param - lr * grad (a new array)

    >>> sgd_step(np.array([1., 1.]), np.array([1., 1.]), 0.5).tolist()
    [0.5, 0.5]
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _check_lengths(param, grad)
    return param - lr * grad


def finite_diff_grad(f: Callable[[np.ndarray], float],
                     x: np.ndarray,
                     eps: float = fedalc.settings.FINITE_DIFF_EPS,
                     ) -> np.ndarray:
    """
    Central difference gradient of a scalar function. Works for any array
    shape; the result has the shape of |x|.

    :arg f: scalar valued function of an array shaped like |x|
    :arg x: the point to differentiate at (not modified)
    :param eps: the step size
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        f_plus = f(x)
        x[idx] = orig - eps
        f_minus = f(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """
    :returns: |a - b| / max(|a|, |b|), or the absolute error when both are
    smaller than |floor| (so two near-zero gradients compare equal)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_lengths(a, b)
    diff = float(np.linalg.norm(a - b))
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if scale < floor:
        return diff
    return diff / scale


if __name__ == '__main__':
    import doctest
    doctest.testmod()
