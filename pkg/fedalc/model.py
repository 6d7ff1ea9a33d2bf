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

"""
The embedding network for sparse text features and the class embedding
matrix.

g(x) = normalize(relu(relu(e(x) w1 + b1) w2 + b2) w3 + b3), where e(x) is
the value weighted sum of the embedding table rows of the active features.
Weights are stored input-major (fan_in x fan_out) so a layer is x @ w + b.
"""

import dataclasses
import logging
import os

from typing import (
    Dict,
    Iterable,
    List,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import scipy.sparse

import fedalc
import fedalc.numeric
import fedalc.settings
from fedalc.err import (
    CacheMismatchError,
    DegenerateInputError,
    ShapeMismatchError,
)
from fedalc.numeric import (
    DenseVector,
    SparseVector,
)

__all__ = [
    'ClassEmbeddingMatrix',
    'ForwardCache',
    'ModelDims',
    'ModelParams',
    'PARAM_NAMES',
    'ParamGrads',
    'apply_gradients',
    'average_params',
    'backward',
    'backward_batch',
    'forward',
    'forward_batch',
    'init_class_embeddings',
    'init_model',
    'instances_to_csr',
    'load_checkpoint',
    'predict_scores',
    'save_checkpoint',
    'top_k_labels',
]

logger = logging.getLogger(__name__)

# C x D float64 array, row u is the class embedding w_u (unit norm)
ClassEmbeddingMatrix = np.ndarray

PARAM_NAMES = ('embed_table', 'w1', 'b1', 'w2', 'b2', 'w3', 'b3')


@dataclasses.dataclass(frozen=True)
class ModelDims:
    features: int
    embed: int = fedalc.settings.EMBED_DIM
    hidden1: int = fedalc.settings.HIDDEN1_DIM
    hidden2: int = fedalc.settings.HIDDEN2_DIM
    out: int = fedalc.settings.OUT_DIM

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(
                    f"model dimension {field.name} must be a positive "
                    f"integer, got {value!r}")

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {
            'embed_table': (self.features, self.embed),
            'w1': (self.embed, self.hidden1),
            'b1': (self.hidden1,),
            'w2': (self.hidden1, self.hidden2),
            'b2': (self.hidden2,),
            'w3': (self.hidden2, self.out),
            'b3': (self.out,),
        }


@dataclasses.dataclass
class ModelParams:
    embed_table: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def dims(self) -> ModelDims:
        return ModelDims(
            features=self.embed_table.shape[0],
            embed=self.embed_table.shape[1],
            hidden1=self.w1.shape[1],
            hidden2=self.w2.shape[1],
            out=self.w3.shape[1],)

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> 'ModelParams':
        return ModelParams(**{k: v.copy() for k, v in self.tensors().items()})

    def check(self):
        """:raises: ShapeMismatchError or ValueError if inconsistent"""
        expected = self.dims.shapes()
        for name, tensor in self.tensors().items():
            if tensor.shape != expected[name]:
                raise ShapeMismatchError(
                    f"{name} has shape {tensor.shape}, expected "
                    f"{expected[name]}")
            if not np.all(np.isfinite(tensor)):
                raise ValueError(f"{name} has non-finite entries")


@dataclasses.dataclass
class ParamGrads:
    """
    Gradients mirroring ModelParams. The embedding table gradient is kept
    sparse: only the rows in |embed_indices| are non-zero.
    """
    embed_indices: np.ndarray
    embed_rows: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def embed_dense(self, features: int) -> np.ndarray:
        out = np.zeros((features, self.embed_rows.shape[1]))
        out[self.embed_indices] = self.embed_rows
        return out

    def dense(self, features: int) -> Dict[str, np.ndarray]:
        """:returns: every gradient as a dense array keyed like PARAM_NAMES"""
        grads = {name: getattr(self, name) for name in PARAM_NAMES[1:]}
        grads['embed_table'] = self.embed_dense(features)
        return grads


@dataclasses.dataclass
class ForwardCache:
    x: scipy.sparse.csr_matrix
    embedded: np.ndarray
    pre1: np.ndarray
    post1: np.ndarray
    pre2: np.ndarray
    post2: np.ndarray
    unnormalized: np.ndarray
    norms: np.ndarray
    out: np.ndarray


def init_model(seed: int, dims: ModelDims) -> ModelParams:
    """
    Gaussian init, scale 1/sqrt(fan_in) for every entry of a layer
    (biases included). Deterministic for a fixed |seed|.
    """
    rng = np.random.default_rng(seed)
    fan_in = {
        'embed_table': dims.features,
        'w1': dims.embed, 'b1': dims.embed,
        'w2': dims.hidden1, 'b2': dims.hidden1,
        'w3': dims.hidden2, 'b3': dims.hidden2,
    }
    tensors = {}
    for name, shape in dims.shapes().items():
        tensors[name] = rng.standard_normal(shape) / np.sqrt(fan_in[name])
    logger.debug(f"initialized model {dims} with seed {seed}")
    return ModelParams(**tensors)


def init_class_embeddings(seed: int, C: int, D: int) -> ClassEmbeddingMatrix:
    """i.i.d. Gaussian rows, l2 normalized (almost spread out for large D)"""
    if C < 2 or D < 2:
        raise ValueError(f"need C >= 2 and D >= 2, got C={C}, D={D}")
    rng = np.random.default_rng(seed)
    return fedalc.numeric.normalize_rows(rng.standard_normal((C, D)))


def instances_to_csr(instances: Sequence[SparseVector],
                     features: int) -> scipy.sparse.csr_matrix:
    """
    stacks sparse vectors into a (len(instances) x features) csr matrix

    :raises: IndexError if an index is >= |features|
    """
    indptr = [0]
    for x in instances:
        if len(x) and x.indices[-1] >= features:
            raise IndexError(
                f"feature index {int(x.indices[-1])} out of range for "
                f"{features} features")
        indptr.append(indptr[-1] + len(x))
    if instances:
        indices = np.concatenate([x.indices for x in instances])
        data = np.concatenate([x.values for x in instances])
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0)
    return scipy.sparse.csr_matrix(
        (data, indices, np.asarray(indptr)),
        shape=(len(instances), features))


def forward_batch(params: ModelParams,
                  x: scipy.sparse.csr_matrix,
                  ) -> Tuple[np.ndarray, ForwardCache]:
    """
    :arg x: (B x F) csr matrix, one instance per row
    :returns: (B x D) unit-norm instance embeddings and the cache for
    backward_batch()
    :raises: DegenerateInputError on an instance without active features or
    with a zero pre-normalization vector
    """
    if x.shape[1] != params.embed_table.shape[0]:
        raise IndexError(
            f"input has {x.shape[1]} features, model has "
            f"{params.embed_table.shape[0]}")
    empty = np.flatnonzero(np.diff(x.indptr) == 0)
    if len(empty):
        raise DegenerateInputError(
            f"instance(s) {empty.tolist()} have no active features")
    embedded = np.asarray(x @ params.embed_table)
    pre1 = embedded @ params.w1 + params.b1
    post1 = np.maximum(pre1, 0.0)
    pre2 = post1 @ params.w2 + params.b2
    post2 = np.maximum(pre2, 0.0)
    unnormalized = post2 @ params.w3 + params.b3
    norms = np.linalg.norm(unnormalized, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError(
            f"instance(s) {np.flatnonzero(norms == 0.0).tolist()} have a zero "
            f"embedding before normalization")
    out = unnormalized / norms[:, None]
    return out, ForwardCache(
        x=x, embedded=embedded, pre1=pre1, post1=post1, pre2=pre2,
        post2=post2, unnormalized=unnormalized, norms=norms, out=out,)


def backward_batch(params: ModelParams,
                   x: scipy.sparse.csr_matrix,
                   cache: ForwardCache,
                   grad_out: np.ndarray,) -> ParamGrads:
    """
    Exact gradients of sum_b grad_out[b] . out[b] with respect to every
    parameter, including the normalization jacobian (I - e e^T) / |v|.
    """
    if cache.x is not x and (
            cache.x.shape != x.shape or (cache.x != x).nnz):
        raise CacheMismatchError("cache was produced by a different input")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache.out.shape:
        raise ShapeMismatchError(
            f"grad_out has shape {grad_out.shape}, expected "
            f"{cache.out.shape}")
    out = cache.out
    radial = np.sum(out * grad_out, axis=1, keepdims=True)
    g_unnorm = (grad_out - out * radial) / cache.norms[:, None]
    g_w3 = cache.post2.T @ g_unnorm
    g_b3 = g_unnorm.sum(axis=0)
    g_pre2 = (g_unnorm @ params.w3.T) * (cache.pre2 > 0.0)
    g_w2 = cache.post1.T @ g_pre2
    g_b2 = g_pre2.sum(axis=0)
    g_pre1 = (g_pre2 @ params.w2.T) * (cache.pre1 > 0.0)
    g_w1 = cache.embedded.T @ g_pre1
    g_b1 = g_pre1.sum(axis=0)
    g_embedded = g_pre1 @ params.w1.T
    # only touched rows: d/dT[i] = sum_b x[b, i] * g_embedded[b]
    rows = np.unique(x.indices)
    g_rows = np.asarray(x[:, rows].T @ g_embedded)
    return ParamGrads(
        embed_indices=rows, embed_rows=g_rows,
        w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, w3=g_w3, b3=g_b3,)


def forward(params: ModelParams,
            x: SparseVector,) -> Tuple[DenseVector, ForwardCache]:
    """single instance forward(), see forward_batch()"""
    out, cache = forward_batch(
        params, instances_to_csr([x], params.embed_table.shape[0]))
    return out[0], cache


def backward(params: ModelParams,
             x: SparseVector,
             cache: ForwardCache,
             grad_out: DenseVector,) -> ParamGrads:
    """single instance backward(), see backward_batch()"""
    if cache.x.shape[0] != 1 or \
            not np.array_equal(cache.x.indices, x.indices) or \
            not np.array_equal(cache.x.data, x.values):
        raise CacheMismatchError("cache was produced by a different input")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    return backward_batch(params, cache.x, cache, grad_out[None, :])


def apply_gradients(params: ModelParams,
                    grads: ParamGrads,
                    lr: float,
                    inplace: bool = False,) -> ModelParams:
    """
    one SGD step on every parameter (the embedding table only on the
    touched rows)
    """
    target = params if inplace else params.copy()
    table = target.embed_table
    rows = grads.embed_indices
    table[rows] = fedalc.numeric.sgd_step(table[rows], grads.embed_rows, lr)
    for name in PARAM_NAMES[1:]:
        setattr(target, name, fedalc.numeric.sgd_step(
            getattr(target, name), getattr(grads, name), lr))
    return target


def average_params(thetas: Iterable[ModelParams]) -> ModelParams:
    """
    Elementwise arithmetic mean of every parameter tensor, taken as
    theta_0 + sum_i (theta_i - theta_0) / N with the differences summed in
    iteration order, so N copies of one model average to that model
    exactly. |thetas| is consumed once, and may be a generator.

    :raises: ValueError when there is nothing to average, ShapeMismatchError
    if the models disagree on any tensor shape
    """
    thetas = iter(thetas)
    first = next(thetas, None)
    if first is None:
        raise ValueError("cannot average an empty list of models")
    base = first.tensors()
    expected = {name: tensor.shape for name, tensor in base.items()}
    offsets = {name: np.zeros(shape) for name, shape in expected.items()}
    count = 1
    for theta in thetas:
        for name, tensor in theta.tensors().items():
            if tensor.shape != expected[name]:
                raise ShapeMismatchError(
                    f"model {count} has {name} of shape {tensor.shape}, "
                    f"expected {expected[name]}")
            offsets[name] += tensor - base[name]
        count += 1
    return ModelParams(
        **{name: base[name] + offsets[name] / count for name in base})


def predict_scores(W: ClassEmbeddingMatrix, emb: DenseVector) -> DenseVector:
    """
    :returns: w_u . emb for every class u

    >>> predict_scores(np.eye(2), np.array([0., 1.])).tolist()
    [0.0, 1.0]
    """
    W = np.asarray(W, dtype=np.float64)
    emb = np.asarray(emb, dtype=np.float64)
    if W.ndim != 2 or emb.shape != (W.shape[1],):
        raise ShapeMismatchError(
            f"embedding of shape {emb.shape} does not match class embedding "
            f"matrix of shape {W.shape}")
    fedalc.numeric.assert_unit(emb, "instance embedding")
    return W @ emb


def top_k_labels(scores: DenseVector, k: int) -> List[int]:
    """
    indices of the |k| largest scores, descending, ties to the lower index

    >>> top_k_labels(np.array([0.1, 0.9, 0.5]), 2)
    [1, 2]
    >>> top_k_labels(np.zeros(3), 2)
    [0, 1]
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= len(scores):
        raise ValueError(f"k must be in [1, {len(scores)}], got {k}")
    return np.argsort(-scores, kind='stable')[:k].tolist()


def save_checkpoint(path: Union[str, os.PathLike],
                    params: ModelParams,
                    W: ClassEmbeddingMatrix,):
    """
    Writes a numpy .npz archive holding `format_version`, the seven
    parameter arrays (named like PARAM_NAMES) and `class_embeddings`.
    """
    logger.info(f"Saving checkpoint to {path}")
    with open(path, 'wb') as f:
        np.savez(
            f,
            format_version=np.array(fedalc.settings.CHECKPOINT_VERSION),
            class_embeddings=np.asarray(W),
            **params.tensors(),)


def load_checkpoint(path: Union[str, os.PathLike],
                    ) -> Tuple[ModelParams, ClassEmbeddingMatrix]:
    """:returns: (params, class embeddings) from a save_checkpoint() file"""
    with np.load(path) as archive:
        version = int(archive['format_version'])
        if version != fedalc.settings.CHECKPOINT_VERSION:
            raise ValueError(
                f"{path} has checkpoint format {version}, expected "
                f"{fedalc.settings.CHECKPOINT_VERSION}")
        params = ModelParams(**{name: archive[name] for name in PARAM_NAMES})
        W = archive['class_embeddings']
    params.check()
    if W.shape[1] != params.dims.out:
        raise ShapeMismatchError(
            f"class embeddings have dimension {W.shape[1]}, model outputs "
            f"{params.dims.out}")
    return params, W


if __name__ == '__main__':
    import doctest
    doctest.testmod()
