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
Client losses and server regularizers on the class embedding matrix.

All distances are cosine distances d(a, b) = 1 - a.b. The formulas are
evaluated for arbitrary (not necessarily unit) rows, so the analytic
gradients are exact gradients of the returned values.
"""

import dataclasses
import logging

from typing import (
    Dict,
    Optional,
    Tuple,
)

import numpy as np
import scipy.sparse

import fedalc
import fedalc.labelsets
import fedalc.settings
from fedalc.err import (
    ShapeMismatchError,
)
from fedalc.labelsets import (
    LabelSetTable,
    SigmaWeights,
)
from fedalc.model import ClassEmbeddingMatrix
from fedalc.numeric import DenseVector

__all__ = [
    'HyperParams',
    'LossResult',
    'contrastive_loss',
    'correlation_reg',
    'correlation_reg_topk',
    'fixed_embedding_reg',
    'nearest_neighbors',
    'normalize_weights',
    'positive_loss',
    'positive_loss_batch',
    'spreadout_reg',
    'spreadout_reg_topk',
]

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class HyperParams:
    alpha: float = fedalc.settings.ALPHA
    beta: float = fedalc.settings.BETA
    nu: float = fedalc.settings.NU
    lam: float = fedalc.settings.LAMBDA
    margin_pos: float = fedalc.settings.MARGIN_POS
    k_mine: int = fedalc.settings.MINING_K

    def __post_init__(self):
        problems = []
        for name in ('alpha', 'beta', 'lam'):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0")
        if not 0 < self.nu <= 2:
            problems.append(f"nu must be in (0, 2], got {self.nu}")
        if not 0 < self.margin_pos <= 1:
            problems.append(
                f"margin_pos must be in (0, 1], got {self.margin_pos}")
        if not self.k_mine >= 1:
            problems.append(f"k_mine must be >= 1, got {self.k_mine}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclasses.dataclass
class LossResult:
    value: float
    grad_embedding: Optional[DenseVector] = None
    grad_rows: Dict[int, DenseVector] = dataclasses.field(default_factory=dict)

    def rows_matrix(self, C: int, D: int) -> np.ndarray:
        """:returns: grad_rows as a dense C x D array"""
        out = np.zeros((C, D))
        for u, row in self.grad_rows.items():
            out[u] = row
        return out


def _rows_to_dict(grad: np.ndarray) -> Dict[int, DenseVector]:
    touched = np.flatnonzero(np.any(grad != 0.0, axis=1))
    return {int(u): grad[u] for u in touched}


def _distances(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return 1.0 - W @ W.T


def _check_k(k: int, C: int):
    if not 1 <= k < C:
        raise ValueError(f"k must be in [1, {C - 1}], got {k}")


def positive_loss(emb: DenseVector,
                  w_y: DenseVector,
                  margin_pos: float = fedalc.settings.MARGIN_POS,
                  y: int = 0,) -> LossResult:
    """
    max(0, margin_pos - emb.w_y)^2, with gradients for emb and w_y (stored
    under class index |y|)

    >>> positive_loss(np.array([-0.1, 0.]), np.array([1., 0.]), 0.9).value
    1.0
    """
    emb = np.asarray(emb, dtype=np.float64)
    w_y = np.asarray(w_y, dtype=np.float64)
    if emb.shape != w_y.shape:
        raise ShapeMismatchError(
            f"embedding shape {emb.shape} != class embedding {w_y.shape}")
    hinge = max(0.0, margin_pos - float(emb @ w_y))
    return LossResult(
        value=hinge ** 2,
        grad_embedding=-2.0 * hinge * w_y,
        grad_rows={y: -2.0 * hinge * emb},)


def positive_loss_batch(embs: np.ndarray,
                        w_y: DenseVector,
                        margin_pos: float = fedalc.settings.MARGIN_POS,
                        ) -> Tuple[np.ndarray, np.ndarray, DenseVector]:
    """
    batched positive_loss() for one class

    :returns: (per-instance values, B x D gradient for the embeddings,
    gradient for w_y summed over the batch)
    """
    hinge = np.maximum(0.0, margin_pos - embs @ w_y)
    grad_embs = -2.0 * hinge[:, None] * w_y[None, :]
    grad_w = -2.0 * (hinge @ embs)
    return hinge ** 2, grad_embs, grad_w


def contrastive_loss(emb: DenseVector,
                     y: int,
                     W: ClassEmbeddingMatrix,
                     hp: HyperParams,) -> LossResult:
    """
    alpha * d(emb, w_y)^2 + beta * sum_{c != y} max(0, nu - d(emb, w_c))^2

    This is the oracle client loss (it needs every class embedding); the
    federated clients only ever see the positive part.
    """
    emb = np.asarray(emb, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or emb.shape != (W.shape[1],):
        raise ShapeMismatchError(
            f"embedding shape {emb.shape} does not match W {W.shape}")
    if not 0 <= y < W.shape[0]:
        raise IndexError(f"class {y} out of range for {W.shape[0]} classes")
    dist = 1.0 - W @ emb
    hinge = np.maximum(0.0, hp.nu - dist)
    hinge[y] = 0.0
    value = hp.alpha * dist[y] ** 2 + hp.beta * float(np.sum(hinge ** 2))
    coef = 2.0 * hp.beta * hinge
    coef[y] = -2.0 * hp.alpha * dist[y]
    grad_emb = coef @ W
    grad_rows = {int(c): coef[c] * emb for c in np.flatnonzero(coef)}
    return LossResult(
        value=float(value), grad_embedding=grad_emb, grad_rows=grad_rows)


def _weighted_hinge(W: np.ndarray,
                    weights: np.ndarray,
                    nu: float,) -> Tuple[float, np.ndarray]:
    """sum_{u,v} weights[u,v] * max(0, nu - d(w_u, w_v))^2 and its gradient"""
    hinge = np.maximum(0.0, nu - _distances(W))
    value = float(np.sum(weights * hinge ** 2))
    coef = 2.0 * weights * hinge
    grad = coef @ W + coef.T @ W
    return value, grad


def _uniform_weights(C: int) -> np.ndarray:
    weights = np.ones((C, C))
    np.fill_diagonal(weights, 0.0)
    return weights


def nearest_neighbors(W: ClassEmbeddingMatrix, k: int) -> np.ndarray:
    """
    :returns: C x k array, row u holding the k classes closest to u by cosine
    distance (u itself excluded), ties to the lower index
    """
    W = np.asarray(W, dtype=np.float64)
    C = W.shape[0]
    _check_k(k, C)
    dist = _distances(W)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind='stable')[:, :k]


def _neighbor_mask(W: np.ndarray, k: int) -> np.ndarray:
    C = W.shape[0]
    mask = np.zeros((C, C))
    neighbors = nearest_neighbors(W, k)
    mask[np.repeat(np.arange(C), k), neighbors.reshape(-1)] = 1.0
    return mask


def spreadout_reg(W: ClassEmbeddingMatrix,
                  nu: float = fedalc.settings.NU,) -> LossResult:
    """sum over ordered pairs u != u' of max(0, nu - d(w_u, w_u'))^2"""
    W = np.asarray(W, dtype=np.float64)
    value, grad = _weighted_hinge(W, _uniform_weights(W.shape[0]), nu)
    return LossResult(value=value, grad_rows=_rows_to_dict(grad))


def spreadout_reg_topk(W: ClassEmbeddingMatrix, k: int) -> LossResult:
    """sum_u sum_{u' in N_k(u)} -d(w_u, w_u')^2 (always <= 0)"""
    W = np.asarray(W, dtype=np.float64)
    mask = _neighbor_mask(W, k)
    dist = _distances(W)
    value = -float(np.sum(mask * dist ** 2))
    coef = 2.0 * mask * dist
    grad = coef @ W + coef.T @ W
    return LossResult(value=value, grad_rows=_rows_to_dict(grad))


def _check_sigma(W: np.ndarray,
                 sigma: SigmaWeights,
                 normalized: bool,) -> SigmaWeights:
    if sigma.C != W.shape[0]:
        raise ShapeMismatchError(
            f"sigma is for {sigma.C} classes, W has {W.shape[0]} rows")
    if normalized:
        sigma = normalize_weights(sigma)
    return sigma


def correlation_reg(W: ClassEmbeddingMatrix,
                    sigma: SigmaWeights,
                    nu: float = fedalc.settings.NU,
                    normalized: bool = False,) -> LossResult:
    """
    sum_u sum_{u' != u} sigma[u, u'] * max(0, nu - d(w_u, w_u'))^2

    :param normalized: use the row-normalized gamma weights instead of sigma
    :raises: ValueError from SigmaWeights.dense() above DENSE_SIGMA_LIMIT
    classes, use correlation_reg_topk() there
    """
    W = np.asarray(W, dtype=np.float64)
    weights = _check_sigma(W, sigma, normalized).dense()
    value, grad = _weighted_hinge(W, weights, nu)
    return LossResult(value=value, grad_rows=_rows_to_dict(grad))


def correlation_reg_topk(W: ClassEmbeddingMatrix,
                         sigma: SigmaWeights,
                         k: int,
                         nu: float = fedalc.settings.NU,
                         normalized: bool = False,) -> LossResult:
    """
    correlation_reg() with the inner sum restricted to N_k(u). sigma is only
    read at the C * k mined pairs.
    """
    W = np.asarray(W, dtype=np.float64)
    sigma = _check_sigma(W, sigma, normalized)
    C = W.shape[0]
    rows = np.repeat(np.arange(C), k)
    cols = nearest_neighbors(W, k).reshape(-1)
    dist = _distances(W)[rows, cols]
    hinge = np.maximum(0.0, nu - dist)
    weights = sigma.at(rows, cols)
    value = float(np.sum(weights * hinge ** 2))
    coef = scipy.sparse.csr_matrix(
        (2.0 * weights * hinge, (rows, cols)), shape=(C, C))
    grad = np.asarray(coef @ W) + np.asarray(coef.T @ W)
    return LossResult(value=value, grad_rows=_rows_to_dict(grad))


def fixed_embedding_reg(W: ClassEmbeddingMatrix,
                        labels: LabelSetTable,
                        hp: HyperParams,) -> LossResult:
    """
    (1 / n_all) sum_j [alpha * sum over ordered positive pairs of d^2
                       + beta * sum_{y in P_j, y' not in P_j} hinge^2]

    Used to pre-train the fixed class embeddings on the server.
    """
    W = np.asarray(W, dtype=np.float64)
    if not len(labels):
        raise ValueError("label set table is empty")
    if labels.C != W.shape[0]:
        raise ShapeMismatchError(
            f"labels are for {labels.C} classes, W has {W.shape[0]} rows")
    for key, positives in labels.entries:
        if not positives:
            raise ValueError(f"instance {key.hex()} has no positive labels")
    n_all = len(labels)
    cooccur, marginal = fedalc.labelsets.label_counts(labels)
    cooccur = cooccur.toarray()
    positive_pairs = cooccur.copy()
    np.fill_diagonal(positive_pairs, 0.0)
    negative_pairs = marginal[:, None] - cooccur
    np.fill_diagonal(negative_pairs, 0.0)

    dist = _distances(W)
    hinge = np.maximum(0.0, hp.nu - dist)
    value = (hp.alpha * float(np.sum(positive_pairs * dist ** 2))
             + hp.beta * float(np.sum(negative_pairs * hinge ** 2))) / n_all
    # d(d^2)/dw_u = -2 d w_v, d(hinge^2)/dw_u = +2 hinge w_v
    coef = (2.0 * hp.beta * negative_pairs * hinge
            - 2.0 * hp.alpha * positive_pairs * dist) / n_all
    grad = coef @ W + coef.T @ W
    return LossResult(value=value, grad_rows=_rows_to_dict(grad))


def normalize_weights(sigma: SigmaWeights) -> SigmaWeights:
    """
    gamma[u, u'] = sigma[u, u'] / sum_{v != u} sigma[u, v]; all-zero rows
    stay all-zero
    """
    row_sums = sigma.row_sums()
    scale = np.zeros_like(row_sums)
    nonzero = row_sums > 0
    scale[nonzero] = 1.0 / row_sums[nonzero]
    return sigma.scaled_rows(scale)


if __name__ == '__main__':
    import doctest
    doctest.testmod()
