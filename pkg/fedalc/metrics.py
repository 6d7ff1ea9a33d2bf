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

"""Ranking metrics: precision at k and mean average precision."""

import dataclasses
import logging

from typing import (
    List,
    Sequence,
    Tuple,
)

import numpy as np

from fedalc.err import (
    ShapeMismatchError,
)

__all__ = [
    'MAP_VARIANTS',
    'from_rows',
    'PredictionBatch',
    'mean_average_precision',
    'precision_at_k',
]

logger = logging.getLogger(__name__)

MAP_VARIANTS = ('macro', 'instance')


@dataclasses.dataclass
class PredictionBatch:
    """n x C scores and the n true positive label sets"""
    scores: np.ndarray
    truths: List[Tuple[int, ...]]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ShapeMismatchError(
                f"scores must be n x C, got shape {self.scores.shape}")
        if len(self.truths) != self.scores.shape[0]:
            raise ShapeMismatchError(
                f"{self.scores.shape[0]} score rows but {len(self.truths)} "
                f"true label sets")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        for i, truth in enumerate(self.truths):
            if not truth:
                raise ValueError(f"instance {i} has an empty true label set")
            if min(truth) < 0 or max(truth) >= self.C:
                raise ValueError(
                    f"instance {i} has a label out of range for {self.C}")

    def __len__(self):
        return self.scores.shape[0]

    @property
    def C(self) -> int:
        return self.scores.shape[1]

    def indicator(self) -> np.ndarray:
        """:returns: n x C 0/1 float array of the true labels"""
        out = np.zeros(self.scores.shape)
        for i, truth in enumerate(self.truths):
            out[i, list(truth)] = 1.0
        return out


def precision_at_k(batch: PredictionBatch, k: int) -> float:
    """
    mean over instances of |top k predictions & true labels| / k, ranking
    ties broken towards the lower label index. A stable argsort over all rows
    at once, equal to fedalc.model.top_k_labels() per row.

    >>> b = PredictionBatch(np.array([[0.2, 0.5, 0.1, 0.9]]), [(1, 3)])
    >>> precision_at_k(b, 1)
    1.0
    """
    if not 1 <= k <= batch.C:
        raise ValueError(f"k must be in [1, {batch.C}], got {k}")
    if not len(batch):
        raise ValueError("cannot score an empty batch")
    top = np.argsort(-batch.scores, axis=1, kind='stable')[:, :k]
    hits = np.take_along_axis(batch.indicator(), top, axis=1).sum(axis=1)
    return float(np.mean(hits / k))


def _average_precision(scores: np.ndarray, relevant: np.ndarray) -> np.ndarray:
    """column-wise average precision; ranks rows by descending score"""
    order = np.argsort(-scores, axis=0, kind='stable')
    ranked = np.take_along_axis(relevant, order, axis=0)
    ranks = np.arange(1, scores.shape[0] + 1)[:, None]
    precision = np.cumsum(ranked, axis=0) / ranks
    return np.sum(precision * ranked, axis=0) / ranked.sum(axis=0)


def mean_average_precision(batch: PredictionBatch,
                           variant: str = 'macro',) -> float:
    """
    :param variant: 'macro' ranks the instances per class and averages over
    classes that have positives; 'instance' ranks the classes per instance
    and averages over instances
    :raises: ValueError on an empty batch

    >>> b = PredictionBatch(np.array([[0.9], [0.1]]), [(0,), (0,)])
    >>> mean_average_precision(b)
    1.0
    """
    if not len(batch):
        raise ValueError("cannot score an empty batch")
    relevant = batch.indicator()
    if variant == 'macro':
        present = relevant.sum(axis=0) > 0
        skipped = int(np.sum(~present))
        if skipped:
            logger.debug(f"skipping {skipped} classes without positives")
        ap = _average_precision(batch.scores[:, present], relevant[:, present])
    elif variant == 'instance':
        ap = _average_precision(batch.scores.T, relevant.T)
    else:
        raise ValueError(f"variant must be one of {MAP_VARIANTS}")
    return float(np.mean(ap))


def from_rows(scores: Sequence[Sequence[float]],
              truths: Sequence[Sequence[int]]) -> PredictionBatch:
    """builds a batch from plain lists (true sets sorted, deduplicated)"""
    return PredictionBatch(
        scores=np.array(scores, dtype=np.float64),
        truths=[tuple(sorted(set(t))) for t in truths],)


if __name__ == '__main__':
    import doctest
    doctest.testmod()
