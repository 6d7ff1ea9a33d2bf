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
Label set collection. Clients send (digest, label) messages, one per local
instance; the server merges equal digests into per-instance positive label
sets and derives the pairwise correlation weights sigma from them.

Wire format of a message batch (all little-endian):

    uint32 count
    count x (32 byte digest, uint32 label)
"""

import concurrent.futures
import dataclasses
import hashlib
import logging
import os

from typing import (
    TYPE_CHECKING,
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import scipy.sparse

import fedalc
import fedalc.model
import fedalc.settings
from fedalc.err import (
    ShapeMismatchError,
)
from fedalc.numeric import (
    SparseVector,
)

if TYPE_CHECKING:
    from fedalc.data import ClientShard
    from fedalc.model import ModelParams
else:
    ClientShard = None
    ModelParams = None

__all__ = [
    'HashMessage',
    'LabelSetTable',
    'MODES',
    'SigmaWeights',
    'canonicalize_instance',
    'client_messages',
    'collect_label_sets',
    'compute_sigma',
    'decode_messages',
    'encode_messages',
    'hash_instance',
    'label_counts',
    'label_permutation',
    'merge_messages',
    'read_batch',
    'write_batch',
]

logger = logging.getLogger(__name__)

MODES = ('raw', 'embedding')

_RAW_DTYPE = np.dtype([('index', '<u8'), ('value', '<f8')])
_RECORD_DTYPE = np.dtype([
    ('digest', 'u1', (fedalc.settings.DIGEST_SIZE,)),
    ('label', '<u4'),
])
_COUNT_DTYPE = np.dtype('<u4')


@dataclasses.dataclass(frozen=True)
class HashMessage:
    digest: bytes
    label: int

    def __post_init__(self):
        if len(self.digest) != fedalc.settings.DIGEST_SIZE:
            raise ValueError(
                f"digest must be {fedalc.settings.DIGEST_SIZE} bytes, got "
                f"{len(self.digest)}")
        if not 0 <= self.label < 2 ** 32:
            raise ValueError(f"label {self.label} does not fit in uint32")


@dataclasses.dataclass
class LabelSetTable:
    """
    One entry per distinct instance digest, with its sorted positive labels.
    Negative labels are the complement and are never stored.
    """
    entries: List[Tuple[bytes, Tuple[int, ...]]]
    C: int

    def __post_init__(self):
        seen = set()
        for key, positives in self.entries:
            if key in seen:
                raise ValueError(f"duplicate instance key {key.hex()}")
            seen.add(key)
            if not positives:
                raise ValueError(f"instance {key.hex()} has no labels")
            if list(positives) != sorted(set(positives)):
                raise ValueError(
                    f"labels of {key.hex()} must be sorted and unique")
            if positives[0] < 0 or positives[-1] >= self.C:
                raise ValueError(
                    f"labels of {key.hex()} out of range for {self.C} "
                    f"labels")

    def __len__(self):
        return len(self.entries)

    def label_sets(self) -> List[Tuple[int, ...]]:
        return [positives for _, positives in self.entries]

    def indicator(self) -> scipy.sparse.csr_matrix:
        """:returns: n x C 0/1 matrix, row j marking the labels of entry j"""
        indptr = np.zeros(len(self.entries) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(p) for p in self.label_sets()])
        indices = np.fromiter(
            (u for p in self.label_sets() for u in p),
            dtype=np.int64, count=int(indptr[-1]))
        return scipy.sparse.csr_matrix(
            (np.ones(len(indices)), indices, indptr),
            shape=(len(self.entries), self.C))

    def relabeled(self, mapping: Sequence[int]) -> 'LabelSetTable':
        """:returns: the table with every label u replaced by mapping[u]"""
        mapping = np.asarray(mapping)
        if mapping.shape != (self.C,):
            raise ShapeMismatchError(
                f"mapping has shape {mapping.shape}, expected ({self.C},)")
        return LabelSetTable(
            entries=[(key, tuple(sorted(int(mapping[u]) for u in positives)))
                     for key, positives in self.entries],
            C=self.C,)


@dataclasses.dataclass
class SigmaWeights:
    """
    Pairwise correlation weights, kept factored so a C x C array is never
    needed: sigma[u, v] = (base[u] + weights[u, v]) / total for u != v and
    0 on the diagonal. compute_sigma() stores the label counts in |base| and
    minus the (sparse) co-occurrence counts in |weights|; explicit weights
    leave |base| at zero.
    """
    C: int
    weights: scipy.sparse.csr_matrix
    base: Optional[np.ndarray] = None
    total: float = 1.0

    def __post_init__(self):
        self.weights = scipy.sparse.csr_matrix(self.weights, dtype=np.float64)
        if self.weights.shape != (self.C, self.C):
            raise ShapeMismatchError(
                f"sigma has shape {self.weights.shape}, expected "
                f"({self.C}, {self.C})")
        if self.base is None:
            self.base = np.zeros(self.C)
        self.base = np.asarray(self.base, dtype=np.float64)
        if self.base.shape != (self.C,):
            raise ShapeMismatchError(
                f"sigma base has shape {self.base.shape}, expected "
                f"({self.C},)")
        if not self.total > 0:
            raise ValueError(f"sigma total must be > 0, got {self.total}")
        if self.weights.diagonal().any():
            raise ValueError("sigma must have a zero diagonal")
        if self.base.min(initial=0.0) < 0 or self._stored().min(
                initial=0.0) < 0:
            raise ValueError("sigma weights must be non-negative")

    def _stored(self) -> np.ndarray:
        """base + weights at the stored entries, in csr order"""
        counts = np.diff(self.weights.indptr)
        return self.base[np.repeat(np.arange(self.C), counts)] \
            + self.weights.data

    @property
    def nnz(self) -> int:
        """the number of non-zero weights"""
        stored = np.diff(self.weights.indptr)
        free = np.where(self.base > 0, self.C - 1 - stored, 0)
        return int(np.sum(free) + np.count_nonzero(self._stored()))

    def rows(self, us: Sequence[int]) -> np.ndarray:
        """:returns: the len(us) x C dense rows of sigma for classes |us|"""
        us = np.asarray(us, dtype=np.int64)
        out = (self.base[us, None] + self.weights[us].toarray()) / self.total
        out[np.arange(len(us)), us] = 0.0
        return out

    def at(self, us: Sequence[int], vs: Sequence[int]) -> np.ndarray:
        """:returns: sigma[us[i], vs[i]] for every i"""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        if not len(us):
            return np.zeros(0)
        stored = np.asarray(self.weights[us, vs]).reshape(-1)
        out = (self.base[us] + stored) / self.total
        out[us == vs] = 0.0
        return out

    def row_sums(self) -> np.ndarray:
        """:returns: sum_{v != u} sigma[u, v] for every u"""
        sums = self.base * (self.C - 1) \
            + np.asarray(self.weights.sum(axis=1)).reshape(-1)
        return sums / self.total

    def scaled_rows(self, scale: np.ndarray) -> 'SigmaWeights':
        """:returns: sigma with row u multiplied by scale[u]"""
        scale = np.asarray(scale, dtype=np.float64) / self.total
        return SigmaWeights(
            C=self.C,
            weights=scipy.sparse.diags(scale) @ self.weights,
            base=self.base * scale,)

    def dense(self) -> np.ndarray:
        """
        :raises: ValueError above DENSE_SIGMA_LIMIT classes, where only
        rows() and at() are available
        """
        if self.C > fedalc.settings.DENSE_SIGMA_LIMIT:
            raise ValueError(
                f"refusing to materialize a dense {self.C} x {self.C} sigma "
                f"(limit {fedalc.settings.DENSE_SIGMA_LIMIT})")
        return self.rows(np.arange(self.C))

    def permuted(self, perm: Sequence[int]) -> 'SigmaWeights':
        """
        :arg perm: perm[u] is the index label u was sent under
        :returns: weights indexed by the original labels, i.e.
        out[u, v] = self[perm[u], perm[v]]
        """
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.C)):
            raise ValueError(f"not a permutation of {self.C} labels")
        return SigmaWeights(
            C=self.C,
            weights=self.weights[perm][:, perm],
            base=self.base[perm],
            total=self.total,)


def hash_instance(canonical_bytes: bytes) -> bytes:
    """
    :returns: the 32 byte sha256 digest of |canonical_bytes|

    >>> len(hash_instance(b'x'))
    32
    """
    if not len(canonical_bytes):
        raise ValueError("cannot hash an empty instance")
    return hashlib.sha256(canonical_bytes).digest()


def canonicalize_instance(x: SparseVector,
                          mode: str = 'raw',
                          params: Optional[ModelParams] = None,) -> bytes:
    """
    Serializes an instance for hashing.

    :param mode: 'raw' serializes the (uint64 index, float64 value) pairs in
    index order; 'embedding' serializes the forward pass embedding under the
    shared initial |params|, rounded to 6 decimals
    :raises: DegenerateInputError from forward() in embedding mode
    """
    if mode == 'raw':
        pairs = np.empty(len(x), dtype=_RAW_DTYPE)
        pairs['index'] = x.indices
        pairs['value'] = x.values
        return pairs.tobytes()
    if mode == 'embedding':
        if params is None:
            raise ValueError("embedding canonicalization needs model params")
        emb, _ = fedalc.model.forward(params, x)
        # + 0.0 folds -0.0 into 0.0
        rounded = np.round(emb, fedalc.settings.EMBEDDING_DECIMALS) + 0.0
        return rounded.astype('<f8').tobytes()
    raise ValueError(f"canonicalization mode must be one of {MODES}")


def label_permutation(C: int, salt: Union[bytes, str]) -> np.ndarray:
    """
    A keyed relabeling for the label hashing privacy mode: labels are sent
    to the server as perm[u], ordered by sha256(salt || uint32 le label).
    Clients sharing |salt| agree on it; the server cannot invert it.

    >>> p = label_permutation(5, b'salt')
    >>> sorted(p.tolist())
    [0, 1, 2, 3, 4]
    """
    if isinstance(salt, str):
        salt = salt.encode()
    keys = [hashlib.sha256(salt + np.array(u, dtype='<u4').tobytes()).digest()
            for u in range(C)]
    order = sorted(range(C), key=keys.__getitem__)
    perm = np.empty(C, dtype=np.int64)
    perm[order] = np.arange(C)
    return perm


def client_messages(shard: ClientShard,
                    mode: str = 'raw',
                    params: Optional[ModelParams] = None,
                    perm: Optional[np.ndarray] = None,) -> List[HashMessage]:
    """the messages one client sends: a digest per local instance"""
    label = int(perm[shard.label]) if perm is not None else shard.label
    return [HashMessage(
        digest=hash_instance(canonicalize_instance(x, mode, params)),
        label=label,) for x in shard.instances]


def merge_messages(batches: Iterable[Iterable[HashMessage]],
                   C: int,) -> LabelSetTable:
    """
    Merges the labels attached to equal digests. Output entries are ordered
    by digest, so the result does not depend on how messages were batched.
    """
    merged = {}  # type: Dict[bytes, Set[int]]
    count = 0
    for batch in batches:
        for message in batch:
            if message.label >= C:
                raise ValueError(
                    f"label {message.label} out of range for {C} labels")
            merged.setdefault(message.digest, set()).add(message.label)
            count += 1
    logger.debug(f"merged {count} messages into {len(merged)} instances")
    return LabelSetTable(
        entries=[(key, tuple(sorted(merged[key]))) for key in sorted(merged)],
        C=C,)


def collect_label_sets(shards: Sequence[ClientShard],
                       C: int,
                       mode: str = 'raw',
                       params: Optional[ModelParams] = None,
                       perm: Optional[np.ndarray] = None,
                       workers: Optional[int] = None,) -> LabelSetTable:
    """
    Runs the collection protocol: every client hashes its shard (on a
    thread pool), the server merges. With |perm| the table is in the
    permuted label space.
    """
    logger.info(f"Collecting label sets from {len(shards)} clients")
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        batches = list(pool.map(
            lambda shard: client_messages(shard, mode, params, perm),
            shards))
    table = merge_messages(batches, C)
    logger.info(f"Collected label sets for {len(table)} distinct instances")
    return table


def label_counts(labels: LabelSetTable,
                 row_weights: Optional[np.ndarray] = None,
                 ) -> Tuple[scipy.sparse.csr_matrix, np.ndarray]:
    """
    :param row_weights: optional per-entry weight (defaults to 1)
    :returns: (C x C co-occurrence counts, per-label counts), i.e. the
    (weighted) number of entries holding both u and v, and holding u
    """
    indicator = labels.indicator()
    weighted = indicator
    if row_weights is not None:
        weighted = scipy.sparse.diags(row_weights) @ indicator
    cooccur = scipy.sparse.csr_matrix(weighted.T @ indicator)
    marginal = np.asarray(weighted.sum(axis=0)).reshape(-1)
    return cooccur, marginal


def compute_sigma(labels: LabelSetTable,
                  per_instance: bool = False,) -> SigmaWeights:
    """
    sigma[u, v] = (1 / n_all) * #{j : u in P_j and v not in P_j}, which is
    (count(u) - count(u and v)) / n_all. Only the per-label counts and the
    sparse co-occurrence counts are kept.

    :param per_instance: weight every instance by 1 / |P_j| so instances
    with many labels do not dominate
    :raises: ValueError on an empty table
    """
    if not len(labels):
        raise ValueError("cannot compute sigma from an empty label set table")
    row_weights = None
    if per_instance:
        row_weights = 1.0 / np.array([len(p) for p in labels.label_sets()])
    cooccur, marginal = label_counts(labels, row_weights)
    cooccur = scipy.sparse.csr_matrix(
        cooccur - scipy.sparse.diags(cooccur.diagonal()))
    cooccur.eliminate_zeros()
    # count(u and v) <= count(u), also after weighted sums in another order
    rows = np.repeat(np.arange(labels.C), np.diff(cooccur.indptr))
    cooccur.data = np.minimum(cooccur.data, marginal[rows])
    sigma = SigmaWeights(
        C=labels.C, weights=-cooccur, base=marginal, total=float(len(labels)))
    logger.debug(
        f"sigma over {len(labels)} instances: {sigma.nnz} non-zero weights, "
        f"{cooccur.nnz} stored co-occurrences")
    return sigma


def encode_messages(messages: Sequence[HashMessage]) -> bytes:
    records = np.zeros(len(messages), dtype=_RECORD_DTYPE)
    for i, message in enumerate(messages):
        records['digest'][i] = np.frombuffer(message.digest, dtype=np.uint8)
        records['label'][i] = message.label
    return np.array(len(messages), dtype=_COUNT_DTYPE).tobytes() \
        + records.tobytes()


def decode_messages(data: bytes) -> List[HashMessage]:
    """
    :raises: ValueError if |data| is truncated or has trailing bytes
    """
    if len(data) < _COUNT_DTYPE.itemsize:
        raise ValueError("message batch is missing its count header")
    count = int(np.frombuffer(data[:_COUNT_DTYPE.itemsize],
                              dtype=_COUNT_DTYPE)[0])
    expected = _COUNT_DTYPE.itemsize + count * _RECORD_DTYPE.itemsize
    if len(data) != expected:
        raise ValueError(
            f"message batch of {count} records should be {expected} bytes, "
            f"got {len(data)}")
    if not count:
        return []
    records = np.frombuffer(data[_COUNT_DTYPE.itemsize:], dtype=_RECORD_DTYPE)
    return [HashMessage(digest=r['digest'].tobytes(), label=int(r['label']))
            for r in records]


def write_batch(path: Union[str, os.PathLike],
                messages: Sequence[HashMessage],):
    logger.debug(f"writing {len(messages)} messages to {path}")
    with open(path, 'wb') as f:
        f.write(encode_messages(messages))


def read_batch(path: Union[str, os.PathLike]) -> List[HashMessage]:
    with open(path, 'rb') as f:
        return decode_messages(f.read())


if __name__ == '__main__':
    import doctest
    doctest.testmod()
