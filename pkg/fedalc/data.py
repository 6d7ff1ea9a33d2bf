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
Multi-label datasets: the extreme classification repository text format,
per-label client shards, splits and a synthetic generator.
"""

import dataclasses
import json
import logging
import os

from typing import (
    Iterable,
    List,
    Optional,
    TextIO,
    Tuple,
    Union,
)

import numpy as np
import scipy.sparse

import fedalc
import fedalc.cli
import fedalc.err
import fedalc.model
import fedalc.settings
import fedalc.utils
from fedalc.err import (
    ParseError,
)
from fedalc.numeric import (
    SparseVector,
)

__all__ = [
    'ClientShard',
    'Example',
    'MultiLabelDataset',
    'cli_main',
    'cmd_prepare',
    'compact_labels',
    'load_xmlc',
    'parse_xmlc',
    'remap_labels',
    'save_xmlc',
    'serialize_xmlc',
    'shard_by_label',
    'shard_index',
    'split',
    'synth_multilabel',
]

logger = logging.getLogger(__name__)

# (features, sorted positive labels)
Example = Tuple[SparseVector, Tuple[int, ...]]


@dataclasses.dataclass
class MultiLabelDataset:
    F: int
    C: int
    examples: List[Example]

    def __post_init__(self):
        for i, (x, labels) in enumerate(self.examples):
            if len(x) and x.indices[-1] >= self.F:
                raise IndexError(
                    f"example {i} has feature {int(x.indices[-1])} >= "
                    f"{self.F}")
            if not labels:
                raise ValueError(f"example {i} has no labels")
            if labels[0] < 0 or labels[-1] >= self.C:
                raise ValueError(
                    f"example {i} has a label out of range for {self.C}")

    def __len__(self):
        return len(self.examples)

    @property
    def instances(self) -> List[SparseVector]:
        return [x for x, _ in self.examples]

    @property
    def label_sets(self) -> List[Tuple[int, ...]]:
        return [labels for _, labels in self.examples]

    def csr(self) -> scipy.sparse.csr_matrix:
        return fedalc.model.instances_to_csr(self.instances, self.F)

    def subset(self, indices: Iterable[int]) -> 'MultiLabelDataset':
        return MultiLabelDataset(
            F=self.F, C=self.C, examples=[self.examples[i] for i in indices])


@dataclasses.dataclass
class ClientShard:
    """the local data of the single client holding class |label|"""
    label: int
    instances: List[SparseVector]

    def __len__(self):
        return len(self.instances)

    @property
    def empty(self) -> bool:
        return not self.instances


def _parse_int(token: str, what: str, line_number: int) -> int:
    try:
        return int(token)
    except ValueError as err:
        raise ParseError(
            f"non-numeric {what} {token!r}", line_number) from err


def _parse_line(line: str,
                line_number: int,
                F: int,
                C: int,) -> Tuple[Optional[Tuple[int, ...]], SparseVector]:
    tokens = line.split()
    labels = None
    if tokens and ':' not in tokens[0] and not line[0].isspace():
        labels = tuple(sorted(set(
            _parse_int(t, 'label', line_number)
            for t in tokens.pop(0).split(',') if t)))
        for label in labels:
            if not 0 <= label < C:
                raise ParseError(
                    f"label {label} out of range for {C} labels",
                    line_number)
    pairs = []
    for token in tokens:
        index, sep, value = token.partition(':')
        if not sep:
            raise ParseError(
                f"expected idx:val, got {token!r}. {fedalc.err.XMLC_FORMAT}",
                line_number)
        index = _parse_int(index, 'feature index', line_number)
        if not 0 <= index < F:
            raise ParseError(
                f"feature index {index} out of range for {F} features",
                line_number)
        try:
            pairs.append((index, float(value)))
        except ValueError as err:
            raise ParseError(
                f"non-numeric feature value {value!r}", line_number) from err
    try:
        x = SparseVector.from_pairs(pairs)
    except ValueError as err:
        raise ParseError(str(err), line_number) from err
    return labels or None, x


def parse_xmlc(stream: TextIO,
               allow_unlabeled: bool = False,) -> MultiLabelDataset:
    """
    Parses the extreme classification repository text format: a header line
    'N F L' followed by N lines 'l1,l2,... idx:val idx:val ...'.

    :param allow_unlabeled: skip (with a warning) lines whose label field is
    empty instead of failing
    :raises: ParseError naming the offending line
    """
    header = stream.readline()
    fields = header.split()
    if len(fields) != 3:
        raise ParseError(
            f"malformed header {header.strip()!r}. {fedalc.err.XMLC_FORMAT}",
            1)
    N, F, C = (_parse_int(t, 'header field', 1) for t in fields)
    if N < 0 or F < 1 or C < 1:
        raise ParseError(f"invalid header counts {N} {F} {C}", 1)

    examples = []
    skipped = 0
    lines = 0
    for line_number, line in enumerate(stream, start=2):
        if not line.strip():
            continue
        lines += 1
        labels, x = _parse_line(line.rstrip('\n'), line_number, F, C)
        if labels is None:
            if not allow_unlabeled:
                raise ParseError("empty label field", line_number)
            skipped += 1
            continue
        examples.append((x, labels))
    if lines != N:
        raise ParseError(f"header declares {N} examples, found {lines}")
    if skipped:
        logger.warning(f"skipped {skipped} unlabeled examples")
    logger.debug(f"parsed {len(examples)} examples, {F} features, {C} labels")
    return MultiLabelDataset(F=F, C=C, examples=examples)


def _format_value(value: float) -> str:
    return repr(float(value))


def serialize_xmlc(ds: MultiLabelDataset, stream: TextIO):
    """writes |ds| in the format read by parse_xmlc() (values with repr())"""
    stream.write(f"{len(ds)} {ds.F} {ds.C}\n")
    for x, labels in ds.examples:
        fields = [','.join(str(label) for label in labels)]
        fields.extend(
            f"{i}:{_format_value(v)}"
            for i, v in zip(x.indices.tolist(), x.values.tolist()))
        stream.write(' '.join(fields) + '\n')


def load_xmlc(path: Union[str, os.PathLike],
              allow_unlabeled: bool = False,) -> MultiLabelDataset:
    logger.info(f"Loading {path}")
    with open(path) as f:
        return parse_xmlc(f, allow_unlabeled=allow_unlabeled)


def save_xmlc(path: Union[str, os.PathLike], ds: MultiLabelDataset):
    logger.info(f"Writing {len(ds)} examples to {path}")
    with open(path, 'w', newline='\n') as f:
        serialize_xmlc(ds, f)


def shard_by_label(ds: MultiLabelDataset) -> List[ClientShard]:
    """
    :returns: one shard per label, shard u holding every example whose label
    set includes u, in dataset order. Labels without examples get an empty
    shard.
    """
    members = [[] for _ in range(ds.C)]  # type: List[List[SparseVector]]
    for x, labels in ds.examples:
        for label in labels:
            members[label].append(x)
    shards = [ClientShard(label=u, instances=m) for u, m in enumerate(members)]
    empty = [s.label for s in shards if s.empty]
    if empty:
        logger.warning(
            f"{len(empty)} labels have no instances: {empty}. "
            f"{fedalc.err.DROPPED_LABELS}")
    return shards


def split(ds: MultiLabelDataset,
          val_fraction: float,
          seed: int,) -> Tuple[MultiLabelDataset, MultiLabelDataset]:
    """
    Seeded shuffle, then the first floor(val_fraction * N) examples become
    the validation set.

    :returns: (train, validation)
    """
    if not 0 <= val_fraction < 1:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_val = int(np.floor(val_fraction * len(ds)))
    return ds.subset(order[n_val:]), ds.subset(order[:n_val])


def compact_labels(ds: MultiLabelDataset,
                   ) -> Tuple[MultiLabelDataset, np.ndarray]:
    """
    Drops labels without any example in |ds| (they would have no client).

    :returns: (relabeled dataset, mapping) where mapping[old] is the new
    index or -1 for a dropped label
    """
    present = np.zeros(ds.C, dtype=bool)
    for labels in ds.label_sets:
        present[list(labels)] = True
    mapping = np.full(ds.C, -1, dtype=np.int64)
    mapping[present] = np.arange(int(present.sum()))
    dropped = np.flatnonzero(~present).tolist()
    if dropped:
        logger.warning(
            f"dropping {len(dropped)} labels without training instances: "
            f"{dropped}. {fedalc.err.DROPPED_LABELS}")
        logger.debug(
            "label remap table: " + ', '.join(
                f"{old}->{new}" for old, new in enumerate(mapping.tolist())
                if new >= 0))
    return remap_labels(ds, mapping), mapping


def remap_labels(ds: MultiLabelDataset,
                 mapping: np.ndarray,) -> MultiLabelDataset:
    """
    applies a compact_labels() mapping, dropping examples left without
    labels (with a logged count)
    """
    C = int(mapping.max()) + 1 if len(mapping) else 0
    examples = []
    for x, labels in ds.examples:
        kept = tuple(sorted(int(mapping[u]) for u in labels if mapping[u] >= 0))
        if kept:
            examples.append((x, kept))
    if len(examples) != len(ds):
        logger.warning(
            f"dropped {len(ds) - len(examples)} examples left without labels")
    return MultiLabelDataset(F=ds.F, C=max(C, 1), examples=examples)


def synth_multilabel(seed: int,
                     C: int,
                     F: int,
                     N: int,
                     avg_labels: float,
                     cluster_count: int,
                     noise: float = fedalc.settings.SYNTH_NOISE,
                     ) -> MultiLabelDataset:
    """
    A synthetic dataset with correlated labels. Labels are split into
    |cluster_count| contiguous clusters. Every instance picks a cluster, a
    Poisson(avg_labels) number of its labels (clipped to [1, cluster size])
    and features = cluster prototype + the chosen labels' prototypes. Each
    instance then gets gaussian noise with std |noise| on max(1, F // 4)
    features drawn from the whole vocabulary, so label groups are diffuse
    and the positive hinge stays active through training.
    """
    if C < 4:
        raise ValueError(f"need at least 4 labels, got {C}")
    if not 1 <= cluster_count <= C:
        raise ValueError(f"cluster_count must be in [1, {C}], got "
                         f"{cluster_count}")
    if F < 2 or N < 1 or not avg_labels > 0 or noise < 0:
        raise ValueError(
            f"infeasible synthetic parameters F={F}, N={N}, "
            f"avg_labels={avg_labels}, noise={noise}")
    rng = np.random.default_rng(seed)
    clusters = np.array_split(np.arange(C), cluster_count)

    def prototype(support: int) -> np.ndarray:
        proto = np.zeros(F)
        active = rng.choice(F, size=support, replace=False)
        proto[active] = rng.standard_normal(support)
        return proto

    cluster_protos = [prototype(max(2, F // (2 * cluster_count)))
                      for _ in clusters]
    label_protos = [prototype(max(2, F // C)) for _ in range(C)]
    noise_support = max(1, F // 4)

    examples = []
    for _ in range(N):
        c = int(rng.integers(cluster_count))
        members = clusters[c]
        count = int(np.clip(rng.poisson(avg_labels), 1, len(members)))
        labels = tuple(sorted(
            int(u) for u in rng.choice(members, size=count, replace=False)))
        dense = cluster_protos[c] + sum(label_protos[u] for u in labels)
        noisy = rng.choice(F, size=noise_support, replace=False)
        dense[noisy] += noise * rng.standard_normal(noise_support)
        active = np.flatnonzero(dense)
        examples.append((SparseVector(active, dense[active]), labels))
    logger.debug(
        f"synthesized {N} examples, {C} labels in {cluster_count} clusters")
    return MultiLabelDataset(F=F, C=C, examples=examples)


def shard_index(ds: MultiLabelDataset) -> List[List[int]]:
    """:returns: for every label, the indices of the examples carrying it"""
    index = [[] for _ in range(ds.C)]  # type: List[List[int]]
    for i, labels in enumerate(ds.label_sets):
        for label in labels:
            index[label].append(i)
    return index


def cmd_prepare(input: str,
                out: str,
                val_frac: float = fedalc.settings.VAL_FRACTION,
                test: Optional[str] = None,
                test_frac: float = 0.0,
                seed: int = 0,
                allow_unlabeled: bool = False,) -> dict:
    """
    Splits a dataset into train/val/test XMLC files plus a shard index.

    :arg input: XMLC file with the training (and possibly test) examples
    :arg out: output folder
    :param test: separate XMLC test file (takes precedence over |test_frac|)
    :param test_frac: fraction of |input| held out as test set
    :returns: the shard index written to shards.json
    """
    ds = load_xmlc(input, allow_unlabeled)
    if test:
        test_ds = load_xmlc(test, allow_unlabeled)
        if (test_ds.F, test_ds.C) != (ds.F, ds.C):
            raise ValueError(
                f"{test} has {test_ds.F} features / {test_ds.C} labels, "
                f"{input} has {ds.F} / {ds.C}")
    else:
        # a different stream than the validation split
        ds, test_ds = split(ds, test_frac, seed + 1)
    train, val = split(ds, val_frac, seed)
    fedalc.utils.ensure_out_dir(out)

    checksums = {}
    for filename, part in ((fedalc.settings.TRAIN_FILENAME, train),
                           (fedalc.settings.VAL_FILENAME, val),
                           (fedalc.settings.TEST_FILENAME, test_ds),):
        path = os.path.join(out, filename)
        save_xmlc(path, part)
        checksums[filename] = fedalc.utils.sha256_file(path)

    index = {
        'sha256': checksums,
        'counts': {'train': len(train), 'val': len(val), 'test': len(test_ds)},
        'shards': {str(u): members
                   for u, members in enumerate(shard_index(train))},
    }
    shards_path = os.path.join(out, fedalc.settings.SHARDS_FILENAME)
    logger.info(f"Writing shard index to {shards_path}")
    with open(shards_path, 'w') as f:
        json.dump(index, f, indent=1, sort_keys=True)
    logger.info(
        f"prepared {len(train)} train, {len(val)} val, {len(test_ds)} test "
        f"examples in {out}")
    return index


def add_prepare_args(ap):
    ap.add_argument('--input', help="XMLC format dataset", required=True)
    ap.add_argument('--out', help="output folder", required=True)
    ap.add_argument(
        '--val-frac', help="fraction of the training data for validation",
        type=float, default=fedalc.settings.VAL_FRACTION)
    ap.add_argument('--test', help="separate XMLC format test set")
    ap.add_argument(
        '--test-frac', help="fraction of --input held out for testing "
        "(ignored with --test)", type=float, default=0.0)
    ap.add_argument('--seed', help="split seed", type=int, default=0)
    ap.add_argument(
        '--allow-unlabeled', help="skip examples without labels instead of "
        "failing", action='store_true')


def cli_main():
    import argparse

    ap = argparse.ArgumentParser(
        description="split an XMLC dataset into train/val/test files",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    add_prepare_args(ap)

    # add --log-file and --verbose
    cmd_prepare(**fedalc.cli.cli_common(ap))


if __name__ == '__main__':
    cli_main()
