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
Experiment config files: flat 'key = value' lines, '#' starts a comment.
Every key is validated in one pass and all problems are reported together.

    algorithm = fedalc
    rounds = 100
    lam = 1.0
    synthetic = true
"""

import dataclasses
import io
import logging
import os

from typing import (
    Any,
    Callable,
    Dict,
    List,
    Optional,
    Tuple,
    Union,
)

import fedalc
import fedalc.data
import fedalc.federation
import fedalc.losses
import fedalc.settings
import fedalc.utils
from fedalc.data import (
    MultiLabelDataset,
)
from fedalc.err import (
    ConfigError,
)
from fedalc.model import (
    ModelDims,
)

__all__ = [
    'RunConfig',
    'load_config',
    'load_datasets',
    'parse_config',
]

logger = logging.getLogger(__name__)


def parse_bool(value: str) -> bool:
    """
    >>> parse_bool('Yes'), parse_bool('0')
    (True, False)
    """
    lowered = value.strip().lower()
    if lowered in fedalc.settings.TRUE_WORDS:
        return True
    if lowered in fedalc.settings.FALSE_WORDS:
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


TRAIN_KEYS = {
    'algorithm': str,
    'rounds': int,
    'fixed_rounds': int,
    'client_lr': float,
    'server_lr': float,
    'fixed_lr': float,
    'local_epochs': int,
    'batch_size': int,
    'seed': int,
    'sigma_mode': str,
    'sigma_per_instance': parse_bool,
    'server_reg': str,
    'canonical_mode': str,
    'label_privacy': parse_bool,
    'label_salt': str,
    'map_variant': str,
    'workers': int,
}  # type: Dict[str, Callable[[str], Any]]

HP_KEYS = {
    'alpha': float,
    'beta': float,
    'nu': float,
    'lam': float,
    'margin_pos': float,
    'k_mine': int,
}

# config key -> ModelDims field
DIMS_KEYS = {
    'embed_dim': 'embed',
    'hidden1_dim': 'hidden1',
    'hidden2_dim': 'hidden2',
    'out_dim': 'out',
}

DATA_KEYS = {
    'train': str,
    'val': str,
    'test': str,
    'val_frac': float,
    'test_frac': float,
    'synthetic': parse_bool,
    'synth_labels': int,
    'synth_features': int,
    'synth_instances': int,
    'synth_avg_labels': float,
    'synth_clusters': int,
    'synth_noise': float,
    'synth_seed': int,
}

ALIASES = {'lambda': 'lam'}

LR_KEYS = ('client_lr', 'server_lr', 'fixed_lr')


def _converter(key: str) -> Optional[Callable[[str], Any]]:
    if key in DIMS_KEYS:
        return int
    for table in (TRAIN_KEYS, HP_KEYS, DATA_KEYS):
        if key in table:
            return table[key]
    return None


def _valid_keys() -> List[str]:
    return sorted([*TRAIN_KEYS, *HP_KEYS, *DIMS_KEYS, *DATA_KEYS])


@dataclasses.dataclass
class RunConfig:
    train: 'fedalc.federation.TrainConfig'
    dims: Dict[str, int]
    data: Dict[str, Any]
    text: str
    values: Dict[str, Any]
    base_dir: str = '.'

    def model_dims(self, features: int) -> ModelDims:
        return ModelDims(features=features, **self.dims)

    def path(self, key: str) -> Optional[str]:
        """a data path relative to the config file, or None if unset"""
        value = self.data.get(key)
        if value is None:
            return None
        return os.path.join(self.base_dir, os.path.expanduser(value))


def _read_pairs(text: str,
                problems: List[str],) -> Dict[str, str]:
    pairs = {}
    for line_number, line in enumerate(io.StringIO(text), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = ALIASES.get(key.strip(), key.strip())
        if not sep or not key:
            problems.append(f"line {line_number}: expected 'key = value'")
            continue
        if key in pairs:
            problems.append(f"line {line_number}: duplicate key {key!r}")
            continue
        pairs[key] = value.strip()
    return pairs


def parse_config(text: str, base_dir: str = '.') -> RunConfig:
    """
    :arg text: the config file contents
    :param base_dir: folder data paths are relative to
    :raises: ConfigError listing every problem found
    """
    problems = []  # type: List[str]
    values = {}  # type: Dict[str, Any]
    for key, raw in _read_pairs(text, problems).items():
        convert = _converter(key)
        if convert is None:
            problems.append(
                f"unknown key {key!r} (valid keys: "
                f"{', '.join(_valid_keys())})")
            continue
        try:
            values[key] = convert(raw)
        except ValueError as err:
            problems.append(f"{key}: cannot parse {raw!r} ({err})")

    for key in LR_KEYS:
        if key in values and not values[key] > 0:
            problems.append(f"{key} must be > 0, got {values[key]}")

    hp = None
    try:
        hp = fedalc.losses.HyperParams(
            **{k: v for k, v in values.items() if k in HP_KEYS})
    except ValueError as err:
        problems.extend(str(err).split('; '))

    train = None
    try:
        train = fedalc.federation.TrainConfig(
            hp=hp or fedalc.losses.HyperParams(),
            **{k: v for k, v in values.items() if k in TRAIN_KEYS})
    except ConfigError as err:
        problems.extend(err.problems)

    dims = {field: values[key] for key, field in DIMS_KEYS.items()
            if key in values}
    for field, value in dims.items():
        if value < 1:
            problems.append(f"{field} dimension must be >= 1, got {value}")

    data = {k: v for k, v in values.items() if k in DATA_KEYS}
    problems.extend(_check_data(data, base_dir))

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        train=train, dims=dims, data=data, text=text, values=values,
        base_dir=base_dir,)


def _check_data(data: Dict[str, Any], base_dir: str) -> List[str]:
    problems = []
    if data.get('synthetic'):
        for key in ('train', 'val', 'test'):
            if key in data:
                problems.append(f"{key} cannot be combined with synthetic")
    elif 'train' not in data:
        problems.append("either train = <path> or synthetic = true is needed")
    else:
        for key in ('train', 'val', 'test'):
            if key in data:
                path = os.path.join(base_dir, os.path.expanduser(data[key]))
                if not os.path.isfile(path):
                    problems.append(f"{key} file {path} not found")
    if any(k.startswith('synth_') for k in data) and not data.get('synthetic'):
        problems.append("synth_* keys need synthetic = true")
    for key in ('val_frac', 'test_frac'):
        if key in data and not 0 <= data[key] < 1:
            problems.append(f"{key} must be in [0, 1), got {data[key]}")
    return problems


def load_config(path: Union[str, os.PathLike]) -> RunConfig:
    logger.info(f"Loading config {path}")
    with open(path) as f:
        text = f.read()
    return parse_config(
        text, base_dir=os.path.dirname(os.path.abspath(path)))


def _synthetic(run_config: RunConfig) -> MultiLabelDataset:
    data = run_config.data
    return fedalc.data.synth_multilabel(
        seed=data.get('synth_seed', run_config.train.seed),
        C=data.get('synth_labels', fedalc.settings.SYNTH_LABELS),
        F=data.get('synth_features', fedalc.settings.SYNTH_FEATURES),
        N=data.get('synth_instances', fedalc.settings.SYNTH_INSTANCES),
        avg_labels=data.get(
            'synth_avg_labels', fedalc.settings.SYNTH_AVG_LABELS),
        cluster_count=data.get(
            'synth_clusters', fedalc.settings.SYNTH_CLUSTERS),
        noise=data.get('synth_noise', fedalc.settings.SYNTH_NOISE),)


def _digest(ds: MultiLabelDataset) -> str:
    stream = io.StringIO()
    fedalc.data.serialize_xmlc(ds, stream)
    return fedalc.utils.sha256_bytes(stream.getvalue().encode())


def load_datasets(run_config: RunConfig,
                  ) -> Tuple[MultiLabelDataset,
                             Optional[MultiLabelDataset],
                             Optional[MultiLabelDataset],
                             Dict[str, str]]:
    """
    Loads (or synthesizes) the data of a run. Without a val file,
    val_frac of the training data is split off; a synthetic dataset also
    has test_frac split off as test set.

    :returns: (train, val, test, sha256 of every input)
    """
    data = run_config.data
    seed = run_config.train.seed
    checksums = {}
    test = None
    if data.get('synthetic'):
        ds = _synthetic(run_config)
        checksums['synthetic'] = _digest(ds)
        ds, test = fedalc.data.split(ds, data.get('test_frac', 0.0), seed + 1)
        train, val = fedalc.data.split(
            ds, data.get('val_frac', fedalc.settings.VAL_FRACTION), seed)
        return train, val, test, checksums

    train_path = run_config.path('train')
    train = fedalc.data.load_xmlc(train_path)
    checksums[train_path] = fedalc.utils.sha256_file(train_path)
    val = None
    if 'val' in data:
        val = fedalc.data.load_xmlc(run_config.path('val'))
        checksums[run_config.path('val')] = fedalc.utils.sha256_file(
            run_config.path('val'))
    elif data.get('val_frac'):
        train, val = fedalc.data.split(train, data['val_frac'], seed)
    if 'test' in data:
        test = fedalc.data.load_xmlc(run_config.path('test'))
        checksums[run_config.path('test')] = fedalc.utils.sha256_file(
            run_config.path('test'))
    for name, part in (('val', val), ('test', test)):
        if part is not None and (part.F, part.C) != (train.F, train.C):
            raise ValueError(
                f"{name} set has {part.F} features / {part.C} labels, "
                f"train has {train.F} / {train.C}")
    return train, val, test, checksums


if __name__ == '__main__':
    import doctest
    doctest.testmod()
