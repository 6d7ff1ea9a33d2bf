import numpy as np
import pytest

import fedalc
import fedalc.data
import fedalc.model
from fedalc.federation import (
    TrainConfig,
)
from fedalc.losses import (
    HyperParams,
)

XMLC_TEXT = "2 4 3\n0,2 1:0.5 3:1.0\n1 0:2.0\n"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dims():
    return fedalc.model.ModelDims(
        features=12, embed=8, hidden1=16, hidden2=16, out=6)


@pytest.fixture
def tiny_params(tiny_dims):
    return fedalc.model.init_model(7, tiny_dims)


@pytest.fixture
def tiny_dataset():
    return fedalc.data.synth_multilabel(
        seed=3, C=6, F=12, N=60, avg_labels=2.0, cluster_count=2)


@pytest.fixture
def tiny_config():
    def make(**kwargs):
        kwargs.setdefault('rounds', 2)
        kwargs.setdefault('workers', 2)
        kwargs.setdefault('batch_size', 8)
        kwargs.setdefault('hp', HyperParams(k_mine=2))
        return TrainConfig(**kwargs)
    return make


@pytest.fixture
def xmlc_file(tmp_path):
    path = tmp_path / 'data.txt'
    path.write_text(XMLC_TEXT)
    return path
