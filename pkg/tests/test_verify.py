import numpy as np
import pytest

import fedalc
import fedalc.verify
from fedalc.err import (
    VerificationError,
)


def test_gradients_suite():
    summary = fedalc.verify.check_gradients(seed=0)
    assert summary['backward/embed_table'][0] == fedalc.verify.GRAD_SAMPLES
    assert 'fixed_embedding_reg' in summary
    for count, worst in summary.values():
        assert worst <= fedalc.verify.GRAD_TOLERANCE


def test_sigma_suite():
    summary = fedalc.verify.check_sigma(seed=0)
    assert summary['compute_sigma'] == (fedalc.verify.RANDOM_SAMPLES, 0.0)


def test_metrics_suite():
    summary = fedalc.verify.check_metrics(seed=0)
    assert summary['mean_average_precision'][0] == \
        fedalc.verify.RANDOM_SAMPLES


def test_brute_sigma_matches_by_hand():
    sigma = fedalc.verify.brute_sigma([(0, 1), (0,), (1, 2)], 3)
    np.testing.assert_allclose(sigma * 3, [[0, 1, 2], [1, 0, 1], [1, 0, 0]])


def test_brute_metrics_match_by_hand():
    scores = np.array([[0.9, 0.2, 0.5], [0.4, 0.8, 0.6]])
    truths = [(1,), (0, 1)]
    assert fedalc.verify.brute_precision_at_k(scores, truths, 1) == 0.5
    assert fedalc.verify.brute_average_precision(scores, truths) == \
        pytest.approx(0.75)


def test_cmd_verify_unknown_suite():
    with pytest.raises(ValueError):
        fedalc.verify.cmd_verify('everything')


def test_main_exit_codes(monkeypatch):
    def broken(seed):
        raise VerificationError("nope")

    monkeypatch.setitem(fedalc.verify.SUITES, 'metrics', broken)
    assert fedalc.verify.main(suite='metrics') == 1
    assert fedalc.verify.main(suite='sigma', seed=2) == 0


def test_fixture_config():
    aws = fedalc.verify.fixture_config('fedaws', seed=3, rounds=7)
    alc = fedalc.verify.fixture_config('fedalc')
    assert (aws.seed, aws.rounds) == (3, 7)
    assert aws.hp.lam < alc.hp.lam
    assert aws.server_lr == alc.server_lr == fedalc.verify.COLLAPSE_SERVER_LR
    assert alc.hp.k_mine == 5


def test_method_ordering_writes_histories(tmp_path):
    medians = fedalc.verify.method_ordering(
        seeds=[0], rounds=1, out_dir=str(tmp_path), workers=1)
    assert set(medians) == set(fedalc.verify.ORDERING_ALGORITHMS)
    assert all(0 <= p <= 1 for p in medians.values())
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        'fedalc-0.csv', 'fedavg-0.csv', 'fedaws-0.csv']
    with pytest.raises(ValueError):
        fedalc.verify.method_ordering(seeds=[])


@pytest.mark.slow
def test_collapse_suite():
    summary = fedalc.verify.check_collapse(seed=0)
    assert summary['collapse/fedavg'][1] < fedalc.verify.COLLAPSED_RATIO
    assert summary['collapse/fedalc'][1] > fedalc.verify.SPREAD_RATIO


@pytest.mark.slow
def test_fedalc_beats_fedaws_beats_fedavg():
    summary = fedalc.verify.check_ordering(seed=0)
    p_at_1 = {name.split('/')[1]: p for name, (_, p) in summary.items()}
    assert p_at_1['fedalc'] >= p_at_1['fedaws'] >= p_at_1['fedavg']
    assert p_at_1['fedalc'] - p_at_1['fedavg'] >= 0.10


@pytest.mark.slow
def test_method_ordering_histories_are_deterministic(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert fedalc.verify.method_ordering(out_dir=str(first)) == \
        fedalc.verify.method_ordering(out_dir=str(second), workers=2)
    names = sorted(p.name for p in first.iterdir())
    assert len(names) == 3 * len(fedalc.verify.ORDERING_SEEDS)
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()
