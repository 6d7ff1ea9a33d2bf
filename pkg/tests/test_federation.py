import csv
import dataclasses
import json
import math

import numpy as np
import pytest
import scipy.sparse

import fedalc
import fedalc.data
import fedalc.err
import fedalc.federation
import fedalc.labelsets
import fedalc.losses
import fedalc.model
import fedalc.numeric
import fedalc.settings
from fedalc.data import (
    ClientShard,
    MultiLabelDataset,
)
from fedalc.err import (
    ConfigError,
)
from fedalc.federation import (
    ServerState,
    TrainConfig,
)
from fedalc.labelsets import (
    SigmaWeights,
)
from fedalc.losses import (
    HyperParams,
)


def _assert_same_params(a, b):
    for name in fedalc.model.PARAM_NAMES:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def _all_labels(ds):
    every = tuple(range(ds.C))
    return MultiLabelDataset(
        F=ds.F, C=ds.C, examples=[(x, every) for x in ds.instances])


def test_train_config_lists_every_problem():
    with pytest.raises(ConfigError) as info:
        TrainConfig(algorithm='sgd', rounds=0, sigma_mode='weird')
    assert len(info.value.problems) == 3
    assert TrainConfig(algorithm='fedaws').dynamic_embeddings
    assert not TrainConfig(algorithm='fedavg-fixed').dynamic_embeddings
    assert TrainConfig(algorithm='fedalc-fixed').uses_label_sets
    assert not TrainConfig(algorithm='fedaws').uses_label_sets


def test_client_update(tiny_params, tiny_dataset, tiny_config):
    shard = fedalc.data.shard_by_label(tiny_dataset)[0]
    w_y = fedalc.model.init_class_embeddings(0, 6, 6)[0]
    before_w = w_y.copy()
    before = tiny_params.copy()
    cfg = tiny_config(algorithm='fedavg', local_epochs=2)

    theta, new_w, loss = fedalc.federation.client_update(
        tiny_params, w_y, shard, cfg, round_index=3)
    _assert_same_params(tiny_params, before)
    np.testing.assert_array_equal(w_y, before_w)
    assert np.linalg.norm(new_w) == pytest.approx(1.0)
    assert not np.array_equal(theta.w3, tiny_params.w3)
    assert loss >= 0.0

    again = fedalc.federation.client_update(
        tiny_params, w_y, shard, cfg, round_index=3)
    _assert_same_params(theta, again[0])
    np.testing.assert_array_equal(new_w, again[1])
    assert loss == again[2]


def test_client_update_frozen_embedding(tiny_params, tiny_dataset,
                                        tiny_config):
    shard = fedalc.data.shard_by_label(tiny_dataset)[1]
    w_y = fedalc.model.init_class_embeddings(0, 6, 6)[1]
    _, new_w, _ = fedalc.federation.client_update(
        tiny_params, w_y, shard, tiny_config(algorithm='fedavg-fixed'))
    np.testing.assert_array_equal(new_w, w_y)


def test_client_update_zero_lr_and_zero_epochs(tiny_params, tiny_dataset,
                                               tiny_config):
    shard = fedalc.data.shard_by_label(tiny_dataset)[2]
    w_y = fedalc.model.init_class_embeddings(0, 6, 6)[2]

    theta, new_w, _ = fedalc.federation.client_update(
        tiny_params, w_y, shard, tiny_config(client_lr=0.0))
    _assert_same_params(theta, tiny_params)
    np.testing.assert_allclose(new_w, w_y, rtol=1e-12, atol=1e-15)

    theta, new_w, loss = fedalc.federation.client_update(
        tiny_params, w_y, shard, tiny_config(local_epochs=0))
    _assert_same_params(theta, tiny_params)
    np.testing.assert_array_equal(new_w, w_y)
    assert loss == fedalc.federation.positive_risk(tiny_params, w_y, shard)

    with pytest.raises(ValueError):
        fedalc.federation.client_update(
            tiny_params, w_y, ClientShard(label=2, instances=[]),
            tiny_config())


def test_client_update_inactive_hinge(tiny_params, tiny_dataset, tiny_config):
    x = tiny_dataset.instances[0]
    shard = ClientShard(label=0, instances=[x])
    w_y, _ = fedalc.model.forward(tiny_params, x)
    theta, new_w, loss = fedalc.federation.client_update(
        tiny_params, w_y, shard, tiny_config())
    assert loss == 0.0
    _assert_same_params(theta, tiny_params)
    np.testing.assert_array_equal(new_w, w_y)


def test_client_update_descends(tiny_params, tiny_dataset, tiny_config):
    shard = ClientShard(label=0, instances=[tiny_dataset.instances[0]])
    w_y = fedalc.model.init_class_embeddings(0, 6, 6)[0]
    before = fedalc.federation.positive_risk(tiny_params, w_y, shard)
    theta, new_w, _ = fedalc.federation.client_update(
        tiny_params, w_y, shard, tiny_config(client_lr=1e-3))
    assert before > 0.0
    assert fedalc.federation.positive_risk(theta, new_w, shard) <= before


def test_server_aggregate(tiny_dims):
    thetas = [fedalc.model.init_model(s, tiny_dims) for s in range(3)]
    mean = fedalc.federation.server_aggregate(thetas)
    np.testing.assert_allclose(
        mean.b2, (thetas[0].b2 + thetas[1].b2 + thetas[2].b2) / 3)
    shuffled = fedalc.federation.server_aggregate(thetas[::-1])
    for name in fedalc.model.PARAM_NAMES:
        np.testing.assert_allclose(
            getattr(shuffled, name), getattr(mean, name),
            rtol=1e-12, atol=1e-15)


def test_server_aggregate_of_copies_is_exact(tiny_params):
    _assert_same_params(
        fedalc.federation.server_aggregate([tiny_params] * 6), tiny_params)


def test_server_merge_embeddings():
    W = np.eye(3)
    merged = fedalc.federation.server_merge_embeddings(
        W, {2: np.array([0.0, 1.0, 0.0])})
    np.testing.assert_array_equal(merged[2], [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(merged[:2], W[:2])
    np.testing.assert_array_equal(W, np.eye(3))
    with pytest.raises(ValueError):
        fedalc.federation.server_merge_embeddings(
            W, [(0, W[0]), (0, W[1])])
    with pytest.raises(IndexError):
        fedalc.federation.server_merge_embeddings(W, [(3, W[0])])


def _clustered_W(rng, C=5, D=4):
    return fedalc.numeric.normalize_rows(
        np.ones((C, D)) + 0.05 * rng.standard_normal((C, D)))


def test_server_embedding_step_identity(rng, tiny_config):
    W = _clustered_W(rng)
    for algorithm in ('fedavg', 'fedavg-fixed', 'fedalc-fixed'):
        out = fedalc.federation.server_embedding_step(
            W, tiny_config(algorithm=algorithm))
        np.testing.assert_array_equal(out, W)
    out = fedalc.federation.server_embedding_step(
        W, tiny_config(algorithm='fedaws', hp=HyperParams(lam=0.0)))
    np.testing.assert_array_equal(out, W)
    with pytest.raises(ValueError):
        fedalc.federation.server_embedding_step(
            W, tiny_config(algorithm='fedalc'))


@pytest.mark.parametrize('algorithm, server_reg', [
    ('fedaws', 'full'),
    ('fedaws', 'topk'),
    ('fedalc', 'full'),
    ('fedalc', 'topk'),
])
def test_server_embedding_step_spreads(rng, tiny_config, algorithm,
                                       server_reg):
    W = _clustered_W(rng)
    weights = np.ones((5, 5))
    np.fill_diagonal(weights, 0.0)
    cfg = tiny_config(
        algorithm=algorithm, server_reg=server_reg, server_lr=0.05)
    out = fedalc.federation.server_embedding_step(
        W, cfg, SigmaWeights(C=5, weights=weights))
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0)
    assert fedalc.federation.collapse_gauge(out) > \
        fedalc.federation.collapse_gauge(W)


def test_train_fixed_embeddings(tiny_dataset, tiny_config):
    shards = fedalc.data.shard_by_label(tiny_dataset)
    labels = fedalc.labelsets.collect_label_sets(shards, tiny_dataset.C)
    cfg = tiny_config(fixed_rounds=0)
    np.testing.assert_array_equal(
        fedalc.federation.train_fixed_embeddings(labels, cfg, 9, 6),
        fedalc.model.init_class_embeddings(9, tiny_dataset.C, 6))

    cfg = tiny_config(fixed_rounds=20, fixed_lr=0.02)
    W = fedalc.federation.train_fixed_embeddings(labels, cfg, 9, 6)
    np.testing.assert_allclose(np.linalg.norm(W, axis=1), 1.0)
    start = fedalc.model.init_class_embeddings(9, tiny_dataset.C, 6)
    assert fedalc.losses.fixed_embedding_reg(W, labels, cfg.hp).value < \
        fedalc.losses.fixed_embedding_reg(start, labels, cfg.hp).value


def test_collapse_gauge():
    assert fedalc.federation.collapse_gauge(np.tile([[0.0, 1.0]], (4, 1))) \
        == 0.0
    assert fedalc.federation.collapse_gauge(np.eye(5)) == 1.0
    with pytest.raises(ValueError):
        fedalc.federation.collapse_gauge(np.eye(1))


def test_evaluate(tiny_params, tiny_dataset):
    W = fedalc.model.init_class_embeddings(0, tiny_dataset.C, 6)
    missing = fedalc.federation.evaluate(tiny_params, W, None)
    assert set(missing) == {'p_at_1', 'p_at_3', 'p_at_5', 'map'}
    assert all(math.isnan(v) for v in missing.values())

    metrics = fedalc.federation.evaluate(tiny_params, W, tiny_dataset)
    for value in metrics.values():
        assert 0.0 <= value <= 1.0

    few = fedalc.data.synth_multilabel(
        seed=0, C=4, F=12, N=10, avg_labels=1.0, cluster_count=1)
    metrics = fedalc.federation.evaluate(tiny_params, W[:4], few)
    assert math.isnan(metrics['p_at_5'])
    assert not math.isnan(metrics['p_at_3'])


def test_run_round_checks_shards(tiny_params, tiny_dataset, tiny_config):
    W = fedalc.model.init_class_embeddings(0, tiny_dataset.C, 6)
    shards = fedalc.data.shard_by_label(tiny_dataset)
    state = ServerState(theta=tiny_params, W=W)
    with pytest.raises(ValueError):
        fedalc.federation.run_round(
            state, shards[:-1], tiny_config(algorithm='fedavg'))
    state, report = fedalc.federation.run_round(
        state, shards, tiny_config(algorithm='fedavg'))
    assert state.round == report.round == 1
    assert math.isnan(report.p_at_1)
    assert report.mean_client_loss >= 0.0


def test_run_experiment_is_deterministic(tiny_dataset, tiny_dims,
                                         tiny_config):
    train, val = fedalc.data.split(tiny_dataset, 0.2, 0)
    cfg = tiny_config(algorithm='fedaws', rounds=3, server_lr=0.01)
    first = fedalc.federation.run_experiment(train, cfg, val, dims=tiny_dims)
    second = fedalc.federation.run_experiment(
        train, dataclasses.replace(cfg, workers=1), val, dims=tiny_dims)
    assert [r.round for r in first.history] == [1, 2, 3]
    assert first.history == second.history
    _assert_same_params(first.state.theta, second.state.theta)
    np.testing.assert_array_equal(first.state.W, second.state.W)
    assert first.best_round in (1, 2, 3)
    assert first.test_metrics is None


def test_fedalc_without_negatives_is_fedavg(tiny_dataset, tiny_dims,
                                           tiny_config):
    train = _all_labels(tiny_dataset)
    fedavg = fedalc.federation.run_experiment(
        train, tiny_config(algorithm='fedavg'), dims=tiny_dims)
    ours = fedalc.federation.run_experiment(
        train, tiny_config(algorithm='fedalc', server_lr=0.1),
        dims=tiny_dims)
    assert not ours.state.sigma.nnz
    _assert_same_params(fedavg.state.theta, ours.state.theta)
    np.testing.assert_array_equal(fedavg.state.W, ours.state.W)


def test_label_privacy_does_not_change_training(tiny_dataset, tiny_dims,
                                                tiny_config):
    cfg = tiny_config(algorithm='fedalc', server_lr=0.05)
    plain = fedalc.federation.run_experiment(tiny_dataset, cfg, dims=tiny_dims)
    private = fedalc.federation.run_experiment(
        tiny_dataset,
        dataclasses.replace(cfg, label_privacy=True, label_salt='s3cret'),
        dims=tiny_dims)
    assert private.labels == plain.labels
    np.testing.assert_array_equal(
        private.state.sigma.dense(), plain.state.sigma.dense())
    np.testing.assert_array_equal(private.state.W, plain.state.W)


def test_fixed_algorithms_keep_embeddings(tiny_dataset, tiny_dims,
                                          tiny_config):
    result = fedalc.federation.run_experiment(
        tiny_dataset, tiny_config(algorithm='fedavg-fixed'), dims=tiny_dims)
    np.testing.assert_array_equal(
        result.state.W,
        fedalc.model.init_class_embeddings(1, tiny_dataset.C, 6))

    cfg = tiny_config(algorithm='fedalc-fixed', fixed_rounds=5)
    result = fedalc.federation.run_experiment(
        tiny_dataset, cfg, dims=tiny_dims)
    assert result.state.sigma is None
    np.testing.assert_array_equal(
        result.state.W,
        fedalc.federation.train_fixed_embeddings(result.labels, cfg, 1, 6))


def test_run_experiment_drops_empty_labels(tiny_dataset, tiny_dims,
                                           tiny_config):
    wider = MultiLabelDataset(
        F=tiny_dataset.F, C=tiny_dataset.C + 1,
        examples=tiny_dataset.examples)
    test = MultiLabelDataset(
        F=wider.F, C=wider.C,
        examples=tiny_dataset.examples[:5] + [
            (tiny_dataset.instances[0], (wider.C - 1,))])
    result = fedalc.federation.run_experiment(
        wider, tiny_config(algorithm='fedavg', rounds=1), test=test,
        dims=tiny_dims)
    assert result.label_mapping.tolist()[-1] == -1
    assert result.state.W.shape == (tiny_dataset.C, 6)
    assert set(result.test_metrics) == {'p_at_1', 'p_at_3', 'p_at_5', 'map'}


def test_write_history_csv(tmp_path):
    path = tmp_path / 'history.csv'
    report = fedalc.federation.RoundReport(
        round=1, p_at_1=0.5, p_at_3=0.25, p_at_5=math.nan, map=0.125,
        collapse_gauge=0.75, mean_client_loss=0.0625)
    fedalc.federation.write_history_csv(path, [report])
    lines = path.read_text().splitlines()
    assert lines[0] == fedalc.settings.HISTORY_COMMENT
    rows = list(csv.reader(lines[1:]))
    assert tuple(rows[0]) == fedalc.settings.HISTORY_COLUMNS
    assert rows[1] == ['1', '0.5', '0.25', 'nan', '0.125', '0.75', '0.0625']


def test_cmd_run(tmp_path):
    config = tmp_path / 'run.conf'
    config.write_text(
        "# tiny synthetic run\n"
        "algorithm = fedalc\n"
        "rounds = 2\n"
        "server_lr = 0.01\n"
        "k_mine = 2\n"
        "synthetic = true\n"
        "synth_labels = 6\n"
        "synth_features = 20\n"
        "synth_instances = 80\n"
        "synth_clusters = 2\n"
        "test_frac = 0.2\n"
        "embed_dim = 8\n"
        "hidden1_dim = 8\n"
        "hidden2_dim = 8\n"
        "out_dim = 4\n")
    out = tmp_path / 'out'
    manifest = fedalc.federation.cmd_run(str(config), str(out), workers=2)
    assert manifest.seed == 0
    assert manifest.version == fedalc.__version__
    assert set(manifest.final_validation) == {
        'p_at_1', 'p_at_3', 'p_at_5', 'map', 'collapse_gauge',
        'mean_client_loss'}

    with open(out / fedalc.settings.MANIFEST_FILENAME) as f:
        written = json.load(f)
    assert written['config_text'] == config.read_text()
    assert written['config']['rounds'] == 2
    assert list(written['checksums']) == ['synthetic']
    assert written['test'] is not None

    lines = (out / fedalc.settings.HISTORY_FILENAME).read_text().splitlines()
    assert len(lines) == 4
    params, W = fedalc.model.load_checkpoint(
        out / fedalc.settings.CHECKPOINT_FILENAME)
    assert W.shape == (6, 4)
    assert params.dims.embed == 8


def test_two_close_rows_move_apart(tiny_config):
    W = fedalc.numeric.normalize_rows(np.array([[1.0, 0.01], [1.0, -0.01]]))
    before = fedalc.numeric.cosine_distance(W[0], W[1])
    out = fedalc.federation.server_embedding_step(
        W, tiny_config(algorithm='fedaws', server_lr=0.1))
    assert fedalc.numeric.cosine_distance(out[0], out[1]) > before
    empty = fedalc.federation.server_merge_embeddings(W, {})
    np.testing.assert_array_equal(empty, W)


def test_round_without_local_training(tiny_params, tiny_dataset, tiny_config):
    W = fedalc.model.init_class_embeddings(0, tiny_dataset.C, 6)
    state = ServerState(theta=tiny_params, W=W, round=4)
    cfg = tiny_config(algorithm='fedavg', local_epochs=0,
                      hp=HyperParams(lam=0.0))
    new_state, report = fedalc.federation.run_round(
        state, fedalc.data.shard_by_label(tiny_dataset), cfg)
    assert new_state.round == report.round == 5
    np.testing.assert_array_equal(new_state.W, W)
    _assert_same_params(new_state.theta, tiny_params)


def test_collapse_gauge_antipodal():
    assert fedalc.federation.collapse_gauge(
        np.array([[1.0, 0.0], [-1.0, 0.0]])) == 2.0


SMALL_RUN = (
    "rounds = 1\n"
    "synthetic = true\n"
    "synth_labels = 4\n"
    "synth_features = 10\n"
    "synth_instances = 40\n"
    "synth_clusters = 1\n"
    "embed_dim = 4\n"
    "hidden1_dim = 4\n"
    "hidden2_dim = 4\n"
    "out_dim = 4\n")


def test_cmd_run_history_is_reproducible(tmp_path):
    config = tmp_path / 'run.conf'
    config.write_text("algorithm = fedavg\n" + SMALL_RUN)
    fedalc.federation.cmd_run(str(config), str(tmp_path / 'a'), workers=1)
    fedalc.federation.cmd_run(str(config), str(tmp_path / 'b'), workers=3)
    first = (tmp_path / 'a' / fedalc.settings.HISTORY_FILENAME).read_bytes()
    second = (tmp_path / 'b' / fedalc.settings.HISTORY_FILENAME).read_bytes()
    assert first == second
    assert len(first.decode().splitlines()) == 3


def test_cmd_run_unknown_algorithm(tmp_path):
    config = tmp_path / 'run.conf'
    config.write_text("algorithm = fedprox\n" + SMALL_RUN)
    with pytest.raises(ConfigError) as info:
        fedalc.federation.cmd_run(str(config), str(tmp_path / 'out'))
    message = str(info.value)
    for name in fedalc.err.VALID_ALGORITHMS:
        assert name in message
    assert not (tmp_path / 'out').exists()


@pytest.mark.parametrize('algorithm', ['fedaws', 'fedalc'])
def test_server_step_single_class(algorithm, tiny_config):
    W = np.array([[0.6, 0.8]])
    sigma = fedalc.labelsets.SigmaWeights(
        C=1, weights=scipy.sparse.csr_matrix((1, 1)))
    out = fedalc.federation.server_embedding_step(
        W, tiny_config(algorithm=algorithm, server_lr=0.1), sigma)
    np.testing.assert_array_equal(out, W)


def test_evaluate_matches_per_instance_ranking(tiny_params, tiny_dataset):
    W = fedalc.model.init_class_embeddings(5, tiny_dataset.C, 6)
    metrics = fedalc.federation.evaluate(tiny_params, W, tiny_dataset)
    for k in fedalc.settings.PRECISION_KS:
        hits = []
        for x, truth in tiny_dataset.examples:
            emb, _ = fedalc.model.forward(tiny_params, x)
            top = fedalc.model.top_k_labels(
                fedalc.model.predict_scores(W, emb), k)
            hits.append(len(set(top) & set(truth)) / k)
        assert metrics[f"p_at_{k}"] == pytest.approx(np.mean(hits), abs=1e-12)
