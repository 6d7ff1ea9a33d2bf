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
The round based simulation. Every class label has exactly one client, which
only holds the positive instances of its label. Each round all clients
train a copy of the shared model (and, for the dynamic algorithms, their
own class embedding) on the positive loss; the server averages the models,
merges the class embeddings and takes a regularizer step on them.

algorithm      class embeddings      server step
fedavg         trained by clients    none
fedavg-fixed   random, frozen        none
fedaws         trained by clients    spreadout (top-k mined)
fedalc         trained by clients    label correlation (top-k mined)
fedalc-fixed   pre-trained, frozen   none
"""

import concurrent.futures
import csv
import dataclasses
import json
import logging
import math
import os

from typing import (
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

import fedalc
import fedalc.cli
import fedalc.config
import fedalc.data
import fedalc.err
import fedalc.labelsets
import fedalc.losses
import fedalc.metrics
import fedalc.model
import fedalc.numeric
import fedalc.settings
import fedalc.utils
from fedalc.data import (
    ClientShard,
    MultiLabelDataset,
)
from fedalc.err import (
    ConfigError,
)
from fedalc.labelsets import (
    LabelSetTable,
    SigmaWeights,
)
from fedalc.losses import (
    HyperParams,
)
from fedalc.model import (
    ClassEmbeddingMatrix,
    ModelDims,
    ModelParams,
)
from fedalc.numeric import (
    DenseVector,
)

__all__ = [
    'ClientShard',
    'ExperimentResult',
    'RoundReport',
    'RunManifest',
    'ServerState',
    'TrainConfig',
    'cli_main',
    'client_update',
    'cmd_run',
    'collapse_gauge',
    'evaluate',
    'positive_risk',
    'run_experiment',
    'run_round',
    'server_aggregate',
    'server_embedding_step',
    'server_merge_embeddings',
    'train_fixed_embeddings',
    'write_history_csv',
]

logger = logging.getLogger(__name__)

DYNAMIC_ALGORITHMS = ('fedavg', 'fedaws', 'fedalc')
CORRELATION_ALGORITHMS = ('fedalc', 'fedalc-fixed')


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    algorithm: str = 'fedalc'
    rounds: int = fedalc.settings.ROUNDS
    fixed_rounds: int = fedalc.settings.FIXED_ROUNDS
    client_lr: float = fedalc.settings.CLIENT_LR
    server_lr: float = fedalc.settings.SERVER_LR
    fixed_lr: float = fedalc.settings.FIXED_LR
    hp: HyperParams = dataclasses.field(default_factory=HyperParams)
    local_epochs: int = fedalc.settings.LOCAL_EPOCHS
    batch_size: int = fedalc.settings.BATCH_SIZE
    seed: int = 0
    sigma_mode: str = 'raw'
    sigma_per_instance: bool = False
    server_reg: str = 'topk'
    canonical_mode: str = 'raw'
    label_privacy: bool = False
    label_salt: str = ''
    map_variant: str = 'macro'
    workers: Optional[int] = None

    def __post_init__(self):
        problems = []
        if self.algorithm not in fedalc.err.VALID_ALGORITHMS:
            problems.append(
                f"algorithm {self.algorithm!r} is not one of "
                f"{', '.join(fedalc.err.VALID_ALGORITHMS)}")
        if self.rounds < 1:
            problems.append(f"rounds must be >= 1, got {self.rounds}")
        if self.fixed_rounds < 0:
            problems.append(
                f"fixed_rounds must be >= 0, got {self.fixed_rounds}")
        for name in ('client_lr', 'server_lr', 'fixed_lr'):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0")
        if self.local_epochs < 0:
            problems.append(
                f"local_epochs must be >= 0, got {self.local_epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        for name, valid in (
                ('sigma_mode', fedalc.settings.SIGMA_MODES),
                ('server_reg', fedalc.settings.SERVER_REGS),
                ('canonical_mode', fedalc.labelsets.MODES),
                ('map_variant', fedalc.metrics.MAP_VARIANTS),):
            if getattr(self, name) not in valid:
                problems.append(
                    f"{name} {getattr(self, name)!r} is not one of "
                    f"{', '.join(valid)}")
        if self.seed < 0:
            problems.append(f"seed must be >= 0, got {self.seed}")
        if self.workers is not None and self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        if problems:
            raise ConfigError(problems)

    @property
    def dynamic_embeddings(self) -> bool:
        """whether clients train (and the server merges) class embeddings"""
        return self.algorithm in DYNAMIC_ALGORITHMS

    @property
    def uses_label_sets(self) -> bool:
        return self.algorithm in CORRELATION_ALGORITHMS


@dataclasses.dataclass
class ServerState:
    theta: ModelParams
    W: ClassEmbeddingMatrix
    sigma: Optional[SigmaWeights] = None
    round: int = 0


@dataclasses.dataclass
class RoundReport:
    """metrics are NaN when there is nothing to evaluate on"""
    round: int
    p_at_1: float
    p_at_3: float
    p_at_5: float
    map: float
    collapse_gauge: float
    mean_client_loss: float

    def row(self) -> Tuple:
        return tuple(getattr(self, c) for c in fedalc.settings.HISTORY_COLUMNS)

    def metrics(self) -> Dict[str, float]:
        return {k: v for k, v in dataclasses.asdict(self).items()
                if k != 'round'}


@dataclasses.dataclass
class ExperimentResult:
    history: List[RoundReport]
    state: ServerState
    test_metrics: Optional[Dict[str, float]] = None
    best_round: Optional[int] = None
    # mapping[original label] = client index, -1 for dropped labels
    label_mapping: Optional[np.ndarray] = None
    labels: Optional[LabelSetTable] = None


@dataclasses.dataclass
class RunManifest:
    config_text: str
    config: Dict
    checksums: Dict[str, str]
    seed: int
    history_csv: str
    final_validation: Dict[str, float]
    test: Optional[Dict[str, float]]
    best_round: Optional[int]
    version: str = fedalc.__version__

    def write(self, path: Union[str, os.PathLike]):
        logger.info(f"Writing manifest to {path}")
        with open(path, 'w') as f:
            json.dump(dataclasses.asdict(self), f, indent=1, sort_keys=True)


def _client_rng(cfg: TrainConfig,
                round_index: int,
                label: int,) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, round_index, label])


def positive_risk(theta: ModelParams,
                  w_y: DenseVector,
                  shard: ClientShard,
                  margin_pos: float = fedalc.settings.MARGIN_POS,) -> float:
    """mean positive loss of a client's shard"""
    if shard.empty:
        raise ValueError(f"shard of label {shard.label} is empty")
    x = fedalc.model.instances_to_csr(shard.instances, theta.dims.features)
    embs, _ = fedalc.model.forward_batch(theta, x)
    values, _, _ = fedalc.losses.positive_loss_batch(embs, w_y, margin_pos)
    return float(np.mean(values))


def client_update(theta: ModelParams,
                  w_y: DenseVector,
                  shard: ClientShard,
                  cfg: TrainConfig,
                  round_index: int = 0,
                  ) -> Tuple[ModelParams, DenseVector, float]:
    """
    E epochs of mini-batch SGD on the positive loss over a client's shard.
    Batches are taken in order after a shuffle seeded by
    (seed, round, label). Gradients are batch means.

    :arg theta: the broadcast model (not modified)
    :arg w_y: the client's class embedding (not modified). Frozen for the
    fixed-embedding algorithms.
    :returns: (updated model, updated unit-norm w_y, mean loss over the
    batches seen)
    """
    if shard.empty:
        raise ValueError(f"shard of label {shard.label} is empty")
    theta = theta.copy()
    w_y = np.array(w_y, dtype=np.float64)
    if not cfg.local_epochs:
        return theta, w_y, positive_risk(
            theta, w_y, shard, cfg.hp.margin_pos)

    rng = _client_rng(cfg, round_index, shard.label)
    x_all = fedalc.model.instances_to_csr(
        shard.instances, theta.dims.features)
    n = x_all.shape[0]
    losses = []
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            x = x_all[order[start:start + cfg.batch_size]]
            embs, cache = fedalc.model.forward_batch(theta, x)
            values, grad_embs, grad_w = fedalc.losses.positive_loss_batch(
                embs, w_y, cfg.hp.margin_pos)
            losses.append(values)
            size = x.shape[0]
            grads = fedalc.model.backward_batch(
                theta, x, cache, grad_embs / size)
            fedalc.model.apply_gradients(
                theta, grads, cfg.client_lr, inplace=True)
            if cfg.dynamic_embeddings and np.any(grad_w):
                w_y = fedalc.numeric.l2_normalize(
                    fedalc.numeric.sgd_step(w_y, grad_w / size, cfg.client_lr))
    return theta, w_y, float(np.mean(np.concatenate(losses)))


def server_aggregate(thetas: Iterable[ModelParams]) -> ModelParams:
    """
    elementwise mean of the client models, reduced in iteration order.
    |thetas| may be a generator, it is consumed lazily.
    """
    return fedalc.model.average_params(thetas)


def server_merge_embeddings(
        W: ClassEmbeddingMatrix,
        returned: Union[Mapping[int, DenseVector],
                        Iterable[Tuple[int, DenseVector]]],
) -> ClassEmbeddingMatrix:
    """
    :returns: a copy of |W| with row y replaced by the row client y returned
    :raises: ValueError if a class index is returned twice
    """
    if isinstance(returned, Mapping):
        returned = returned.items()
    W = np.array(W, dtype=np.float64)
    seen = set()
    for label, row in returned:
        if label in seen:
            raise ValueError(f"class {label} returned more than once")
        if not 0 <= label < W.shape[0]:
            raise IndexError(
                f"class {label} out of range for {W.shape[0]} classes")
        seen.add(label)
        W[label] = row
    return W


def _server_regularizer(W: ClassEmbeddingMatrix,
                        cfg: TrainConfig,
                        sigma: Optional[SigmaWeights],
                        ) -> fedalc.losses.LossResult:
    k = min(cfg.hp.k_mine, W.shape[0] - 1)
    if k < cfg.hp.k_mine:
        logger.debug(f"k_mine clamped to {k} for {W.shape[0]} classes")
    normalized = cfg.sigma_mode == 'normalized'
    if cfg.algorithm == 'fedaws':
        if cfg.server_reg == 'full':
            return fedalc.losses.spreadout_reg(W, cfg.hp.nu)
        return fedalc.losses.spreadout_reg_topk(W, k)
    if cfg.server_reg == 'full':
        return fedalc.losses.correlation_reg(
            W, sigma, cfg.hp.nu, normalized=normalized)
    return fedalc.losses.correlation_reg_topk(
        W, sigma, k, cfg.hp.nu, normalized=normalized)


def server_embedding_step(W: ClassEmbeddingMatrix,
                          cfg: TrainConfig,
                          sigma: Optional[SigmaWeights] = None,
                          ) -> ClassEmbeddingMatrix:
    """
    One step of size lam * server_lr on the configured regularizer, followed
    by row normalization. The identity for the fedavg variants and the
    fixed-embedding algorithms, or when the step would be zero.

    :raises: ValueError if sigma is missing for fedalc
    """
    if cfg.algorithm not in ('fedaws', 'fedalc'):
        return np.array(W, dtype=np.float64)
    if cfg.algorithm == 'fedalc' and sigma is None:
        raise ValueError("fedalc needs sigma for the server step")
    W = np.asarray(W, dtype=np.float64)
    # a single class has no neighbors to push away
    if not cfg.hp.lam or not cfg.server_lr or W.shape[0] < 2:
        return W.copy()
    result = _server_regularizer(W, cfg, sigma)
    grad = result.rows_matrix(*W.shape)
    if not np.any(grad):
        return W.copy()
    logger.debug(f"server regularizer {result.value:.6g}")
    return fedalc.numeric.normalize_rows(
        W - cfg.hp.lam * cfg.server_lr * grad)


def train_fixed_embeddings(labels: LabelSetTable,
                           cfg: TrainConfig,
                           seed: int,
                           D: int = fedalc.settings.OUT_DIM,
                           ) -> ClassEmbeddingMatrix:
    """
    Pre-trains the class embeddings on the server from the collected label
    sets: fixed_rounds full gradient steps of size lam * fixed_lr on
    fixed_embedding_reg, normalizing rows after each step.
    """
    if not len(labels):
        raise ValueError("cannot train fixed embeddings without label sets")
    W = fedalc.model.init_class_embeddings(seed, labels.C, D)
    step = cfg.hp.lam * cfg.fixed_lr
    for t in range(cfg.fixed_rounds):
        result = fedalc.losses.fixed_embedding_reg(W, labels, cfg.hp)
        if t % 10 == 0:
            logger.debug(f"fixed embeddings step {t}: {result.value:.6g}")
        W = fedalc.numeric.normalize_rows(
            W - step * result.rows_matrix(labels.C, D))
    logger.info(
        f"trained fixed class embeddings for {cfg.fixed_rounds} steps")
    return W


def collapse_gauge(W: ClassEmbeddingMatrix) -> float:
    """
    mean cosine distance over unordered pairs of class embeddings: 0 when
    they collapsed to one point, about 1 when spread out

    >>> collapse_gauge(np.eye(3))
    1.0
    """
    W = np.asarray(W, dtype=np.float64)
    C = W.shape[0]
    if C < 2:
        raise ValueError(f"need at least 2 class embeddings, got {C}")
    upper = np.triu_indices(C, 1)
    return float(np.mean(1.0 - (W @ W.T)[upper]))


def _embed(theta: ModelParams, ds: MultiLabelDataset) -> np.ndarray:
    x = ds.csr()
    chunk = fedalc.settings.EVAL_BATCH_SIZE
    return np.concatenate([
        fedalc.model.forward_batch(theta, x[start:start + chunk])[0]
        for start in range(0, x.shape[0], chunk)])


def evaluate(theta: ModelParams,
             W: ClassEmbeddingMatrix,
             ds: Optional[MultiLabelDataset],
             map_variant: str = 'macro',) -> Dict[str, float]:
    """
    Scores every instance against every class in one matrix product (the
    batched form of fedalc.model.predict_scores()) and ranks with
    fedalc.metrics, which matches fedalc.model.top_k_labels() row by row.

    :returns: p_at_1, p_at_3, p_at_5 and map on |ds|; NaN for an empty or
    missing dataset (and for k > C)
    """
    names = [f"p_at_{k}" for k in fedalc.settings.PRECISION_KS] + ['map']
    if ds is None or not len(ds):
        return {name: math.nan for name in names}
    batch = fedalc.metrics.PredictionBatch(
        scores=_embed(theta, ds) @ np.asarray(W).T,
        truths=ds.label_sets,)
    out = {}
    for k in fedalc.settings.PRECISION_KS:
        out[f"p_at_{k}"] = fedalc.metrics.precision_at_k(batch, k) \
            if k <= batch.C else math.nan
    out['map'] = fedalc.metrics.mean_average_precision(batch, map_variant)
    return out


def _clients_in_chunks(shards: Sequence[ClientShard],
                       size: int) -> Iterable[Sequence[ClientShard]]:
    for start in range(0, len(shards), size):
        yield shards[start:start + size]


def run_round(state: ServerState,
              shards: Sequence[ClientShard],
              cfg: TrainConfig,
              val: Optional[MultiLabelDataset] = None,
              pool: Optional[concurrent.futures.Executor] = None,
              ) -> Tuple[ServerState, RoundReport]:
    """
    One full participation round: broadcast, client updates (on |pool|),
    aggregation, embedding merge, server step, validation.

    Client models reach server_aggregate() in client index order, a chunk
    of clients at a time, so at most a chunk of model copies is alive at
    once.
    """
    C = state.W.shape[0]
    if len(shards) != C:
        raise ValueError(f"{len(shards)} shards for {C} class embeddings")
    if pool is None:
        with concurrent.futures.ThreadPoolExecutor(cfg.workers) as pool:
            return run_round(state, shards, cfg, val, pool)

    def update(shard: ClientShard):
        return client_update(
            state.theta, state.W[shard.label], shard, cfg, state.round)

    chunk_size = cfg.workers or os.cpu_count() or 1
    returned = []
    losses = []

    def client_models() -> Iterable[ModelParams]:
        for chunk in _clients_in_chunks(shards, chunk_size):
            for shard, (theta, w_y, loss) in zip(
                    chunk, pool.map(update, chunk)):
                returned.append((shard.label, w_y))
                losses.append(loss)
                yield theta

    theta = server_aggregate(client_models())

    W = state.W
    if cfg.dynamic_embeddings:
        W = server_merge_embeddings(W, returned)
    W = server_embedding_step(W, cfg, state.sigma)

    metrics = evaluate(theta, W, val, cfg.map_variant)
    report = RoundReport(
        round=state.round + 1,
        collapse_gauge=collapse_gauge(W),
        mean_client_loss=float(np.mean(losses)),
        **metrics,)
    return ServerState(
        theta=theta, W=W, sigma=state.sigma, round=state.round + 1), report


def _collect_labels(shards: Sequence[ClientShard],
                    C: int,
                    theta: ModelParams,
                    cfg: TrainConfig,
                    ) -> Tuple[LabelSetTable, SigmaWeights]:
    perm = None
    if cfg.label_privacy:
        perm = fedalc.labelsets.label_permutation(C, cfg.label_salt)
    table = fedalc.labelsets.collect_label_sets(
        shards, C, cfg.canonical_mode, theta, perm, cfg.workers)
    sigma = fedalc.labelsets.compute_sigma(table, cfg.sigma_per_instance)
    if perm is not None:
        # the clients share the salt and map the server's results back
        sigma = sigma.permuted(perm)
        table = table.relabeled(np.argsort(perm))
    return table, sigma


def run_experiment(train: MultiLabelDataset,
                   cfg: TrainConfig,
                   val: Optional[MultiLabelDataset] = None,
                   test: Optional[MultiLabelDataset] = None,
                   dims: Optional[ModelDims] = None,) -> ExperimentResult:
    """
    Runs cfg.rounds rounds of cfg.algorithm. Labels without training
    instances are dropped first (val/test are remapped the same way). The
    model is initialized from cfg.seed and the class embeddings from
    cfg.seed + 1.
    """
    train, mapping = fedalc.data.compact_labels(train)
    if val is not None:
        val = fedalc.data.remap_labels(val, mapping)
    if test is not None:
        test = fedalc.data.remap_labels(test, mapping)
    C = train.C
    shards = fedalc.data.shard_by_label(train)
    if dims is None:
        dims = ModelDims(features=train.F)
    if dims.features != train.F:
        raise ValueError(
            f"model has {dims.features} features, data has {train.F}")

    theta = fedalc.model.init_model(cfg.seed, dims)
    W = fedalc.model.init_class_embeddings(cfg.seed + 1, C, dims.out)
    labels = sigma = None
    if cfg.uses_label_sets:
        labels, sigma = _collect_labels(shards, C, theta, cfg)
    if cfg.algorithm == 'fedalc-fixed':
        W = train_fixed_embeddings(labels, cfg, cfg.seed + 1, dims.out)
        sigma = None
    state = ServerState(theta=theta, W=W, sigma=sigma)
    logger.info(
        f"{cfg.algorithm}: {C} clients, {len(train)} training instances, "
        f"initial collapse gauge {collapse_gauge(W):.4f}")

    history = []
    with concurrent.futures.ThreadPoolExecutor(cfg.workers) as pool:
        for _ in range(cfg.rounds):
            state, report = run_round(state, shards, cfg, val, pool)
            history.append(report)
            logger.info(
                f"round {report.round}: P@1 {report.p_at_1:.4f} "
                f"P@3 {report.p_at_3:.4f} P@5 {report.p_at_5:.4f} "
                f"MAP {report.map:.4f} gauge {report.collapse_gauge:.4f} "
                f"loss {report.mean_client_loss:.4f}")

    best_round = None
    scored = [r for r in history if not math.isnan(r.p_at_1)]
    if scored:
        best = max(scored, key=lambda r: r.p_at_1)
        best_round = best.round
        logger.info(
            f"best validation P@1 {best.p_at_1:.4f} at round {best_round}")
    test_metrics = None
    if test is not None and len(test):
        test_metrics = evaluate(state.theta, state.W, test, cfg.map_variant)
        logger.info(f"test metrics: {test_metrics}")
    return ExperimentResult(
        history=history, state=state, test_metrics=test_metrics,
        best_round=best_round, label_mapping=mapping, labels=labels,)


def _format_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_history_csv(path: Union[str, os.PathLike],
                      history: Sequence[RoundReport],):
    """a version comment line, the column header, one row per round"""
    logger.info(f"Writing {len(history)} rounds to {path}")
    with open(path, 'w', newline='') as f:
        f.write(fedalc.settings.HISTORY_COMMENT + '\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(fedalc.settings.HISTORY_COLUMNS)
        for report in history:
            writer.writerow(_format_cell(v) for v in report.row())


def cmd_run(config: str,
            out_dir: str,
            workers: Optional[int] = None,) -> RunManifest:
    """
    Runs the experiment described by a config file and writes the history
    CSV, the final checkpoint and a manifest to |out_dir|.

    :raises: ConfigError listing every bad key
    """
    run_config = fedalc.config.load_config(config)
    cfg = run_config.train
    if workers is not None:
        cfg = dataclasses.replace(cfg, workers=workers)
    train, val, test, checksums = fedalc.config.load_datasets(run_config)
    result = run_experiment(
        train, cfg, val, test, dims=run_config.model_dims(train.F))

    fedalc.utils.ensure_out_dir(out_dir)
    history_path = os.path.join(out_dir, fedalc.settings.HISTORY_FILENAME)
    write_history_csv(history_path, result.history)
    fedalc.model.save_checkpoint(
        os.path.join(out_dir, fedalc.settings.CHECKPOINT_FILENAME),
        result.state.theta, result.state.W)
    manifest = RunManifest(
        config_text=run_config.text,
        config=run_config.values,
        checksums=checksums,
        seed=cfg.seed,
        history_csv=history_path,
        final_validation=result.history[-1].metrics(),
        test=result.test_metrics,
        best_round=result.best_round,)
    manifest.write(os.path.join(out_dir, fedalc.settings.MANIFEST_FILENAME))
    return manifest


def add_run_args(ap):
    ap.add_argument('--config', help="experiment config file", required=True)
    ap.add_argument('--out-dir', help="output folder", required=True)
    ap.add_argument(
        '--workers', help="client worker threads (default: cpu count)",
        type=int, default=os.cpu_count())


def cli_main():
    import argparse

    ap = argparse.ArgumentParser(
        description="runs a federated training experiment",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    add_run_args(ap)

    # add --log-file and --verbose
    cmd_run(**fedalc.cli.cli_common(ap))


if __name__ == '__main__':
    cli_main()
