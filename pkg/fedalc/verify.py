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
Self checks against independent oracles: central finite differences for
every analytic gradient, brute-force loops for sigma and the ranking
metrics, the collapse experiment and the method ordering on the synthetic
fixture.
"""

import hashlib
import logging
import os
import sys

from typing import (
    Callable,
    Dict,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

import fedalc
import fedalc.cli
import fedalc.data
import fedalc.err
import fedalc.federation
import fedalc.labelsets
import fedalc.losses
import fedalc.metrics
import fedalc.model
import fedalc.numeric
import fedalc.settings
import fedalc.utils
from fedalc.data import (
    MultiLabelDataset,
)
from fedalc.err import (
    VerificationError,
)
from fedalc.federation import (
    TrainConfig,
)
from fedalc.labelsets import (
    LabelSetTable,
    SigmaWeights,
)
from fedalc.losses import (
    HyperParams,
)

__all__ = [
    'brute_average_precision',
    'brute_precision_at_k',
    'brute_sigma',
    'check_collapse',
    'check_gradients',
    'check_metrics',
    'check_ordering',
    'check_sigma',
    'cli_main',
    'cmd_verify',
    'fixture_config',
    'fixture_dataset',
    'method_ordering',
]

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
EXACT_TOLERANCE = 1e-12
GRAD_SAMPLES = 100
RANDOM_SAMPLES = 100
# finite differences are only trusted this far from a hinge or ReLU kink
KINK_MARGIN = 1e-3
MAX_ATTEMPTS = 5000
# the acceptance runs let the server step as far as the clients do
COLLAPSE_SERVER_LR = 0.1
FIXTURE_ROUNDS = 100
FIXTURE_DIMS = dict(embed=32, hidden1=64, hidden2=64, out=32)
FIXTURE_K = 5
# the top-k spreadout push of fedaws grows with the distances it pushes,
# the hinge of fedalc stops at nu
FIXTURE_LAMBDA = {'fedaws': 0.1, 'fedalc': 1.0}
# gauge ratios to the initial embeddings
COLLAPSED_RATIO = 0.2
SPREAD_RATIO = 0.5
ORDERING_ALGORITHMS = ('fedavg', 'fedaws', 'fedalc')
ORDERING_SEEDS = range(5)
ORDERING_TEST_FRACTION = 0.2
ORDERING_GAP = 0.10

# (checks run, worst error) per check name
Summary = Dict[str, Tuple[int, float]]


def _unit_rows(rng: np.random.Generator, C: int, D: int) -> np.ndarray:
    return fedalc.numeric.normalize_rows(rng.standard_normal((C, D)))


def _random_table(rng: np.random.Generator,
                  N: int,
                  C: int,) -> LabelSetTable:
    entries = []
    for j in range(N):
        count = int(rng.integers(1, C + 1))
        labels = tuple(sorted(
            int(u) for u in rng.choice(C, size=count, replace=False)))
        entries.append((hashlib.sha256(str(j).encode()).digest(), labels))
    return LabelSetTable(entries=entries, C=C)


def _random_sigma(rng: np.random.Generator, C: int) -> SigmaWeights:
    weights = rng.uniform(size=(C, C)) * (rng.uniform(size=(C, C)) > 0.3)
    np.fill_diagonal(weights, 0.0)
    return SigmaWeights(C=C, weights=weights)


def _off_diagonal(m: np.ndarray) -> np.ndarray:
    return m[~np.eye(m.shape[0], dtype=bool)]


def _near_hinge(W: np.ndarray, nu: float) -> bool:
    dist = _off_diagonal(1.0 - W @ W.T)
    return bool(np.any(np.abs(nu - dist) < KINK_MARGIN))


def _neighbor_tie(W: np.ndarray, k: int) -> bool:
    """whether the k-th and (k+1)-th nearest neighbor are nearly tied"""
    C = W.shape[0]
    if k >= C - 1:
        return False
    dist = 1.0 - W @ W.T
    np.fill_diagonal(dist, np.inf)
    ordered = np.sort(dist, axis=1)
    return bool(np.any(ordered[:, k] - ordered[:, k - 1] < KINK_MARGIN))


def _compare(name: str,
             analytic: np.ndarray,
             numeric: np.ndarray,
             summary: Summary,
             failures: List[str],
             tolerance: float = GRAD_TOLERANCE,):
    error = fedalc.numeric.relative_error(analytic, numeric)
    count, worst = summary.get(name, (0, 0.0))
    summary[name] = (count + 1, max(worst, error))
    if error > tolerance:
        failures.append(f"{name}: relative error {error:.3g} > {tolerance}")


def _sample(rng: np.random.Generator,
            draw: Callable[[np.random.Generator], Tuple],
            reject: Callable[..., bool],
            count: int = GRAD_SAMPLES,) -> List[Tuple]:
    samples = []
    for _ in range(MAX_ATTEMPTS):
        args = draw(rng)
        if not reject(*args):
            samples.append(args)
            if len(samples) == count:
                return samples
    raise VerificationError(
        f"could not draw {count} instances away from kinks")


def _check_positive_loss(rng, hp, summary, failures):
    def draw(rng):
        D = int(rng.integers(2, 9))
        return _unit_rows(rng, 2, D)

    def reject(emb, w):
        return abs(hp.margin_pos - emb @ w) < KINK_MARGIN

    for emb, w in _sample(rng, lambda r: tuple(draw(r)), reject):
        result = fedalc.losses.positive_loss(emb, w, hp.margin_pos, y=0)
        _compare('positive_loss/emb', result.grad_embedding,
                 fedalc.numeric.finite_diff_grad(
                     lambda e: fedalc.losses.positive_loss(
                         e, w, hp.margin_pos).value, emb),
                 summary, failures)
        _compare('positive_loss/w_y', result.grad_rows[0],
                 fedalc.numeric.finite_diff_grad(
                     lambda v: fedalc.losses.positive_loss(
                         emb, v, hp.margin_pos).value, w),
                 summary, failures)


def _check_contrastive_loss(rng, hp, summary, failures):
    def draw(rng):
        C, D = (int(n) for n in rng.integers(2, 9, size=2))
        W = _unit_rows(rng, C, D)
        emb = _unit_rows(rng, 1, D)[0]
        return emb, int(rng.integers(C)), W

    def reject(emb, y, W):
        dist = np.delete(1.0 - W @ emb, y)
        return bool(np.any(np.abs(hp.nu - dist) < KINK_MARGIN))

    for emb, y, W in _sample(rng, draw, reject):
        result = fedalc.losses.contrastive_loss(emb, y, W, hp)
        _compare('contrastive_loss/emb', result.grad_embedding,
                 fedalc.numeric.finite_diff_grad(
                     lambda e: fedalc.losses.contrastive_loss(
                         e, y, W, hp).value, emb),
                 summary, failures)
        _compare('contrastive_loss/W', result.rows_matrix(*W.shape),
                 fedalc.numeric.finite_diff_grad(
                     lambda m: fedalc.losses.contrastive_loss(
                         emb, y, m, hp).value, W),
                 summary, failures)


def _check_regularizer(name: str,
                       reg: Callable[[np.ndarray], fedalc.losses.LossResult],
                       W: np.ndarray,
                       summary: Summary,
                       failures: List[str],):
    _compare(name, reg(W).rows_matrix(*W.shape),
             fedalc.numeric.finite_diff_grad(lambda m: reg(m).value, W),
             summary, failures)


def _check_regularizers(rng, hp, summary, failures):
    def draw(rng):
        C, D = (int(n) for n in rng.integers(3, 9, size=2))
        W = _unit_rows(rng, C, D)
        k = int(rng.integers(1, C))
        return W, k, _random_sigma(rng, C), _random_table(rng, 10, C)

    def reject(W, k, sigma, table):
        return _near_hinge(W, hp.nu) or _neighbor_tie(W, k)

    for W, k, sigma, table in _sample(rng, draw, reject):
        checks = {
            'spreadout_reg':
                lambda m: fedalc.losses.spreadout_reg(m, hp.nu),
            'spreadout_reg_topk':
                lambda m: fedalc.losses.spreadout_reg_topk(m, k),
            'correlation_reg':
                lambda m: fedalc.losses.correlation_reg(m, sigma, hp.nu),
            'correlation_reg/normalized':
                lambda m: fedalc.losses.correlation_reg(
                    m, sigma, hp.nu, normalized=True),
            'correlation_reg_topk':
                lambda m: fedalc.losses.correlation_reg_topk(
                    m, sigma, k, hp.nu),
            'fixed_embedding_reg':
                lambda m: fedalc.losses.fixed_embedding_reg(m, table, hp),
        }
        for name, reg in checks.items():
            _check_regularizer(name, reg, W, summary, failures)


def _check_backward(rng, summary, failures):
    def draw(rng):
        F = int(rng.integers(2, 17))
        embed, hidden1, hidden2, out = (
            int(n) for n in rng.integers(2, 9, size=4))
        dims = fedalc.model.ModelDims(
            features=F, embed=embed, hidden1=hidden1, hidden2=hidden2,
            out=out)
        params = fedalc.model.init_model(int(rng.integers(2 ** 31)), dims)
        instances = []
        for _ in range(int(rng.integers(1, 4))):
            size = int(rng.integers(1, min(F, 4) + 1))
            active = np.sort(rng.choice(F, size=size, replace=False))
            instances.append(fedalc.numeric.SparseVector(
                active, rng.uniform(0.5, 1.5, size=size)))
        x = fedalc.model.instances_to_csr(instances, F)
        return params, x, rng.standard_normal((x.shape[0], out))

    def reject(params, x, grad_out):
        _, cache = fedalc.model.forward_batch(params, x)
        return bool(np.min(np.abs(cache.pre1)) < KINK_MARGIN
                    or np.min(np.abs(cache.pre2)) < KINK_MARGIN)

    for params, x, grad_out in _sample(rng, draw, reject):
        out, cache = fedalc.model.forward_batch(params, x)
        grads = fedalc.model.backward_batch(params, x, cache, grad_out)
        dense = grads.dense(params.dims.features)
        for name in fedalc.model.PARAM_NAMES:

            def f(tensor, name=name):
                p = params.copy()
                setattr(p, name, tensor)
                return float(np.sum(grad_out * fedalc.model.forward_batch(
                    p, x)[0]))

            _compare(f"backward/{name}", dense[name],
                     fedalc.numeric.finite_diff_grad(f, getattr(params, name)),
                     summary, failures)


def check_gradients(seed: int = 0) -> Summary:
    """
    analytic gradients of every loss, regularizer and of the model against
    central finite differences

    :raises: VerificationError listing every mismatch
    """
    rng = np.random.default_rng(seed)
    hp = HyperParams(alpha=0.7, beta=1.3)
    summary = {}  # type: Summary
    failures = []  # type: List[str]
    _check_positive_loss(rng, hp, summary, failures)
    _check_contrastive_loss(rng, hp, summary, failures)
    _check_regularizers(rng, hp, summary, failures)
    _check_backward(rng, summary, failures)
    if failures:
        raise VerificationError('\n'.join(failures))
    return summary


def brute_sigma(label_sets: Sequence[Sequence[int]], C: int) -> np.ndarray:
    """double loop over instances and ordered label pairs"""
    counts = np.zeros((C, C))
    for positives in label_sets:
        for u in range(C):
            for v in range(C):
                if u != v and u in positives and v not in positives:
                    counts[u, v] += 1
    return counts / len(label_sets)


def check_sigma(seed: int = 0) -> Summary:
    """
    compute_sigma against brute_sigma (exact), plus the regularizer
    identities: uniform sigma reproduces the spreadout regularizer, k = C - 1
    reproduces the full forms and normalized rows sum to one
    """
    rng = np.random.default_rng(seed)
    summary = {}  # type: Summary
    failures = []  # type: List[str]

    def record(name: str, error: float, tolerance: float):
        count, worst = summary.get(name, (0, 0.0))
        summary[name] = (count + 1, max(worst, error))
        if error > tolerance:
            failures.append(f"{name}: error {error:.3g} > {tolerance}")

    for _ in range(RANDOM_SAMPLES):
        C = int(rng.integers(2, 9))
        table = _random_table(rng, int(rng.integers(1, 31)), C)
        sigma = fedalc.labelsets.compute_sigma(table)
        record('compute_sigma', float(np.max(np.abs(
            sigma.dense() - brute_sigma(table.label_sets(), C)))), 0.0)

        W = _unit_rows(rng, C, int(rng.integers(2, 9)))
        uniform = np.ones((C, C))
        np.fill_diagonal(uniform, 0.0)
        uniform = SigmaWeights(C=C, weights=uniform)
        record('uniform_sigma', abs(
            fedalc.losses.correlation_reg(W, uniform).value
            - fedalc.losses.spreadout_reg(W).value), EXACT_TOLERANCE)
        if C > 2:
            k = C - 1
            record('spreadout_reg_topk/full', abs(
                fedalc.losses.spreadout_reg_topk(W, k).value
                + float(np.sum(_off_diagonal(1.0 - W @ W.T) ** 2))),
                EXACT_TOLERANCE)
            record('correlation_reg_topk/full', abs(
                fedalc.losses.correlation_reg_topk(W, sigma, k).value
                - fedalc.losses.correlation_reg(W, sigma).value),
                EXACT_TOLERANCE)
        gamma = fedalc.losses.normalize_weights(sigma).dense()
        sums = gamma.sum(axis=1)[sigma.dense().sum(axis=1) > 0]
        if len(sums):
            record('normalize_weights', float(np.max(np.abs(sums - 1.0))),
                   1e-9)
    if failures:
        raise VerificationError('\n'.join(failures))
    return summary


def brute_precision_at_k(scores: np.ndarray,
                         truths: Sequence[Sequence[int]],
                         k: int,) -> float:
    total = 0.0
    for row, truth in zip(scores, truths):
        ranked = sorted(range(len(row)), key=lambda u: (-row[u], u))
        total += sum(1 for u in ranked[:k] if u in truth) / k
    return total / len(truths)


def brute_average_precision(scores: np.ndarray,
                            truths: Sequence[Sequence[int]],) -> float:
    """macro over classes, instances ranked by score, ties to lower index"""
    n, C = scores.shape
    aps = []
    for u in range(C):
        positives = [i for i in range(n) if u in truths[i]]
        if not positives:
            continue
        ranked = sorted(range(n), key=lambda i: (-scores[i, u], i))
        hits = 0
        precision_sum = 0.0
        for rank, i in enumerate(ranked, start=1):
            if u in truths[i]:
                hits += 1
                precision_sum += hits / rank
        aps.append(precision_sum / len(positives))
    return sum(aps) / len(aps)


def check_metrics(seed: int = 0) -> Summary:
    """precision_at_k and mean_average_precision against brute force loops"""
    rng = np.random.default_rng(seed)
    summary = {}  # type: Summary
    failures = []  # type: List[str]
    for _ in range(RANDOM_SAMPLES):
        n, C = int(rng.integers(1, 20)), int(rng.integers(2, 12))
        # coarse scores so ties actually occur
        scores = np.round(rng.standard_normal((n, C)), 1)
        truths = [tuple(sorted(int(u) for u in rng.choice(
            C, size=int(rng.integers(1, C + 1)), replace=False)))
            for _ in range(n)]
        batch = fedalc.metrics.PredictionBatch(scores=scores, truths=truths)
        checks = {
            f"precision_at_k/{k}": (
                fedalc.metrics.precision_at_k(batch, k),
                brute_precision_at_k(scores, truths, k))
            for k in range(1, min(C, 5) + 1)}
        checks['mean_average_precision'] = (
            fedalc.metrics.mean_average_precision(batch),
            brute_average_precision(scores, truths))
        for name, (fast, slow) in checks.items():
            error = abs(fast - slow)
            count, worst = summary.get(name, (0, 0.0))
            summary[name] = (count + 1, max(worst, error))
            if error > EXACT_TOLERANCE:
                failures.append(f"{name}: {fast!r} != {slow!r}")
    if failures:
        raise VerificationError('\n'.join(failures))
    return summary


def fixture_dataset(seed: int = 0) -> MultiLabelDataset:
    """the synthetic fixture the acceptance runs train on"""
    return fedalc.data.synth_multilabel(
        seed=seed,
        C=fedalc.settings.SYNTH_LABELS,
        F=fedalc.settings.SYNTH_FEATURES,
        N=fedalc.settings.SYNTH_INSTANCES,
        avg_labels=fedalc.settings.SYNTH_AVG_LABELS,
        cluster_count=fedalc.settings.SYNTH_CLUSTERS,)


def fixture_config(algorithm: str,
                   seed: int = 0,
                   rounds: int = FIXTURE_ROUNDS,
                   workers: int = None,) -> TrainConfig:
    """
    The acceptance configuration of |algorithm|. The server step is
    COLLAPSE_SERVER_LR times the lambda in FIXTURE_LAMBDA.
    """
    return TrainConfig(
        algorithm=algorithm, rounds=rounds, seed=seed, workers=workers,
        server_lr=COLLAPSE_SERVER_LR,
        hp=HyperParams(
            lam=FIXTURE_LAMBDA.get(algorithm, fedalc.settings.LAMBDA),
            k_mine=FIXTURE_K),)


def check_collapse(seed: int = 0,
                   rounds: int = FIXTURE_ROUNDS,
                   workers: int = None,) -> Summary:
    """
    fedavg with client trained class embeddings collapses (gauge below 20%
    of its initial value) while fedalc keeps it above 50%
    """
    ds = fixture_dataset(seed)
    dims = fedalc.model.ModelDims(features=ds.F, **FIXTURE_DIMS)
    initial = fedalc.federation.collapse_gauge(
        fedalc.model.init_class_embeddings(seed + 1, ds.C, dims.out))
    summary = {}  # type: Summary
    ratios = {}
    for algorithm in ('fedavg', 'fedalc'):
        cfg = fixture_config(algorithm, seed, rounds, workers)
        result = fedalc.federation.run_experiment(ds, cfg, dims=dims)
        ratios[algorithm] = result.history[-1].collapse_gauge / initial
        summary[f"collapse/{algorithm}"] = (rounds, ratios[algorithm])
        logger.info(
            f"{algorithm}: collapse gauge at {100 * ratios[algorithm]:.1f}% "
            f"of its initial value")
    failures = []
    if not ratios['fedavg'] < COLLAPSED_RATIO:
        failures.append(
            f"fedavg gauge ratio {ratios['fedavg']:.3f} is not below "
            f"{COLLAPSED_RATIO}")
    if not ratios['fedalc'] > SPREAD_RATIO:
        failures.append(
            f"fedalc gauge ratio {ratios['fedalc']:.3f} is not above "
            f"{SPREAD_RATIO}")
    if failures:
        raise VerificationError('\n'.join(failures))
    return summary


def method_ordering(seeds: Sequence[int] = ORDERING_SEEDS,
                    rounds: int = FIXTURE_ROUNDS,
                    out_dir: Optional[str] = None,
                    workers: int = None,) -> Dict[str, float]:
    """
    Trains every algorithm in ORDERING_ALGORITHMS once per seed on the
    fixture, holding out ORDERING_TEST_FRACTION of it as a test set.

    :param out_dir: if given, every run's history is written there as
        <algorithm>-<seed>.csv
    :returns: the median test P@1 of every algorithm
    """
    if not seeds:
        raise ValueError("need at least one seed")
    if out_dir is not None:
        fedalc.utils.ensure_out_dir(out_dir)
    scores = {
        a: [] for a in ORDERING_ALGORITHMS}  # type: Dict[str, List[float]]
    for seed in seeds:
        train, test = fedalc.data.split(
            fixture_dataset(seed), ORDERING_TEST_FRACTION, seed)
        dims = fedalc.model.ModelDims(features=train.F, **FIXTURE_DIMS)
        for algorithm in ORDERING_ALGORITHMS:
            cfg = fixture_config(algorithm, seed, rounds, workers)
            result = fedalc.federation.run_experiment(
                train, cfg, test=test, dims=dims)
            scores[algorithm].append(result.test_metrics['p_at_1'])
            logger.info(
                f"{algorithm} seed {seed}: test P@1 "
                f"{result.test_metrics['p_at_1']:.4f}")
            if out_dir is not None:
                fedalc.federation.write_history_csv(
                    os.path.join(out_dir, f"{algorithm}-{seed}.csv"),
                    result.history)
    return {a: float(np.median(s)) for a, s in scores.items()}


def check_ordering(seed: int = 0,
                   rounds: int = FIXTURE_ROUNDS,
                   workers: int = None,) -> Summary:
    """
    median test P@1 over ORDERING_SEEDS consecutive seeds starting at |seed|
    satisfies fedalc >= fedaws >= fedavg, with fedalc at least ORDERING_GAP
    above fedavg
    """
    seeds = range(seed, seed + len(ORDERING_SEEDS))
    medians = method_ordering(seeds, rounds, workers=workers)
    summary = {f"ordering/{a}": (len(seeds), p) for a, p in medians.items()}
    failures = []
    if not medians['fedalc'] >= medians['fedaws'] >= medians['fedavg']:
        failures.append(
            "median test P@1 is not ordered fedalc >= fedaws >= fedavg: " +
            ', '.join(f"{a} {p:.4f}" for a, p in medians.items()))
    gap = medians['fedalc'] - medians['fedavg']
    if not gap >= ORDERING_GAP:
        failures.append(
            f"fedalc leads fedavg by {gap:.4f}, less than {ORDERING_GAP}")
    if failures:
        raise VerificationError('\n'.join(failures))
    return summary


SUITES = {
    'gradients': check_gradients,
    'sigma': check_sigma,
    'metrics': check_metrics,
    'collapse': check_collapse,
}


def cmd_verify(suite: str, seed: int = 0) -> Summary:
    """
    runs a verification suite, logging one line per check

    :raises: VerificationError on failure, ValueError on an unknown suite
    """
    if suite not in SUITES:
        raise ValueError(
            f"unknown suite {suite!r}, valid suites: "
            f"{', '.join(fedalc.err.VALID_SUITES)}")
    logger.info(f"Running the {suite} suite")
    summary = SUITES[suite](seed)
    for name, (count, worst) in sorted(summary.items()):
        logger.info(f"{name}: {count} checks, worst error {worst:.3g}")
    logger.info(f"{suite}: passed")
    return summary


def add_verify_args(ap):
    ap.add_argument(
        '--suite', help="the suite to run", required=True,
        choices=fedalc.err.VALID_SUITES)
    ap.add_argument('--seed', help="random seed", type=int, default=0)


def main(**kwargs) -> int:
    """:returns: a process exit code, non-zero if the suite failed"""
    try:
        cmd_verify(**kwargs)
    except VerificationError as err:
        logger.error(f"verification failed:\n{err}")
        return 1
    return 0


def cli_main():
    import argparse

    ap = argparse.ArgumentParser(
        description="checks the implementation against brute-force oracles",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    add_verify_args(ap)

    # add --log-file and --verbose
    sys.exit(main(**fedalc.cli.cli_common(ap)))


if __name__ == '__main__':
    cli_main()
