#!/usr/bin/env python3
"""
Learning to Rank - Linear Fusion of Ranking Features
====================================================

Linear models trained listwise by Coordinate Ascent (maximising training MAP)
or pairwise by a linear RankSVM, evaluated with k-fold cross-validation over a
shared, seeded query partition.

Features are z-score normalised per query (per feature column) before training
and reranking when ``normalize: zscore`` is configured.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from core.errors import ConfigurationError, MalformedInputError, TrainingError
from core.utils import parallel_map, write_text_atomic
from retrieval.evalkit import Qrels, RunResult
from retrieval.textrank import FeatureVector


logger = logging.getLogger(__name__)

NORMALIZERS = ('zscore', 'none')


@dataclass
class LinearModel:
    feature_names: List[str]
    weights: List[float]
    normalize: str = 'zscore'
    trainer: str = ''

    def __post_init__(self):
        self.weights = [float(w) for w in self.weights]
        if len(self.weights) != len(self.feature_names):
            raise ConfigurationError(f"model has {len(self.weights)} weights for "
                                     f"{len(self.feature_names)} features")
        if not all(math.isfinite(w) for w in self.weights):
            raise TrainingError("model weights must be finite")
        if self.normalize not in NORMALIZERS:
            raise ConfigurationError(f"unknown normalisation {self.normalize!r}")

    def save(self, path: Path, config_hash: str = None) -> Path:
        payload = {
            'config_hash': config_hash,
            'trainer': self.trainer,
            'normalize': self.normalize,
            'features': [{'name': n, 'weight': w} for n, w in zip(self.feature_names, self.weights)],
        }
        return write_text_atomic(path, yaml.safe_dump(payload, sort_keys=False))

    @classmethod
    def load(cls, path: Path) -> 'LinearModel':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                payload = yaml.safe_load(f)
            features = payload['features']
            return cls(feature_names=[str(item['name']) for item in features],
                       weights=[float(item['weight']) for item in features],
                       normalize=payload.get('normalize', 'zscore'),
                       trainer=payload.get('trainer', ''))
        except (yaml.YAMLError, KeyError, TypeError) as e:
            raise MalformedInputError(f"bad model file: {e}", path=path) from e


def score_rows(model: LinearModel, rows: Sequence[FeatureVector]) -> np.ndarray:
    """Scores for one query's rows, normalised over those rows as in training"""
    for row in rows:
        if len(row.values) != len(model.weights):
            raise ConfigurationError(f"feature vector has {len(row.values)} values, "
                                     f"model expects {len(model.weights)}")
    matrix = np.array([r.values for r in rows], dtype=np.float64).reshape(len(rows), len(model.weights))
    if model.normalize == 'zscore':
        matrix = zscore(matrix)
    return matrix @ np.array(model.weights)


def score(model: LinearModel, fv: FeatureVector,
          query_rows: Optional[Sequence[FeatureVector]] = None) -> float:
    """
    Model score of one feature vector

    A z-score model normalises ``fv`` against the candidate rows of its query, so
    ``query_rows`` is required for it; the result equals the score ``rerank`` gives.
    """
    if model.normalize == 'none':
        return float(score_rows(model, [fv])[0])
    if query_rows is None:
        raise ConfigurationError("a z-score model needs the query's rows to score a vector")
    rows = [r for r in query_rows if r.entity_id != fv.entity_id] + [fv]
    return float(score_rows(model, rows)[-1])


@dataclass
class FoldPlan:
    k: int
    assignment: Dict[str, int]

    def __post_init__(self):
        sizes = [len(self.test_queries(i)) for i in range(self.k)]
        if max(sizes) - min(sizes) > 1:
            raise ConfigurationError(f"unbalanced folds {sizes}")

    def test_queries(self, fold: int) -> List[str]:
        return sorted(q for q, f in self.assignment.items() if f == fold)

    def train_queries(self, fold: int) -> List[str]:
        return sorted(q for q, f in self.assignment.items() if f != fold)

    def to_dict(self) -> Dict:
        return {'k': self.k, 'folds': {i: self.test_queries(i) for i in range(self.k)}}

    @classmethod
    def from_dict(cls, payload: Dict) -> 'FoldPlan':
        try:
            k = int(payload['k'])
            assignment = {str(q): int(fold) for fold, queries in payload['folds'].items() for q in queries}
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigurationError(f"bad fold plan: {e}") from e
        return cls(k=k, assignment=assignment)

    def save(self, path: Path, config_hash: str = None) -> Path:
        payload = {'config_hash': config_hash, **self.to_dict()}
        return write_text_atomic(path, yaml.safe_dump(payload, sort_keys=False))

    @classmethod
    def load(cls, path: Path) -> 'FoldPlan':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return cls.from_dict(yaml.safe_load(f) or {})
        except yaml.YAMLError as e:
            raise MalformedInputError(f"bad fold plan: {e}", path=path) from e


def make_folds(query_ids: Sequence[str], k: int = 5, seed: int = 42) -> FoldPlan:
    """Sorted ids, seeded shuffle, then round-robin"""
    if k < 2:
        raise ConfigurationError(f"cross-validation needs k >= 2, got {k}")
    ordered = sorted(set(query_ids))
    if len(ordered) < k:
        raise ConfigurationError(f"{len(ordered)} queries cannot fill {k} folds")
    permutation = np.random.default_rng(seed).permutation(len(ordered))
    assignment = {ordered[int(j)]: i % k for i, j in enumerate(permutation)}
    return FoldPlan(k=k, assignment=assignment)


# -- per-query blocks -------------------------------------------------------

def zscore(matrix: np.ndarray) -> np.ndarray:
    """Column-wise z-scores; constant columns become 0"""
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (matrix - mean) / safe, 0.0)


@dataclass
class _QueryBlock:
    qid: str
    entities: List[str]
    features: np.ndarray
    labels: np.ndarray
    total_relevant: int
    tie_rank: np.ndarray = field(init=False)

    def __post_init__(self):
        # entities arrive sorted, so position is the tie-break rank
        self.tie_rank = np.arange(len(self.entities))


def _group_rows(rows: Sequence[FeatureVector]) -> Dict[str, List[FeatureVector]]:
    grouped: Dict[str, List[FeatureVector]] = {}
    for row in rows:
        grouped.setdefault(row.query_id, []).append(row)
    return grouped


def _blocks(rows: Sequence[FeatureVector], qrels: Qrels, normalize: str) -> List[_QueryBlock]:
    blocks = []
    for qid, group in sorted(_group_rows(rows).items()):
        group = sorted(group, key=lambda r: r.entity_id)
        matrix = np.array([r.values for r in group], dtype=np.float64)
        if normalize == 'zscore':
            matrix = zscore(matrix)
        judged = qrels.get(qid, {})
        labels = np.array([judged.get(r.entity_id, 0) for r in group], dtype=np.int64)
        total = sum(1 for grade in judged.values() if grade > 0)
        blocks.append(_QueryBlock(qid, [r.entity_id for r in group], matrix, labels, total))
    return blocks


def _block_ap(block: _QueryBlock, weights: np.ndarray, cutoff: int) -> float:
    if block.total_relevant == 0:
        return 0.0
    scores = block.features @ weights
    order = np.lexsort((block.tie_rank, -scores))[:cutoff]
    hits = block.labels[order] > 0
    precisions = np.cumsum(hits) / np.arange(1, len(order) + 1)
    return float(precisions[hits].sum() / block.total_relevant)


def training_map(blocks: Sequence[_QueryBlock], weights: np.ndarray, cutoff: int = 100) -> float:
    if not blocks:
        return 0.0
    return float(np.mean([_block_ap(b, weights, cutoff) for b in blocks]))


# -- Coordinate Ascent ------------------------------------------------------

@dataclass
class CoordinateAscentConfig:
    restarts: int = 5
    max_passes: int = 25
    tolerance: float = 1e-4
    seed: int = 42
    normalize: str = 'zscore'
    cutoff: int = 100
    multiplicative: Tuple[float, ...] = (0.5, 1.5)
    additive: Tuple[float, ...] = (0.01, 0.1, 1.0)

    def __post_init__(self):
        if self.restarts < 1 or self.max_passes < 0 or self.tolerance < 0:
            raise ConfigurationError("coordinate ascent needs restarts >= 1, max_passes >= 0, tolerance >= 0")
        if self.normalize not in NORMALIZERS:
            raise ConfigurationError(f"unknown normalisation {self.normalize!r}")


def _l1(weights: np.ndarray) -> Optional[np.ndarray]:
    total = np.abs(weights).sum()
    if total == 0:
        return None
    return weights / total


def _probes(value: float, config: CoordinateAscentConfig) -> List[float]:
    probes = [value * factor for factor in config.multiplicative]
    for step in config.additive:
        probes += [value + step, value - step]
    return probes


def _degenerate(blocks: Sequence[_QueryBlock]) -> bool:
    labels = np.concatenate([b.labels for b in blocks]) if blocks else np.array([])
    return labels.size == 0 or np.all(labels == labels[0])


def coordinate_ascent_train(rows: Sequence[FeatureVector], qrels: Qrels, feature_names: Sequence[str],
                            config: Optional[CoordinateAscentConfig] = None,
                            trace: Optional[List[List[float]]] = None) -> LinearModel:
    """
    Cyclic single-coordinate line search maximising training MAP

    Only strict improvements are accepted; weights are L1-normalised (sign kept)
    after each accepted move. Restart 0 starts uniform, the others at random
    weights; the best restart wins. ``trace`` receives one MAP list per restart.
    """
    config = config or CoordinateAscentConfig()
    names = list(feature_names)
    m = len(names)
    uniform = np.full(m, 1.0 / m)
    blocks = _blocks(rows, qrels, config.normalize)

    if _degenerate(blocks):
        logger.warning("All training labels are equal; returning uniform weights")
        return LinearModel(names, uniform.tolist(), config.normalize, 'coordinate_ascent')
    if config.max_passes == 0:
        return LinearModel(names, uniform.tolist(), config.normalize, 'coordinate_ascent')

    rng = np.random.default_rng(config.seed)
    best_weights, best_map = uniform, -1.0
    for restart in range(config.restarts):
        if restart == 0:
            weights = uniform.copy()
        else:
            weights = _l1(rng.uniform(-1.0, 1.0, m))
            if weights is None:
                weights = uniform.copy()
        current = training_map(blocks, weights, config.cutoff)
        history = [current]

        for _ in range(config.max_passes):
            pass_start = current
            for j in range(m):
                chosen = None
                for value in _probes(weights[j], config):
                    candidate = weights.copy()
                    candidate[j] = value
                    candidate = _l1(candidate)
                    if candidate is None:
                        continue
                    measured = training_map(blocks, candidate, config.cutoff)
                    if measured > current:
                        current, chosen = measured, candidate
                if chosen is not None:
                    weights = chosen
                    history.append(current)
            if current - pass_start < config.tolerance:
                break

        logger.debug(f"restart {restart}: training MAP {current:.4f}")
        if trace is not None:
            trace.append(history)
        if current > best_map:
            best_weights, best_map = weights, current

    logger.info(f"Coordinate ascent: best training MAP {best_map:.4f}")
    return LinearModel(names, best_weights.tolist(), config.normalize, 'coordinate_ascent')


# -- RankSVM ----------------------------------------------------------------

@dataclass
class RankSvmConfig:
    C: float = 1.0
    epochs: int = 100
    learning_rate: float = 0.01
    seed: int = 42
    normalize: str = 'zscore'

    def __post_init__(self):
        if self.C < 0 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigurationError("RankSVM needs C >= 0, epochs >= 0, learning_rate > 0")
        if self.normalize not in NORMALIZERS:
            raise ConfigurationError(f"unknown normalisation {self.normalize!r}")


def pair_differences(blocks: Sequence[_QueryBlock]) -> np.ndarray:
    """x_i - x_j for every within-query pair with label_i > label_j"""
    differences = []
    for block in blocks:
        for i in range(len(block.labels)):
            for j in range(len(block.labels)):
                if block.labels[i] > block.labels[j]:
                    differences.append(block.features[i] - block.features[j])
    if not differences:
        return np.zeros((0, blocks[0].features.shape[1] if blocks else 0))
    return np.array(differences)


def pair_violations(model: LinearModel, rows: Sequence[FeatureVector], qrels: Qrels) -> int:
    """Discordant pairs the model does not rank strictly correctly"""
    differences = pair_differences(_blocks(rows, qrels, model.normalize))
    if not len(differences):
        return 0
    return int(np.count_nonzero(differences @ np.array(model.weights) <= 0))


def ranksvm_train(rows: Sequence[FeatureVector], qrels: Qrels, feature_names: Sequence[str],
                  config: Optional[RankSvmConfig] = None) -> LinearModel:
    """Stochastic subgradient descent on (1/2)||w||^2 + C * sum hinge(1 - w.(x_i - x_j))"""
    config = config or RankSvmConfig()
    names = list(feature_names)
    differences = pair_differences(_blocks(rows, qrels, config.normalize))
    if not len(differences):
        raise TrainingError("RankSVM needs at least one label-discordant pair within a query")

    n_pairs = len(differences)
    weights = np.zeros(len(names))
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        step = config.learning_rate / math.sqrt(1.0 + epoch)
        for idx in rng.permutation(n_pairs):
            d = differences[idx]
            gradient = weights / n_pairs
            if float(weights @ d) < 1.0:
                gradient = gradient - config.C * d
            weights -= step * gradient

    logger.info(f"RankSVM: {n_pairs} pairs, {config.epochs} epochs")
    return LinearModel(names, weights.tolist(), config.normalize, 'ranksvm')


# -- reranking and cross-validation ------------------------------------------

Trainer = Callable[[Sequence[FeatureVector], Qrels], LinearModel]


def make_trainer(name: str, feature_names: Sequence[str], params: Optional[Dict] = None,
                 seed: int = 42) -> Trainer:
    params = dict(params or {})
    params['seed'] = seed
    builders = {
        'coordinate_ascent': (CoordinateAscentConfig, _train_ca),
        'ranksvm': (RankSvmConfig, _train_svm),
    }
    if name not in builders:
        raise ConfigurationError(f"unknown trainer {name!r}")
    config_cls, train_fn = builders[name]
    try:
        config = config_cls(**params)
    except TypeError as e:
        raise ConfigurationError(f"bad {name} settings: {e}") from e
    return partial(train_fn, feature_names=list(feature_names), config=config)


def _train_ca(rows, qrels, feature_names, config):
    return coordinate_ascent_train(rows, qrels, feature_names, config)


def _train_svm(rows, qrels, feature_names, config):
    return ranksvm_train(rows, qrels, feature_names, config)


def rerank(model: LinearModel, rows: Sequence[FeatureVector]) -> RunResult:
    """Score rows per query; descending score, ties by ascending entity id"""
    rankings = {}
    for qid, group in sorted(_group_rows(rows).items()):
        group = sorted(group, key=lambda r: r.entity_id)
        scores = score_rows(model, group)
        ranked = sorted(zip((r.entity_id for r in group), scores.tolist()),
                        key=lambda item: (-item[1], item[0]))
        rankings[qid] = ranked
    return RunResult(rankings)


@dataclass
class CrossValidationResult:
    plan: FoldPlan
    models: List[LinearModel]
    run: RunResult
    train_queries: Dict[int, List[str]]
    test_queries: Dict[int, List[str]]


def _check_coverage(rows: Sequence[FeatureVector], plan: FoldPlan):
    uncovered = sorted({r.query_id for r in rows} - set(plan.assignment))
    if uncovered:
        raise ConfigurationError(f"fold plan does not cover queries {uncovered[:5]}")


def train_folds(rows: Sequence[FeatureVector], qrels: Qrels, plan: FoldPlan, trainer: Trainer,
                workers: int = 1) -> List[LinearModel]:
    """One model per fold, each trained on the other k-1 folds only"""
    _check_coverage(rows, plan)

    def run_fold(fold: int) -> LinearModel:
        test = set(plan.test_queries(fold))
        train_rows = [r for r in rows if r.query_id not in test]
        if not train_rows:
            raise TrainingError(f"fold {fold} has no training rows")
        logger.info(f"Fold {fold}: training on {len(train_rows)} rows")
        return trainer(train_rows, qrels)

    return parallel_map(run_fold, range(plan.k), workers)


def rerank_folds(models: Sequence[LinearModel], rows: Sequence[FeatureVector], plan: FoldPlan) -> RunResult:
    """Score each fold's held-out queries with that fold's model and merge"""
    _check_coverage(rows, plan)
    if len(models) != plan.k:
        raise ConfigurationError(f"{len(models)} models for {plan.k} folds")
    merged: Dict[str, List[Tuple[str, float]]] = {}
    for fold, model in enumerate(models):
        test = set(plan.test_queries(fold))
        fold_run = rerank(model, [r for r in rows if r.query_id in test])
        for qid, ranking in fold_run.rankings.items():
            if qid in merged:
                raise TrainingError(f"query {qid} scored by two folds")
            merged[qid] = ranking
    return RunResult(merged)


def cross_validate(rows: Sequence[FeatureVector], qrels: Qrels, plan: FoldPlan, trainer: Trainer,
                   workers: int = 1) -> CrossValidationResult:
    """Train on k-1 folds, rerank the held-out fold, merge the held-out runs"""
    models = train_folds(rows, qrels, plan, trainer, workers)
    return CrossValidationResult(
        plan=plan,
        models=models,
        run=rerank_folds(models, rows, plan),
        train_queries={i: plan.train_queries(i) for i in range(plan.k)},
        test_queries={i: plan.test_queries(i) for i in range(plan.k)},
    )
