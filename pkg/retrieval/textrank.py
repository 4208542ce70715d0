#!/usr/bin/env python3
"""
Text Ranking - Fielded Text-Match Features and Candidate Generation
===================================================================

Dirichlet-smoothed language models (unigram, SDM, FSDM), BM25, coordinate match
and tf-idf cosine over the five entity fields, assembled into the fixed 26-column
feature layout (plus optional ELR / TransE columns).

Feature layout:
    fsdm, sdm_<field> x5, bm25_<field> x5, lm_<field> x5, coord_<field> x5,
    cos_<field> x5, [elr], [transe]

Fields are always in the order names, attributes, categories, SimEn, RelEn.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import (ConfigurationError, FieldEmptyError, MalformedInputError,
                         ScoreUndefinedError, UnknownEntityError)
from core.utils import write_text_atomic
from retrieval.corpus import FIELDS, EntityDoc
from retrieval.entmatch import (DEFAULT_MU_E, EPSILON_FLOOR, EmbeddingStore, QueryRecord, cosine,
                                elr_feature, transe_feature)
from retrieval.evalkit import RunResult, read_run, write_run
from retrieval.index import DEFAULT_WINDOW, FieldedIndex


logger = logging.getLogger(__name__)

DEFAULT_MU = 2500.0
DEFAULT_LAMBDAS = (0.8, 0.1, 0.1)
CLIQUES = ('T', 'O', 'U')

BASELINE_FEATURES: Tuple[str, ...] = (
    ('fsdm',)
    + tuple(f'sdm_{f}' for f in FIELDS)
    + tuple(f'bm25_{f}' for f in FIELDS)
    + tuple(f'lm_{f}' for f in FIELDS)
    + tuple(f'coord_{f}' for f in FIELDS)
    + tuple(f'cos_{f}' for f in FIELDS)
)
FEATURE_NAMES = BASELINE_FEATURES
ENTITY_FEATURES = ('elr', 'transe')


def _check_lambdas(lambda_t: float, lambda_o: float, lambda_u: float):
    if min(lambda_t, lambda_o, lambda_u) < 0:
        raise ConfigurationError("SDM lambdas must be non-negative")
    if abs(lambda_t + lambda_o + lambda_u - 1.0) > 1e-9:
        raise ConfigurationError(
            f"SDM lambdas must sum to 1, got {lambda_t + lambda_o + lambda_u!r}")


@dataclass
class SdmParams:
    lambda_t: float = 0.8
    lambda_o: float = 0.1
    lambda_u: float = 0.1
    mu: float = DEFAULT_MU
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        _check_lambdas(self.lambda_t, self.lambda_o, self.lambda_u)
        if self.mu <= 0:
            raise ConfigurationError(f"Dirichlet prior mu must be positive, got {self.mu}")
        if self.window < 2:
            raise ConfigurationError(f"window size N must be >= 2, got {self.window}")


def _uniform_weights() -> Dict[str, float]:
    return {f: 1.0 / len(FIELDS) for f in FIELDS}


@dataclass
class FsdmParams:
    """Per-clique field weights w_f^X and per-field priors mu_f"""

    weights: Dict[str, Dict[str, float]] = field(
        default_factory=lambda: {x: _uniform_weights() for x in CLIQUES})
    mu: Dict[str, float] = field(default_factory=lambda: {f: DEFAULT_MU for f in FIELDS})
    lambda_t: float = 0.8
    lambda_o: float = 0.1
    lambda_u: float = 0.1

    def __post_init__(self):
        _check_lambdas(self.lambda_t, self.lambda_o, self.lambda_u)
        for clique in CLIQUES:
            weights = self.weights.get(clique)
            if weights is None or set(weights) != set(FIELDS):
                raise ConfigurationError(f"FSDM weights for {clique} must cover all five fields")
            if min(weights.values()) < 0:
                raise ConfigurationError(f"FSDM weights for {clique} must be non-negative")
            if abs(sum(weights.values()) - 1.0) > 1e-9:
                raise ConfigurationError(f"FSDM weights for {clique} must sum to 1")
        for name in FIELDS:
            if self.mu.get(name, 0) <= 0:
                raise ConfigurationError(f"Dirichlet prior for field {name} must be positive")

    @classmethod
    def one_hot(cls, target: str, mu: float = DEFAULT_MU, lambdas=DEFAULT_LAMBDAS) -> 'FsdmParams':
        """All clique weight on one field"""
        weights = {f: (1.0 if f == target else 0.0) for f in FIELDS}
        return cls(weights={x: dict(weights) for x in CLIQUES},
                   mu={f: mu for f in FIELDS},
                   lambda_t=lambdas[0], lambda_o=lambdas[1], lambda_u=lambdas[2])


@dataclass
class FeatureConfig:
    sdm: SdmParams = field(default_factory=SdmParams)
    fsdm: FsdmParams = field(default_factory=FsdmParams)
    k1: float = 1.2
    b: float = 0.75
    include_elr: bool = False
    include_transe: bool = False
    mu_e: float = DEFAULT_MU_E

    def __post_init__(self):
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise ConfigurationError(f"BM25 requires k1 >= 0 and 0 <= b <= 1 (k1={self.k1}, b={self.b})")

    @property
    def feature_names(self) -> Tuple[str, ...]:
        names = BASELINE_FEATURES
        if self.include_elr:
            names += ('elr',)
        if self.include_transe:
            names += ('transe',)
        return names


@dataclass
class FeatureVector:
    query_id: str
    entity_id: str
    values: List[float]
    label: int = 0


def feature_groups(names: Sequence[str]) -> Dict[str, str]:
    """Feature name -> FSDM / ENT / Others"""
    groups = {}
    for name in names:
        if name == 'fsdm':
            groups[name] = 'FSDM'
        elif name in ENTITY_FEATURES:
            groups[name] = 'ENT'
        else:
            groups[name] = 'Others'
    return groups


# -- smoothed probabilities -------------------------------------------------

def _smoothed(tf: int, cf: int, length: int, coll_length: int, mu: float) -> float:
    if cf == 0 or coll_length == 0:
        return EPSILON_FLOOR / (length + mu)
    return (tf + mu * cf / coll_length) / (length + mu)


def _p_unigram(index: FieldedIndex, entity_id: str, field_name: str, term: str, mu: float) -> float:
    tf, cf, length, coll_length = index.unigram_stats(entity_id, field_name, term)
    return _smoothed(tf, cf, length, coll_length, mu)


def _p_ordered(index: FieldedIndex, entity_id: str, field_name: str, t1: str, t2: str, mu: float) -> float:
    tf, cf = index.ordered_bigram_stats(entity_id, field_name, t1, t2)
    return _smoothed(tf, cf, index.field_length(entity_id, field_name),
                     index.collection_length(field_name), mu)


def _p_window(index: FieldedIndex, entity_id: str, field_name: str, t1: str, t2: str, mu: float) -> float:
    tf, cf = index.unordered_window_stats(entity_id, field_name, t1, t2)
    return _smoothed(tf, cf, index.field_length(entity_id, field_name),
                     index.collection_length(field_name), mu)


def _require_field(index: FieldedIndex, field_name: str):
    if index.collection_length(field_name) == 0:
        raise FieldEmptyError(field_name)


def _require_query(tokens: Sequence[str]):
    if not tokens:
        raise ScoreUndefinedError()


def lm_unigram(index: FieldedIndex, entity_id: str, field_name: str, term: str,
               mu: float = DEFAULT_MU) -> float:
    """log[(tf + mu*cf/|C_f|) / (|E_f| + mu)], floored at cf = 0"""
    if mu <= 0:
        raise ConfigurationError(f"Dirichlet prior mu must be positive, got {mu}")
    _require_field(index, field_name)
    return math.log(_p_unigram(index, entity_id, field_name, term, mu))


def _sdm(index: FieldedIndex, tokens: Sequence[str], entity_id: str, field_name: str,
         lambdas: Tuple[float, float, float], mu: float) -> float:
    f_t = 0.0
    for term in tokens:
        f_t += math.log(_p_unigram(index, entity_id, field_name, term, mu))
    f_o = 0.0
    f_u = 0.0
    for t1, t2 in zip(tokens, tokens[1:]):
        f_o += math.log(_p_ordered(index, entity_id, field_name, t1, t2, mu))
        f_u += math.log(_p_window(index, entity_id, field_name, t1, t2, mu))
    return lambdas[0] * f_t + lambdas[1] * f_o + lambdas[2] * f_u


def _check_window(index: FieldedIndex, window: int):
    if index.window != window:
        raise ConfigurationError(f"SDM window N={window} does not match index window N={index.window}")


def sdm_score(index: FieldedIndex, tokens: Sequence[str], entity_id: str, field_name: str,
              params: Optional[SdmParams] = None) -> float:
    """Sequential dependence score of one field"""
    params = params or SdmParams(window=index.window)
    _require_query(tokens)
    _require_field(index, field_name)
    _check_window(index, params.window)
    return _sdm(index, tokens, entity_id, field_name,
                (params.lambda_t, params.lambda_o, params.lambda_u), params.mu)


def _fsdm(index: FieldedIndex, tokens: Sequence[str], entity_id: str, params: FsdmParams) -> float:
    w_t, w_o, w_u = (params.weights[x] for x in CLIQUES)

    f_t = 0.0
    for term in tokens:
        mix = 0.0
        for name in FIELDS:
            mix += w_t[name] * _p_unigram(index, entity_id, name, term, params.mu[name])
        f_t += math.log(mix)

    f_o = 0.0
    f_u = 0.0
    for t1, t2 in zip(tokens, tokens[1:]):
        mix_o = 0.0
        mix_u = 0.0
        for name in FIELDS:
            mix_o += w_o[name] * _p_ordered(index, entity_id, name, t1, t2, params.mu[name])
            mix_u += w_u[name] * _p_window(index, entity_id, name, t1, t2, params.mu[name])
        f_o += math.log(mix_o)
        f_u += math.log(mix_u)

    return params.lambda_t * f_t + params.lambda_o * f_o + params.lambda_u * f_u


def fsdm_score(index: FieldedIndex, tokens: Sequence[str], entity_id: str,
               params: Optional[FsdmParams] = None) -> float:
    """Fielded SDM: each clique probability is a field-weighted mixture, logged once"""
    params = params or FsdmParams()
    _require_query(tokens)
    if index.stats.total_length == 0:
        raise FieldEmptyError('all fields')
    return _fsdm(index, tokens, entity_id, params)


def _idf(index: FieldedIndex, field_name: str, term: str) -> float:
    total = len(index)
    df = index.document_frequency(field_name, term)
    return math.log((total - df + 0.5) / (df + 0.5) + 1.0)


def bm25(index: FieldedIndex, tokens: Sequence[str], entity_id: str, field_name: str,
         k1: float = 1.2, b: float = 0.75) -> float:
    if k1 < 0 or not 0.0 <= b <= 1.0:
        raise ConfigurationError(f"BM25 requires k1 >= 0 and 0 <= b <= 1 (k1={k1}, b={b})")
    avg_length = index.avg_field_length(field_name)
    if avg_length == 0:
        return 0.0
    length = index.field_length(entity_id, field_name)
    norm = k1 * (1.0 - b + b * length / avg_length)
    score = 0.0
    for term in tokens:
        tf = len(index.positions(entity_id, field_name, term))
        if tf == 0:
            continue
        score += _idf(index, field_name, term) * (tf * (k1 + 1.0)) / (tf + norm)
    return score


def coordinate_match(index: FieldedIndex, tokens: Sequence[str], entity_id: str, field_name: str) -> float:
    """Distinct query terms present in the field"""
    return float(sum(1 for term in set(tokens) if index.positions(entity_id, field_name, term)))


def cosine_sim(index: FieldedIndex, tokens: Sequence[str], entity_id: str, field_name: str) -> float:
    """Cosine between tf-idf vectors of query and field"""
    query_tf = Counter(tokens)
    field_tf = index.term_frequencies(entity_id, field_name)
    if not query_tf or not field_tf:
        return 0.0

    vocabulary = sorted(set(query_tf) | set(field_tf))
    idf = np.array([_idf(index, field_name, t) for t in vocabulary])
    query_vector = np.array([query_tf.get(t, 0) for t in vocabulary], dtype=np.float64) * idf
    field_vector = np.array([field_tf.get(t, 0) for t in vocabulary], dtype=np.float64) * idf
    return cosine(query_vector, field_vector)


# -- candidates and features ------------------------------------------------

def generate_candidates(index: FieldedIndex, tokens: Sequence[str],
                        params: Optional[FsdmParams] = None, k: int = 100) -> List[Tuple[str, float]]:
    """Top-k (entity, FSDM score) among entities matching any query term"""
    _require_query(tokens)
    if k < 1:
        raise ConfigurationError(f"candidate depth k must be >= 1, got {k}")
    params = params or FsdmParams()
    scored = [(entity_id, _fsdm(index, tokens, entity_id, params))
              for entity_id in index.matching_entities(tokens)]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def extract_features(index: FieldedIndex, query: QueryRecord, entity_id: str,
                     config: Optional[FeatureConfig] = None, entity: Optional[EntityDoc] = None,
                     store: Optional[EmbeddingStore] = None, label: int = 0) -> FeatureVector:
    """One feature row for (query, entity) in the fixed layout"""
    config = config or FeatureConfig()
    tokens = query.tokens
    _require_query(tokens)
    _check_window(index, config.sdm.window)
    if entity_id not in index:
        raise UnknownEntityError(entity_id)

    sdm = config.sdm
    lambdas = (sdm.lambda_t, sdm.lambda_o, sdm.lambda_u)
    values = [_fsdm(index, tokens, entity_id, config.fsdm)]
    values += [_sdm(index, tokens, entity_id, name, lambdas, sdm.mu) for name in FIELDS]
    values += [bm25(index, tokens, entity_id, name, config.k1, config.b) for name in FIELDS]
    values += [sum(math.log(_p_unigram(index, entity_id, name, t, sdm.mu)) for t in tokens)
               for name in FIELDS]
    values += [coordinate_match(index, tokens, entity_id, name) for name in FIELDS]
    values += [cosine_sim(index, tokens, entity_id, name) for name in FIELDS]

    if config.include_elr:
        if entity is None:
            entity = EntityDoc(id=entity_id, entity_links={'RelEn': index.entity_links(entity_id)})
        values.append(elr_feature(query, entity, index, config.mu_e))
    if config.include_transe:
        if store is None:
            raise ConfigurationError("TransE feature requested without an embedding store")
        values.append(transe_feature(query, store, entity_id))

    return FeatureVector(query_id=query.id, entity_id=entity_id, values=values, label=label)


# -- file formats -----------------------------------------------------------

def write_feature_file(rows: Sequence[FeatureVector], names: Sequence[str], path: Path,
                       config_hash: str = None) -> Path:
    """``label qid:<id> 1:<v> ... #<entity>``; rows sorted by (qid, entity)"""
    lines = []
    if config_hash:
        lines.append(f"# erank config={config_hash}")
    lines.append("# features: " + ' '.join(names))
    for row in sorted(rows, key=lambda r: (r.query_id, r.entity_id)):
        if len(row.values) != len(names):
            raise ConfigurationError(f"row ({row.query_id}, {row.entity_id}) has {len(row.values)} "
                                     f"values for {len(names)} features")
        values = ' '.join(f"{i}:{float(v)!r}" for i, v in enumerate(row.values, start=1))
        lines.append(f"{row.label} qid:{row.query_id} {values} #{row.entity_id}")
    return write_text_atomic(path, '\n'.join(lines) + '\n')


def read_feature_file(path: Path) -> Tuple[List[str], List[FeatureVector]]:
    names: List[str] = []
    rows: List[FeatureVector] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if not line.strip():
                continue
            if line.startswith('#'):
                if line.startswith('# features:'):
                    names = line[len('# features:'):].split()
                continue
            body, _, entity_id = line.partition('#')
            parts = body.split()
            try:
                label = int(parts[0])
                if not parts[1].startswith('qid:'):
                    raise ValueError("second column must be qid:<id>")
                query_id = parts[1][4:]
                values = []
                for position, item in enumerate(parts[2:], start=1):
                    index, _, value = item.partition(':')
                    if int(index) != position:
                        raise ValueError(f"feature index {index} out of order")
                    values.append(float(value))
            except (IndexError, ValueError) as e:
                raise MalformedInputError(f"bad feature row: {e}", path=path, line_no=line_no) from e
            if names and len(values) != len(names):
                raise MalformedInputError(f"expected {len(names)} features, got {len(values)}",
                                          path=path, line_no=line_no)
            rows.append(FeatureVector(query_id, entity_id.strip(), values, label))
    return names, rows


def write_candidates(candidates: Dict[str, List[Tuple[str, float]]], path: Path,
                     tag: str = 'fsdm') -> Path:
    return write_run(RunResult(candidates), path, tag=tag)


def read_candidates(path: Path) -> Dict[str, List[Tuple[str, float]]]:
    return read_run(path).rankings
