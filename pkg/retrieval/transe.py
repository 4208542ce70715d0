#!/usr/bin/env python3
"""
TransE - Translation-Based Knowledge Graph Embeddings
======================================================

Learns entity and relation vectors so that head + relation ~ tail for the
entity-tailed triples of the knowledge graph.

Training recipe:
- Uniform initialisation in [-6/sqrt(dim), 6/sqrt(dim)], entity vectors then
  projected to unit L2 norm; relation vectors stay as initialised
- Each epoch shuffles the positives; every positive draws ``negatives``
  corruptions (head or tail replaced with probability 0.5)
- One SGD step per (positive, negative) pair on [margin + d(pos) - d(neg)]_+
- Touched entity vectors are re-projected to unit norm after every step

Single-worker training is bit-for-bit reproducible for a given seed. With
``workers > 1`` threads update the shared tables without locks (Hogwild) and
determinism is not promised.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigurationError, TrainingError, UnknownEntityError
from retrieval.corpus import Triple
from retrieval.entmatch import EmbeddingStore


logger = logging.getLogger(__name__)

NORMS = ('L1', 'L2')

EpochCallback = Callable[[int, float], None]


@dataclass
class TransEConfig:
    dim: int = 100
    margin: float = 1.0
    learning_rate: float = 0.001
    epochs: int = 1000
    negatives: int = 1
    norm: str = 'L2'
    seed: int = 42
    workers: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"TransE dim must be >= 1, got {self.dim}")
        if self.margin <= 0:
            raise ConfigurationError(f"TransE margin must be positive, got {self.margin}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"TransE learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 0 or self.negatives < 1 or self.workers < 1:
            raise ConfigurationError("TransE epochs must be >= 0, negatives and workers >= 1")
        if self.norm not in NORMS:
            raise ConfigurationError(f"TransE norm must be one of {NORMS}, got {self.norm!r}")


@dataclass
class TripleSet:
    """Positive (h, r, t) triples with their entity and relation vocabularies"""

    triples: List[Tuple[str, str, str]]
    entities: List[str] = field(default_factory=list)
    relations: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.entities:
            self.entities = sorted({e for h, _, t in self.triples for e in (h, t)})
        if not self.relations:
            self.relations = sorted({r for _, r, _ in self.triples})
        self.entity_index: Dict[str, int] = {e: i for i, e in enumerate(self.entities)}
        self.relation_index: Dict[str, int] = {r: i for i, r in enumerate(self.relations)}
        for h, r, t in self.triples:
            if h not in self.entity_index or t not in self.entity_index:
                raise UnknownEntityError(h if h not in self.entity_index else t, where='triple vocabulary')
            if r not in self.relation_index:
                raise UnknownEntityError(r, where='relation vocabulary')

    def __len__(self) -> int:
        return len(self.triples)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> 'TripleSet':
        """Entity-tailed triples only; literal tails are not graph edges"""
        kept = [(t.head, t.relation, t.tail) for t in triples if t.tail_is_entity]
        return cls(kept)

    def as_array(self) -> np.ndarray:
        return np.array([(self.entity_index[h], self.relation_index[r], self.entity_index[t])
                         for h, r, t in self.triples], dtype=np.int64).reshape(-1, 3)


def _distance(diff: np.ndarray, norm: str) -> float:
    if norm == 'L1':
        return float(np.abs(diff).sum())
    return float(np.sqrt(np.dot(diff, diff)))


def _gradient(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == 'L1':
        return np.sign(diff)
    length = np.sqrt(np.dot(diff, diff))
    if length == 0.0:
        return np.zeros_like(diff)
    return diff / length


def energy(store: EmbeddingStore, head: str, relation: str, tail: str, norm: str = 'L2') -> float:
    """||v_h + v_r - v_t|| under the given norm"""
    vectors = []
    for name, vector in ((head, store.entity_vector(head)), (relation, store.relation_vector(relation)),
                         (tail, store.entity_vector(tail))):
        if vector is None:
            raise UnknownEntityError(name, where='embedding store')
        vectors.append(vector)
    h, r, t = vectors
    return _distance(h + r - t, norm)


def hinge_loss(d_pos: float, d_neg: float, margin: float) -> float:
    return max(0.0, margin + d_pos - d_neg)


def _replacement(original: int, n_entities: int, rng: np.random.Generator) -> int:
    """Uniform entity index different from ``original``"""
    pick = int(rng.integers(n_entities - 1))
    return pick if pick < original else pick + 1


def _corrupt_indices(h: int, t: int, n_entities: int, rng: np.random.Generator) -> Tuple[int, int]:
    if rng.random() < 0.5:
        return _replacement(h, n_entities, rng), t
    return h, _replacement(t, n_entities, rng)


def corrupt(triple: Tuple[str, str, str], entities: Sequence[str],
            rng: np.random.Generator) -> Tuple[str, str, str]:
    """Replace head or tail (p = 0.5 each) with a different uniformly drawn entity"""
    if len(entities) < 2:
        raise TrainingError("corruption needs at least two entities")
    h, r, t = triple
    position = {e: i for i, e in enumerate(entities)}
    new_h, new_t = _corrupt_indices(position[h], position[t], len(entities), rng)
    return entities[new_h], r, entities[new_t]


def _project(entities: np.ndarray, rows: Iterable[int]):
    for row in set(rows):
        length = np.linalg.norm(entities[row])
        if length > 0:
            entities[row] /= length


def sgd_step(entities: np.ndarray, relations: np.ndarray, positive: Tuple[int, int, int],
             negative: Tuple[int, int, int], margin: float, learning_rate: float,
             norm: str = 'L2') -> float:
    """One hinge-loss step on a (positive, negative) pair; returns the pair loss"""
    h, r, t = positive
    nh, _, nt = negative
    diff_pos = entities[h] + relations[r] - entities[t]
    diff_neg = entities[nh] + relations[r] - entities[nt]
    loss = hinge_loss(_distance(diff_pos, norm), _distance(diff_neg, norm), margin)
    if loss <= 0.0:
        return 0.0

    grad_pos = learning_rate * _gradient(diff_pos, norm)
    grad_neg = learning_rate * _gradient(diff_neg, norm)
    entities[h] -= grad_pos
    entities[t] += grad_pos
    entities[nh] += grad_neg
    entities[nt] -= grad_neg
    relations[r] -= grad_pos - grad_neg
    _project(entities, (h, t, nh, nt))
    return loss


def _initialise(n_entities: int, n_relations: int, dim: int,
                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    bound = 6.0 / np.sqrt(dim)
    entities = rng.uniform(-bound, bound, size=(n_entities, dim))
    relations = rng.uniform(-bound, bound, size=(n_relations, dim))
    norms = np.linalg.norm(entities, axis=1, keepdims=True)
    entities /= np.where(norms > 0, norms, 1.0)
    return entities, relations


def _run_shard(entities: np.ndarray, relations: np.ndarray, positives: np.ndarray,
               rows: np.ndarray, config: TransEConfig, rng: np.random.Generator) -> float:
    n_entities = entities.shape[0]
    total = 0.0
    for row in rows:
        h, r, t = (int(v) for v in positives[row])
        for _ in range(config.negatives):
            nh, nt = _corrupt_indices(h, t, n_entities, rng)
            total += sgd_step(entities, relations, (h, r, t), (nh, r, nt),
                              config.margin, config.learning_rate, config.norm)
    return total


def train(triples: TripleSet, config: Optional[TransEConfig] = None,
          on_epoch: Optional[EpochCallback] = None) -> EmbeddingStore:
    """Train embeddings; ``on_epoch(epoch, mean_loss)`` is called after every epoch"""
    config = config or TransEConfig()
    if not len(triples):
        raise TrainingError("TransE needs a non-empty triple set")
    if config.epochs > 0 and len(triples.entities) < 2:
        raise TrainingError("TransE needs at least two entities to sample corruptions")

    rng = np.random.default_rng(config.seed)
    entities, relations = _initialise(len(triples.entities), len(triples.relations), config.dim, rng)
    positives = triples.as_array()
    pairs = len(positives) * config.negatives

    worker_rngs = [np.random.default_rng(s)
                   for s in np.random.SeedSequence(config.seed).spawn(config.workers)]
    logger.info(f"Training TransE on {len(positives)} triples, {len(triples.entities)} entities, "
                f"{len(triples.relations)} relations (dim={config.dim}, epochs={config.epochs}, "
                f"workers={config.workers})")

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(positives))
        if config.workers == 1:
            total = _run_shard(entities, relations, positives, order, config, rng)
        else:
            shards = np.array_split(order, config.workers)
            losses = [0.0] * config.workers

            def work(k: int):
                losses[k] = _run_shard(entities, relations, positives, shards[k], config, worker_rngs[k])

            threads = [threading.Thread(target=work, args=(k,)) for k in range(config.workers)]
            for thread in threads:
                thread.start()
            for thread in threads:
                thread.join()
            total = sum(losses)

        mean_loss = total / pairs
        logger.debug(f"epoch {epoch} mean_loss {mean_loss:.6f}")
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)

    return EmbeddingStore(config.dim, triples.entities, entities, triples.relations, relations)
