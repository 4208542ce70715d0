#!/usr/bin/env python3
"""
Entity Match Features
=====================

Entity-based query features computed from the query's annotated entities:

- ELR: Dirichlet-smoothed exact match of annotated entity ids against the
  candidate's entity links (plus a self-match), weighted by linker confidence
- TransE: confidence-weighted cosine between annotated-entity embeddings and the
  candidate embedding

Also owns the query file and embedding file formats.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigurationError, MalformedInputError, StoreCorruptError
from core.utils import ensure_directory
from retrieval.corpus import EntityDoc, tokenize
from retrieval.index import FieldedIndex


logger = logging.getLogger(__name__)

EPSILON_FLOOR = 1e-9
DEFAULT_MU_E = 100.0


@dataclass
class QueryRecord:
    """Query text, its tokens and the linker's (entity, confidence) annotations"""

    id: str
    text: str = ''
    tokens: List[str] = field(default_factory=list)
    annotations: List[Tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.tokens and self.text:
            self.tokens = tokenize(self.text)
        seen = set()
        for entity_id, score in self.annotations:
            if not 0.0 <= score <= 1.0:
                raise MalformedInputError(f"query {self.id}: confidence {score} outside [0, 1]")
            if entity_id in seen:
                raise MalformedInputError(f"query {self.id}: duplicate annotation {entity_id}")
            seen.add(entity_id)

    @classmethod
    def from_record(cls, record: Dict) -> 'QueryRecord':
        annotations = [(str(a['entity']), float(a['score'])) for a in record.get('annotations', [])]
        return cls(id=str(record['id']), text=record.get('text', ''), annotations=annotations)

    def to_record(self) -> Dict:
        return {
            'id': self.id,
            'text': self.text,
            'annotations': [{'entity': e, 'score': s} for e, s in self.annotations],
        }


def _read_json_lines(path: Path) -> Iterable[Tuple[int, Dict]]:
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedInputError(f"invalid JSON: {e}", path=path, line_no=line_no) from e


def load_queries(path: Path, annotations_path: Optional[Path] = None) -> List[QueryRecord]:
    """Load query records; a separate annotations file overrides inline annotations"""
    queries: Dict[str, QueryRecord] = {}
    for line_no, record in _read_json_lines(path):
        try:
            query = QueryRecord.from_record(record)
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedInputError(f"bad query record: {e}", path=path, line_no=line_no) from e
        if query.id in queries:
            raise MalformedInputError(f"duplicate query id {query.id}", path=path, line_no=line_no)
        queries[query.id] = query

    if annotations_path is not None:
        for line_no, record in _read_json_lines(annotations_path):
            qid = str(record.get('id'))
            if qid not in queries:
                logger.warning(f"{annotations_path}:{line_no}: annotations for unknown query {qid}")
                continue
            merged = dict(queries[qid].to_record(), annotations=record.get('annotations', []))
            queries[qid] = QueryRecord.from_record(merged)

    logger.info(f"Loaded {len(queries)} queries from {path}")
    return list(queries.values())


def save_queries(queries: Sequence[QueryRecord], path: Path) -> Path:
    ensure_directory(Path(path).parent)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for query in queries:
            f.write(json.dumps(query.to_record(), ensure_ascii=False) + '\n')
    return Path(path)


class EmbeddingStore:
    """Entity and relation vector tables of one fixed dimension"""

    def __init__(self, dim: int, entity_ids: Sequence[str], entity_vectors: np.ndarray,
                 relation_ids: Sequence[str] = (), relation_vectors: Optional[np.ndarray] = None):
        if dim < 1:
            raise StoreCorruptError(f"dimension must be positive, got {dim}")
        self.dim = dim
        self.entity_ids = list(entity_ids)
        self.relation_ids = list(relation_ids)
        self.entity_vectors = np.asarray(entity_vectors, dtype=np.float64).reshape(len(self.entity_ids), -1) \
            if len(self.entity_ids) else np.zeros((0, dim))
        if relation_vectors is None or not len(self.relation_ids):
            self.relation_vectors = np.zeros((0, dim))
        else:
            self.relation_vectors = np.asarray(relation_vectors, dtype=np.float64).reshape(len(self.relation_ids), -1)

        for name, table in (('entity', self.entity_vectors), ('relation', self.relation_vectors)):
            if table.shape[0] and table.shape[1] != dim:
                raise StoreCorruptError(f"{name} vectors have length {table.shape[1]}, expected {dim}")
            if not np.all(np.isfinite(table)):
                raise StoreCorruptError(f"{name} table contains non-finite components")

        self._entity_row = {e: i for i, e in enumerate(self.entity_ids)}
        self._relation_row = {r: i for i, r in enumerate(self.relation_ids)}
        if len(self._entity_row) != len(self.entity_ids):
            raise StoreCorruptError("duplicate entity ids in embedding table")

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entity_row

    def entity_vector(self, entity_id: str) -> Optional[np.ndarray]:
        row = self._entity_row.get(entity_id)
        return None if row is None else self.entity_vectors[row]

    def relation_vector(self, relation_id: str) -> Optional[np.ndarray]:
        row = self._relation_row.get(relation_id)
        return None if row is None else self.relation_vectors[row]

    def nearest(self, entity_id: str, k: int = 10) -> List[Tuple[str, float]]:
        """Cosine nearest neighbours of an entity (itself excluded)"""
        vector = self.entity_vector(entity_id)
        if vector is None:
            return []
        sims = [(other, cosine(vector, self.entity_vectors[row]))
                for other, row in self._entity_row.items() if other != entity_id]
        sims.sort(key=lambda item: (-item[1], item[0]))
        return sims[:k]

    @staticmethod
    def _write_table(path: Path, ids: Sequence[str], table: np.ndarray, dim: int):
        ensure_directory(Path(path).parent)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(f"{len(ids)} {dim}\n")
            for name, row in zip(ids, table):
                f.write(name + ' ' + ' '.join(repr(float(v)) for v in row) + '\n')

    @staticmethod
    def _read_table(path: Path) -> Tuple[int, List[str], np.ndarray]:
        with open(path, 'r', encoding='utf-8') as f:
            header = f.readline().split()
            if len(header) != 2:
                raise StoreCorruptError(f"{path}: header must be '<count> <dim>'")
            try:
                count, dim = int(header[0]), int(header[1])
            except ValueError as e:
                raise StoreCorruptError(f"{path}: bad header {header}") from e
            ids: List[str] = []
            rows: List[List[float]] = []
            for line_no, line in enumerate(f, start=2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise StoreCorruptError(f"{path}:{line_no}: expected {dim} components, "
                                            f"got {len(parts) - 1}")
                ids.append(parts[0])
                rows.append([float(v) for v in parts[1:]])
        if len(ids) != count:
            raise StoreCorruptError(f"{path}: header announces {count} vectors, found {len(ids)}")
        table = np.array(rows, dtype=np.float64).reshape(len(ids), dim)
        return dim, ids, table

    def save(self, entity_path: Path, relation_path: Optional[Path] = None):
        self._write_table(entity_path, self.entity_ids, self.entity_vectors, self.dim)
        if relation_path is not None:
            self._write_table(relation_path, self.relation_ids, self.relation_vectors, self.dim)
        logger.info(f"Saved {len(self.entity_ids)} entity vectors to {entity_path}")

    @classmethod
    def load(cls, entity_path: Path, relation_path: Optional[Path] = None) -> 'EmbeddingStore':
        dim, entity_ids, entity_table = cls._read_table(entity_path)
        relation_ids: List[str] = []
        relation_table = None
        if relation_path is not None and Path(relation_path).exists():
            rel_dim, relation_ids, relation_table = cls._read_table(relation_path)
            if rel_dim != dim:
                raise StoreCorruptError(f"relation dimension {rel_dim} != entity dimension {dim}")
        return cls(dim, entity_ids, entity_table, relation_ids, relation_table)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors give 0"""
    norm = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(a, b)) / norm))


def elr_feature(query: QueryRecord, entity: EntityDoc, index: FieldedIndex,
                mu_e: float = DEFAULT_MU_E) -> float:
    """Sum over annotations of s(e) * log P(e | candidate entity links)"""
    if mu_e <= 0:
        raise ConfigurationError(f"mu_e must be positive, got {mu_e}")
    if not query.annotations:
        return 0.0

    links = entity.linked_entities()
    own_length = len(links) + 1
    score = 0.0
    for linked_id, confidence in query.annotations:
        tf = links.count(linked_id) + (1 if linked_id == entity.id else 0)
        cf, coll_length = index.link_collection_stats(linked_id)
        if cf == 0 or coll_length == 0:
            prob = EPSILON_FLOOR / (own_length + mu_e)
        else:
            prob = (tf + mu_e * cf / coll_length) / (own_length + mu_e)
        score += confidence * math.log(prob)
    return score


def transe_feature(query: QueryRecord, store: EmbeddingStore, entity_id: str) -> float:
    """Sum over annotations of s(e) * cos(v_e, v_E); missing embeddings contribute 0"""
    candidate = store.entity_vector(entity_id)
    if candidate is None:
        return 0.0
    if candidate.shape[0] != store.dim:
        raise StoreCorruptError(f"vector of {entity_id} has length {candidate.shape[0]}, "
                                f"expected {store.dim}")

    score = 0.0
    for linked_id, confidence in query.annotations:
        vector = store.entity_vector(linked_id)
        if vector is None:
            continue
        if vector.shape[0] != store.dim:
            raise StoreCorruptError(f"vector of {linked_id} has length {vector.shape[0]}")
        score += confidence * cosine(vector, candidate)
    return score
