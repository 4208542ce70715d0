#!/usr/bin/env python3
"""
Fielded Positional Index
========================

Immutable inverted index over the five entity fields. Answers unigram,
ordered-bigram (#1) and unordered-window (#uwN) statistics for a single entity
field together with their collection analogues.

Features:
- Per-field postings term -> entity -> sorted positions
- Per-field entity lengths, document frequencies and average lengths
- Lazily cached, lock-guarded windowed collection frequencies
- Entity-link statistics for the entity-mention match feature
- Versioned gzip JSON persistence (lossless round trip)
"""

import bisect
import gzip
import json
import logging
import threading
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

from core.errors import ConfigurationError, MalformedInputError, UnknownEntityError
from core.utils import ensure_directory
from retrieval.corpus import (FIELDS, CollectionStats, Corpus, EntityDoc, collection_stats,
                              window_key)


logger = logging.getLogger(__name__)

INDEX_FORMAT = 'erank-index'
INDEX_VERSION = 1
DEFAULT_WINDOW = 8


def count_ordered(pos1: List[int], pos2: List[int]) -> int:
    """Positions p with t1 at p and t2 at p + 1"""
    if not pos1 or not pos2:
        return 0
    following = set(pos2)
    return sum(1 for p in pos1 if p + 1 in following)


def count_window(pos1: List[int], pos2: List[int], window: int, same_term: bool) -> int:
    """Pairs (p1, p2), p1 != p2, with |p1 - p2| < window"""
    if not pos1 or not pos2:
        return 0
    total = 0
    for p in pos1:
        lo = bisect.bisect_left(pos2, p - window + 1)
        hi = bisect.bisect_right(pos2, p + window - 1)
        total += hi - lo
    if same_term:
        total -= len(pos1)
    return total


class FieldedIndex:
    """Positional inverted index; read-only after construction"""

    def __init__(self, forward: Dict[str, Dict[str, List[str]]], window: int = DEFAULT_WINDOW,
                 links: Optional[Dict[str, List[str]]] = None):
        if window < 2:
            raise ConfigurationError(f"window size N must be >= 2, got {window}")
        self.window = window
        self._entities: List[str] = sorted(forward)
        self._entity_set: Set[str] = set(self._entities)
        self._forward = forward

        self._postings: Dict[str, Dict[str, Dict[str, List[int]]]] = {f: {} for f in FIELDS}
        self._lengths: Dict[str, Dict[str, int]] = {f: {} for f in FIELDS}
        for entity_id in self._entities:
            for name in FIELDS:
                tokens = forward[entity_id].get(name, [])
                self._lengths[name][entity_id] = len(tokens)
                postings = self._postings[name]
                for position, token in enumerate(tokens):
                    postings.setdefault(token, {}).setdefault(entity_id, []).append(position)

        corpus_view = Corpus(EntityDoc(id=e, fields={f: forward[e].get(f, []) for f in FIELDS})
                             for e in self._entities)
        self.stats: CollectionStats = collection_stats(corpus_view, window, include_windowed=False)

        self._links: Dict[str, List[str]] = {e: list((links or {}).get(e, [])) for e in self._entities}
        self._link_cf: Counter = Counter()
        for entity_id in self._entities:
            self._link_cf[entity_id] += 1      # self occurrence
            self._link_cf.update(self._links[entity_id])
        self._link_total = sum(len(v) + 1 for v in self._links.values())

        self._window_cache: Dict[Tuple[str, str, str], int] = {}
        self._cache_lock = threading.Lock()

    # -- lookups -----------------------------------------------------------

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entity_set

    def __len__(self) -> int:
        return len(self._entities)

    def entities(self) -> List[str]:
        return list(self._entities)

    def _check(self, entity_id: str, field_name: str):
        if entity_id not in self._entity_set:
            raise UnknownEntityError(entity_id)
        if field_name not in self._postings:
            raise ConfigurationError(f"unknown field {field_name!r}")

    def positions(self, entity_id: str, field_name: str, term: str) -> List[int]:
        self._check(entity_id, field_name)
        return self._postings[field_name].get(term, {}).get(entity_id, [])

    def tokens(self, entity_id: str, field_name: str) -> List[str]:
        self._check(entity_id, field_name)
        return list(self._forward[entity_id].get(field_name, []))

    def term_frequencies(self, entity_id: str, field_name: str) -> Counter:
        return Counter(self.tokens(entity_id, field_name))

    def field_length(self, entity_id: str, field_name: str) -> int:
        self._check(entity_id, field_name)
        return self._lengths[field_name][entity_id]

    def collection_length(self, field_name: str) -> int:
        return self.stats.field_lengths[field_name]

    def document_frequency(self, field_name: str, term: str) -> int:
        return len(self._postings[field_name].get(term, ()))

    def avg_field_length(self, field_name: str) -> float:
        if not self._entities:
            return 0.0
        return self.stats.field_lengths[field_name] / len(self._entities)

    def matching_entities(self, terms: Iterable[str]) -> List[str]:
        """Entities containing any of ``terms`` in any field"""
        found: Set[str] = set()
        for term in set(terms):
            for name in FIELDS:
                found.update(self._postings[name].get(term, ()))
        return sorted(found)

    # -- statistics --------------------------------------------------------

    def unigram_stats(self, entity_id: str, field_name: str, term: str) -> Tuple[int, int, int, int]:
        """(tf, cf, |E_f|, |C_f|)"""
        tf = len(self.positions(entity_id, field_name, term))
        return (tf, self.stats.unigram_cf[field_name][term],
                self._lengths[field_name][entity_id], self.stats.field_lengths[field_name])

    def ordered_bigram_stats(self, entity_id: str, field_name: str, t1: str, t2: str) -> Tuple[int, int]:
        """(tf_#1, cf_#1) for t1 immediately followed by t2"""
        tf = count_ordered(self.positions(entity_id, field_name, t1),
                           self.positions(entity_id, field_name, t2))
        return tf, self.stats.ordered_cf[field_name][(t1, t2)]

    def unordered_window_stats(self, entity_id: str, field_name: str, t1: str, t2: str) -> Tuple[int, int]:
        """(tf_#uwN, cf_#uwN) with the index window N"""
        tf = count_window(self.positions(entity_id, field_name, t1),
                          self.positions(entity_id, field_name, t2),
                          self.window, t1 == t2)
        return tf, self._window_cf(field_name, t1, t2)

    def _window_cf(self, field_name: str, t1: str, t2: str) -> int:
        a, b = window_key(t1, t2)
        key = (field_name, a, b)
        with self._cache_lock:
            cached = self._window_cache.get(key)
        if cached is not None:
            return cached

        postings = self._postings[field_name]
        with_a = postings.get(a, {})
        with_b = postings.get(b, {})
        total = 0
        for entity_id in with_a.keys() & with_b.keys():
            total += count_window(with_a[entity_id], with_b[entity_id], self.window, a == b)

        with self._cache_lock:
            self._window_cache.setdefault(key, total)
        return total

    # -- entity links ------------------------------------------------------

    def entity_links(self, entity_id: str) -> List[str]:
        if entity_id not in self._entity_set:
            raise UnknownEntityError(entity_id)
        return list(self._links[entity_id])

    def link_collection_stats(self, linked_id: str) -> Tuple[int, int]:
        """(cf_e, |C_e|); every indexed entity counts once as its own link"""
        return self._link_cf[linked_id], self._link_total

    # -- persistence -------------------------------------------------------

    def save(self, path: Path, config_hash: str = None) -> Path:
        path = Path(path)
        ensure_directory(path.parent)
        payload = {
            'format': INDEX_FORMAT,
            'version': INDEX_VERSION,
            'config_hash': config_hash,
            'window': self.window,
            'entities': {
                e: {
                    'fields': {f: self._forward[e].get(f, []) for f in FIELDS},
                    'links': self._links[e],
                }
                for e in self._entities
            },
        }
        data = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(',', ':'))
        # mtime=0 keeps the file bytes reproducible
        with open(path, 'wb') as raw:
            with gzip.GzipFile(fileobj=raw, mode='wb', mtime=0) as f:
                f.write(data.encode('utf-8'))
        logger.info(f"Index saved to {path} ({len(self._entities)} entities)")
        return path

    @classmethod
    def load(cls, path: Path) -> 'FieldedIndex':
        try:
            with gzip.open(path, 'rt', encoding='utf-8') as f:
                payload = json.load(f)
        except (OSError, ValueError) as e:
            raise MalformedInputError(f"cannot read index: {e}", path=path) from e
        if payload.get('format') != INDEX_FORMAT:
            raise MalformedInputError("not an erank index file", path=path)
        if payload.get('version') != INDEX_VERSION:
            raise MalformedInputError(f"unsupported index version {payload.get('version')}", path=path)
        entities = payload['entities']
        forward = {e: {f: list(rec['fields'].get(f, [])) for f in FIELDS} for e, rec in entities.items()}
        links = {e: list(rec.get('links', [])) for e, rec in entities.items()}
        return cls(forward, window=payload['window'], links=links)


def build_index(corpus: Corpus, window: int = DEFAULT_WINDOW) -> FieldedIndex:
    """Build the fielded index from a corpus; ``window`` is the #uwN size"""
    if window < 2:
        raise ConfigurationError(f"window size N must be >= 2, got {window}")
    forward = {doc.id: {f: list(doc.fields[f]) for f in FIELDS} for doc in corpus}
    links = {doc.id: doc.linked_entities() for doc in corpus}
    index = FieldedIndex(forward, window=window, links=links)
    logger.info(f"Indexed {len(index)} entities (window N={window})")
    return index
