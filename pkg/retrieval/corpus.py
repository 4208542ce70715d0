#!/usr/bin/env python3
"""
Corpus - Triple Ingestion into Fielded Entity Documents
========================================================

Turns knowledge-graph triples into entity documents over the five-field schema
(names, attributes, categories, SimEn, RelEn) and computes collection statistics.

Features:
- Tokenizer (lowercase alphanumeric runs, no stemming, no stopwords)
- Ordered relation-pattern -> field mapping with defaults
- Triple file reader that reports malformed lines with line numbers
- Deterministic corpus serialization (JSON lines)
- Unigram, ordered-bigram and windowed-bigram collection statistics
"""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from core.errors import ConfigurationError, MalformedInputError
from core.utils import write_text_atomic


logger = logging.getLogger(__name__)

FIELDS = ('names', 'attributes', 'categories', 'SimEn', 'RelEn')
ENTITY_FIELDS = ('SimEn', 'RelEn')

_TOKEN_RE = re.compile(r'[a-z0-9]+')
_SAMENESS_HINTS = ('sameas', 'redirect', 'disambiguat')


def tokenize(text: str) -> List[str]:
    """Lowercased alphanumeric tokens; everything else separates"""
    if not text:
        return []
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Triple:
    """One knowledge-graph edge; ``tail_is_entity`` tags the tail kind"""

    head: str
    relation: str
    tail: str
    tail_is_entity: bool

    def __post_init__(self):
        if not self.head or not self.relation:
            raise MalformedInputError("triple head and relation must be non-empty")

    @classmethod
    def parse(cls, line: str, line_no: int = None, path=None) -> 'Triple':
        """Parse ``head<TAB>relation<TAB>tail``; a double-quoted tail is a literal"""
        parts = line.rstrip('\r\n').split('\t')
        if len(parts) != 3:
            raise MalformedInputError(f"expected 3 tab-separated columns, got {len(parts)}",
                                      path=path, line_no=line_no)
        head, relation, tail = (part.strip() for part in parts)
        if not head or not relation:
            raise MalformedInputError("empty head or relation", path=path, line_no=line_no)
        if tail.startswith('"'):
            if len(tail) < 2 or not tail.endswith('"'):
                raise MalformedInputError("unterminated literal", path=path, line_no=line_no)
            return cls(head, relation, tail[1:-1], tail_is_entity=False)
        if not tail:
            raise MalformedInputError("empty tail", path=path, line_no=line_no)
        return cls(head, relation, tail, tail_is_entity=True)

    def to_line(self) -> str:
        tail = self.tail if self.tail_is_entity else f'"{self.tail}"'
        return f"{self.head}\t{self.relation}\t{tail}"


@dataclass
class FieldMapping:
    """Ordered relation-pattern rules; first matching rule wins"""

    rules: List[Tuple[str, str]] = field(default_factory=list)
    default_field: str = 'attributes'
    sameness_field: str = 'SimEn'
    entity_field: str = 'RelEn'

    def __post_init__(self):
        for pattern, target in self.rules:
            if target not in FIELDS:
                raise ConfigurationError(f"mapping rule {pattern!r} targets unknown field {target!r}")
            if '*' in pattern[:-1]:
                raise ConfigurationError(f"mapping rule {pattern!r}: '*' is only allowed as suffix")
        for target in (self.default_field, self.sameness_field, self.entity_field):
            if target not in FIELDS:
                raise ConfigurationError(f"unknown field {target!r} in mapping defaults")

    @staticmethod
    def _matches(pattern: str, relation: str) -> bool:
        if pattern.endswith('*'):
            return relation.startswith(pattern[:-1])
        return relation == pattern

    def field_for(self, relation: str, tail_is_entity: bool) -> str:
        for pattern, target in self.rules:
            if self._matches(pattern, relation):
                return target
        if not tail_is_entity:
            return self.default_field
        lowered = relation.lower()
        if any(hint in lowered for hint in _SAMENESS_HINTS):
            return self.sameness_field
        return self.entity_field

    @classmethod
    def load(cls, path: Path) -> 'FieldMapping':
        """Parse ``relation-pattern<TAB>field`` lines; ``#default<TAB>field`` sets the default"""
        rules: List[Tuple[str, str]] = []
        default_field = 'attributes'
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, raw in enumerate(f, start=1):
                line = raw.rstrip('\r\n')
                if not line.strip():
                    continue
                if line.startswith('#default'):
                    parts = line.split('\t')
                    if len(parts) != 2:
                        raise MalformedInputError("expected '#default<TAB>field'",
                                                  path=path, line_no=line_no)
                    default_field = parts[1].strip()
                    continue
                if line.startswith('#'):
                    continue
                parts = line.split('\t')
                if len(parts) != 2 or not parts[0].strip():
                    raise MalformedInputError("expected 'relation-pattern<TAB>field'",
                                              path=path, line_no=line_no)
                rules.append((parts[0].strip(), parts[1].strip()))
        try:
            return cls(rules=rules, default_field=default_field)
        except ConfigurationError as e:
            raise MalformedInputError(str(e), path=path) from e

    @classmethod
    def default_dbpedia(cls) -> 'FieldMapping':
        """Built-in rule set for DBpedia-style relation names"""
        return cls(rules=[
            ('rdfs:label', 'names'),
            ('foaf:name', 'names'),
            ('dbo:alias', 'names'),
            ('dbp:name', 'names'),
            ('rdfs:comment', 'attributes'),
            ('dbo:abstract', 'attributes'),
            ('dct:subject', 'categories'),
            ('rdf:type', 'categories'),
            ('owl:sameAs', 'SimEn'),
            ('dbo:wikiPageRedirects', 'SimEn'),
            ('dbo:wikiPageDisambiguates', 'SimEn'),
        ])


@dataclass
class EntityDoc:
    """An entity's five token fields plus the entity ids linked from each field"""

    id: str
    fields: Dict[str, List[str]] = field(default_factory=lambda: {f: [] for f in FIELDS})
    entity_links: Dict[str, List[str]] = field(default_factory=lambda: {f: [] for f in FIELDS})

    def __post_init__(self):
        for name in FIELDS:
            self.fields.setdefault(name, [])
            self.entity_links.setdefault(name, [])
        extra = set(self.fields) - set(FIELDS)
        if extra:
            raise MalformedInputError(f"entity {self.id}: unknown fields {sorted(extra)}")

    def field_length(self, name: str) -> int:
        return len(self.fields[name])

    @property
    def length(self) -> int:
        return sum(len(tokens) for tokens in self.fields.values())

    def linked_entities(self) -> List[str]:
        """Entity links of the entity-valued fields, SimEn first"""
        return [e for name in ENTITY_FIELDS for e in self.entity_links[name]]

    def to_json(self) -> str:
        return json.dumps({
            'id': self.id,
            'fields': {name: self.fields[name] for name in FIELDS},
            'entity_links': {name: self.entity_links[name] for name in FIELDS
                             if self.entity_links[name]},
        }, ensure_ascii=False, separators=(',', ':'))

    @classmethod
    def from_json(cls, line: str) -> 'EntityDoc':
        record = json.loads(line)
        return cls(id=record['id'],
                   fields={k: list(v) for k, v in record['fields'].items()},
                   entity_links={k: list(v) for k, v in record.get('entity_links', {}).items()})


class Corpus:
    """Collection of entity documents keyed by entity id"""

    def __init__(self, docs: Optional[Iterable[EntityDoc]] = None):
        self._docs: Dict[str, EntityDoc] = {}
        for doc in docs or ():
            self._docs[doc.id] = doc

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._docs

    def __iter__(self) -> Iterator[EntityDoc]:
        for entity_id in self.ids():
            yield self._docs[entity_id]

    def ids(self) -> List[str]:
        return sorted(self._docs)

    def get(self, entity_id: str) -> Optional[EntityDoc]:
        return self._docs.get(entity_id)

    def __getitem__(self, entity_id: str) -> EntityDoc:
        return self._docs[entity_id]

    def add(self, doc: EntityDoc):
        self._docs[doc.id] = doc

    def serialize(self) -> str:
        return ''.join(doc.to_json() + '\n' for doc in self)

    def save(self, path: Path, header: str = None) -> Path:
        text = self.serialize()
        if header:
            text = f"# {header}\n" + text
        return write_text_atomic(path, text)

    @classmethod
    def load(cls, path: Path) -> 'Corpus':
        corpus = cls()
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip() or line.startswith('#'):
                    continue
                try:
                    corpus.add(EntityDoc.from_json(line))
                except (ValueError, KeyError) as e:
                    raise MalformedInputError(f"bad corpus record: {e}", path=path,
                                              line_no=line_no) from e
        return corpus


@dataclass
class IngestReport:
    triples: int = 0
    entities: int = 0
    malformed: int = 0
    malformed_lines: List[int] = field(default_factory=list)


def read_triples(path: Path, report: Optional[IngestReport] = None) -> Iterator[Triple]:
    """Yield triples from a TSV file; malformed lines are logged, counted and skipped"""
    with open(path, 'rb') as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                try:
                    line = raw.decode('utf-8')
                except UnicodeDecodeError as e:
                    raise MalformedInputError(f"invalid UTF-8: {e.reason}", path=path,
                                              line_no=line_no) from e
                triple = Triple.parse(line, line_no=line_no, path=path)
            except MalformedInputError as e:
                logger.warning(f"Skipping malformed triple: {e}")
                if report is not None:
                    report.malformed += 1
                    report.malformed_lines.append(line_no)
                continue
            yield triple


def ingest_triples(triples: Iterable[Triple], mapping: FieldMapping,
                   report: Optional[IngestReport] = None) -> Corpus:
    """One document per distinct head; tails appended to the mapped field in stream order"""
    docs: Dict[str, EntityDoc] = {}
    count = 0
    for triple in triples:
        count += 1
        doc = docs.get(triple.head)
        if doc is None:
            doc = docs[triple.head] = EntityDoc(id=triple.head)
        target = mapping.field_for(triple.relation, triple.tail_is_entity)
        doc.fields[target].extend(tokenize(triple.tail))
        if triple.tail_is_entity:
            doc.entity_links[target].append(triple.tail)

    corpus = Corpus(docs.values())
    if report is not None:
        report.triples += count
        report.entities = len(corpus)
    logger.info(f"Ingested {count} triples into {len(corpus)} entity documents")
    return corpus


def ingest_file(path: Path, mapping: FieldMapping) -> Tuple[Corpus, IngestReport]:
    report = IngestReport()
    corpus = ingest_triples(read_triples(path, report), mapping, report)
    if report.malformed:
        logger.warning(f"{report.malformed} malformed line(s) skipped in {path}")
    return corpus, report


@dataclass
class CollectionStats:
    """Per-field collection frequencies; windowed counts only for ``window``"""

    window: int
    entity_count: int = 0
    field_lengths: Dict[str, int] = field(default_factory=lambda: {f: 0 for f in FIELDS})
    unigram_cf: Dict[str, Counter] = field(default_factory=lambda: {f: Counter() for f in FIELDS})
    ordered_cf: Dict[str, Counter] = field(default_factory=lambda: {f: Counter() for f in FIELDS})
    windowed_cf: Optional[Dict[str, Counter]] = None

    @property
    def total_length(self) -> int:
        return sum(self.field_lengths.values())

    def collection_cf(self, term: str) -> int:
        return sum(self.unigram_cf[name][term] for name in FIELDS)

    def window_cf(self, field_name: str, t1: str, t2: str) -> int:
        if self.windowed_cf is None:
            raise ConfigurationError("windowed statistics were not computed")
        return self.windowed_cf[field_name][window_key(t1, t2)]


def window_key(t1: str, t2: str) -> Tuple[str, str]:
    return (t1, t2) if t1 <= t2 else (t2, t1)


def count_window_pairs(tokens: List[str], window: int) -> Counter:
    """(t1, t2) position pairs with distance < window; equal tokens count both orders"""
    pairs: Counter = Counter()
    n = len(tokens)
    for i in range(n):
        a = tokens[i]
        for j in range(i + 1, min(n, i + window)):
            b = tokens[j]
            if a == b:
                pairs[(a, a)] += 2
            else:
                pairs[window_key(a, b)] += 1
    return pairs


def collection_stats(corpus: Corpus, window: int = 8, include_windowed: bool = True) -> CollectionStats:
    """Exact collection counts over the corpus"""
    if window < 2:
        raise ConfigurationError(f"window size must be >= 2, got {window}")
    stats = CollectionStats(window=window, entity_count=len(corpus))
    if include_windowed:
        stats.windowed_cf = {f: Counter() for f in FIELDS}

    for doc in corpus:
        for name in FIELDS:
            tokens = doc.fields[name]
            stats.field_lengths[name] += len(tokens)
            stats.unigram_cf[name].update(tokens)
            stats.ordered_cf[name].update(zip(tokens, tokens[1:]))
            if include_windowed:
                stats.windowed_cf[name].update(count_window_pairs(tokens, window))
    return stats
