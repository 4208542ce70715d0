#!/usr/bin/env python3
"""
Synthetic Knowledge Base
========================

Builds a small, seeded entity-search bundle in which relevance follows graph
proximity to the annotated query entity while text alone is ambiguous.

Layout:
- 10 communities of 20 entities (E000-E199); the first entity of each
  community is its hub
- Communities come in twin pairs sharing one topic word, so the topic matches
  both twins equally in text
- Every entity has a label, an abstract and a subject literal (600 triples)
- Members link to their hub (190), communities are densely linked inside
  (1110) and sparsely across (100), giving 2000 triples in total
- 4 queries per community: "<topic> <filler>", annotated with one non-hub
  member of the target community; members are relevant (hub grade 2)
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import yaml

from core.utils import ensure_directory, write_text_atomic
from retrieval.corpus import Triple
from retrieval.entmatch import QueryRecord, save_queries


logger = logging.getLogger(__name__)

COMMUNITIES = 10
COMMUNITY_SIZE = 20
INTRA_EDGES = 111
CROSS_EDGES = 100
QUERIES_PER_COMMUNITY = 4
GROUPS = ('SemSearch ES', 'ListSearch', 'INEX-LD', 'QALD-2')
INTRA_RELATIONS = ('dbo:relatedTo', 'dbo:collaboratesWith', 'dbo:locatedNear')
MEMBER_RELATION = 'dbo:memberOf'
CROSS_RELATION = 'dbo:relatedTo'

_SYLLABLES = ('ka', 'lo', 'mi', 'ru', 'ze', 'ta', 'no', 'vi', 'pe', 'su', 'da', 'gor',
              'bel', 'tin', 'mar', 'qu', 'fen', 'hal', 'wix', 'yo')


@dataclass
class SyntheticBundle:
    root: Path
    config_path: Path
    files: Dict[str, Path] = field(default_factory=dict)
    entities: int = 0
    triples: int = 0
    queries: int = 0


def _pseudo_words(rng: np.random.Generator, count: int, syllables: int, taken: set) -> List[str]:
    words = []
    while len(words) < count:
        word = ''.join(rng.choice(_SYLLABLES, size=syllables))
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def entity_id(community: int, member: int) -> str:
    return f"E{community * COMMUNITY_SIZE + member:03d}"


def build_triples(rng: np.random.Generator, topics: List[str], general: List[str],
                  names: List[str]) -> List[Triple]:
    triples: List[Triple] = []
    for c in range(COMMUNITIES):
        topic = topics[c // 2]
        for m in range(COMMUNITY_SIZE):
            head = entity_id(c, m)
            words = rng.choice(general, size=8, replace=False)
            triples.append(Triple(head, 'rdfs:label', names[c * COMMUNITY_SIZE + m].title(), False))
            triples.append(Triple(head, 'dbo:abstract', f"{topic} " + ' '.join(words), False))
            triples.append(Triple(head, 'dct:subject', f"{topic} {rng.choice(general)}", False))

    for c in range(COMMUNITIES):
        hub = entity_id(c, 0)
        for m in range(1, COMMUNITY_SIZE):
            triples.append(Triple(entity_id(c, m), MEMBER_RELATION, hub, True))

    for c in range(COMMUNITIES):
        for _ in range(INTRA_EDGES):
            a, b = rng.choice(COMMUNITY_SIZE, size=2, replace=False)
            relation = INTRA_RELATIONS[int(rng.integers(len(INTRA_RELATIONS)))]
            triples.append(Triple(entity_id(c, int(a)), relation, entity_id(c, int(b)), True))

    for _ in range(CROSS_EDGES):
        ca, cb = rng.choice(COMMUNITIES, size=2, replace=False)
        a, b = rng.integers(COMMUNITY_SIZE, size=2)
        triples.append(Triple(entity_id(int(ca), int(a)), CROSS_RELATION, entity_id(int(cb), int(b)), True))
    return triples


def build_queries(rng: np.random.Generator, topics: List[str],
                  general: List[str]) -> Tuple[List[QueryRecord], Dict[str, Dict[str, int]], Dict[str, str]]:
    queries: List[QueryRecord] = []
    qrels: Dict[str, Dict[str, int]] = {}
    groups: Dict[str, str] = {}
    number = 0
    for c in range(COMMUNITIES):
        for _ in range(QUERIES_PER_COMMUNITY):
            number += 1
            qid = f"SQ{number:02d}"
            text = f"{topics[c // 2]} {rng.choice(general)}"
            annotated = entity_id(c, int(rng.integers(1, COMMUNITY_SIZE)))
            annotations = [(annotated, round(float(rng.uniform(0.6, 0.95)), 3))]
            if rng.random() < 0.5:
                other = (c + int(rng.integers(1, COMMUNITIES))) % COMMUNITIES
                noise = entity_id(other, int(rng.integers(COMMUNITY_SIZE)))
                annotations.append((noise, round(float(rng.uniform(0.1, 0.3)), 3)))
            queries.append(QueryRecord(id=qid, text=text, annotations=annotations))
            qrels[qid] = {entity_id(c, m): (2 if m == 0 else 1) for m in range(COMMUNITY_SIZE)}
            groups[qid] = GROUPS[(number - 1) % len(GROUPS)]
    return queries, qrels, groups


def synthetic_config() -> Dict:
    """Experiment bundle tuned for the small synthetic graph"""
    return {
        'paths': {
            'triples': 'triples.tsv',
            'mapping': 'mapping.tsv',
            'queries': 'queries.jsonl',
            'qrels': 'qrels.txt',
            'groups': 'groups.tsv',
            'workdir': 'work',
        },
        'experiment': {
            'variant': 'baseline',
            'trainer': 'coordinate_ascent',
            'seed': 42,
            'folds': 5,
            'candidates_k': 100,
            'variants': ['baseline', '+ELR', '+TransE'],
            'trainers': ['coordinate_ascent', 'ranksvm'],
        },
        'transe': {
            'dim': 50,
            'learning_rate': 0.01,
            'epochs': 150,
        },
        'ranksvm': {
            'epochs': 10,
        },
        'evaluation': {
            'permutation_iterations': 20000,
        },
    }


def build_synthetic_kb(out_dir: Path, seed: int = 42) -> SyntheticBundle:
    """Write triples, mapping, queries, qrels, groups and a config under ``out_dir``"""
    root = ensure_directory(out_dir)
    rng = np.random.default_rng(seed)
    taken: set = set()
    topics = _pseudo_words(rng, COMMUNITIES // 2, 3, taken)
    general = _pseudo_words(rng, 60, 2, taken)
    names = _pseudo_words(rng, COMMUNITIES * COMMUNITY_SIZE, 3, taken)

    triples = build_triples(rng, topics, general, names)
    queries, qrels, groups = build_queries(rng, topics, general)

    files = {
        'triples': root / 'triples.tsv',
        'mapping': root / 'mapping.tsv',
        'queries': root / 'queries.jsonl',
        'qrels': root / 'qrels.txt',
        'groups': root / 'groups.tsv',
    }
    write_text_atomic(files['triples'], ''.join(t.to_line() + '\n' for t in triples))
    write_text_atomic(files['mapping'], '\n'.join([
        '# synthetic knowledge base field mapping',
        'rdfs:label\tnames',
        'dbo:abstract\tattributes',
        'dct:subject\tcategories',
        '#default\tattributes',
    ]) + '\n')
    save_queries(queries, files['queries'])
    write_text_atomic(files['qrels'], ''.join(
        f"{qid} 0 {e} {grade}\n" for qid in sorted(qrels) for e, grade in sorted(qrels[qid].items())))
    write_text_atomic(files['groups'], ''.join(f"{qid}\t{groups[qid]}\n" for qid in sorted(groups)))

    config_path = root / 'experiment_config.yaml'
    write_text_atomic(config_path, yaml.safe_dump(synthetic_config(), sort_keys=False))

    bundle = SyntheticBundle(root=root, config_path=config_path, files=files,
                             entities=COMMUNITIES * COMMUNITY_SIZE, triples=len(triples),
                             queries=len(queries))
    logger.info(f"Synthetic KB written to {root}: {bundle.entities} entities, "
                f"{bundle.triples} triples, {bundle.queries} queries")
    logger.debug(f"Topic words: {topics}")
    return bundle
