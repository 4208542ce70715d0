"""Shared fixtures: the bundled toy knowledge base and small hand-built indexes"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from retrieval.corpus import FIELDS, Corpus, EntityDoc, FieldMapping, ingest_file  # noqa: E402
from retrieval.index import build_index  # noqa: E402

TOY_DIR = ROOT / 'data' / 'toy'


def make_corpus(docs):
    """``{entity: {field: tokens}}`` -> Corpus"""
    return Corpus(EntityDoc(id=e, fields={f: list(fields.get(f, [])) for f in FIELDS})
                  for e, fields in docs.items())


def make_index(docs, window=8):
    return build_index(make_corpus(docs), window)


@pytest.fixture(scope='session')
def toy_dir():
    return TOY_DIR


@pytest.fixture(scope='session')
def toy_corpus():
    corpus, _ = ingest_file(TOY_DIR / 'triples.tsv', FieldMapping.load(TOY_DIR / 'mapping.tsv'))
    return corpus


@pytest.fixture(scope='session')
def toy_index(toy_corpus):
    return build_index(toy_corpus)
