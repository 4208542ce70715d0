"""Queries, embedding stores and the two entity-match features"""

import json
import math

import numpy as np
import pytest

from core.errors import MalformedInputError, StoreCorruptError
from retrieval.corpus import EntityDoc
from retrieval.entmatch import (EmbeddingStore, QueryRecord, cosine, elr_feature, load_queries,
                                save_queries, transe_feature)

from conftest import make_index


class TestQueries:
    def test_tokens_from_text(self):
        assert QueryRecord(id='q', text='Barack Obama mother').tokens == ['barack', 'obama', 'mother']

    def test_confidence_range(self):
        with pytest.raises(MalformedInputError):
            QueryRecord(id='q', text='x', annotations=[('e1', 1.5)])

    def test_duplicate_annotation(self):
        with pytest.raises(MalformedInputError):
            QueryRecord(id='q', text='x', annotations=[('e1', 0.5), ('e1', 0.4)])

    def test_load_toy(self, toy_dir):
        queries = {q.id: q for q in load_queries(toy_dir / 'queries.jsonl')}
        assert len(queries) == 6
        assert queries['Q3'].annotations == [('Barack_Obama', 0.7), ('Hawaii', 0.6)]
        assert queries['Q6'].annotations == []

    def test_annotation_file_overrides(self, tmp_path):
        save_queries([QueryRecord(id='q1', text='harry potter', annotations=[('HP', 0.9)])],
                     tmp_path / 'queries.jsonl')
        (tmp_path / 'ann.jsonl').write_text(json.dumps({'id': 'q1', 'annotations': [
            {'entity': 'Rowling', 'score': 0.4}]}) + '\n')
        queries = load_queries(tmp_path / 'queries.jsonl', tmp_path / 'ann.jsonl')
        assert queries[0].annotations == [('Rowling', 0.4)]
        assert queries[0].text == 'harry potter'

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / 'queries.jsonl'
        path.write_text('{"id": "q1", "text": "a"}\n{"id": "q1", "text": "b"}\n')
        with pytest.raises(MalformedInputError):
            load_queries(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / 'queries.jsonl'
        path.write_text('{"id": "q1"\n')
        with pytest.raises(MalformedInputError):
            load_queries(path)


class TestEmbeddingStore:
    def test_save_load_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        store = EmbeddingStore(3, ['a', 'b'], rng.normal(size=(2, 3)), ['r'], rng.normal(size=(1, 3)))
        store.save(tmp_path / 'e.txt', tmp_path / 'r.txt')
        loaded = EmbeddingStore.load(tmp_path / 'e.txt', tmp_path / 'r.txt')
        np.testing.assert_array_equal(loaded.entity_vectors, store.entity_vectors)
        np.testing.assert_array_equal(loaded.relation_vector('r'), store.relation_vector('r'))

    def test_wrong_width(self, tmp_path):
        path = tmp_path / 'e.txt'
        path.write_text('1 3\na 0.1 0.2\n')
        with pytest.raises(StoreCorruptError):
            EmbeddingStore.load(path)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / 'e.txt'
        path.write_text('2 2\na 0.1 0.2\n')
        with pytest.raises(StoreCorruptError):
            EmbeddingStore.load(path)

    def test_non_finite(self):
        with pytest.raises(StoreCorruptError):
            EmbeddingStore(2, ['a'], np.array([[np.nan, 1.0]]))

    def test_nearest(self):
        store = EmbeddingStore(2, ['a', 'b', 'c'], np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0]]))
        assert [e for e, _ in store.nearest('a', 2)] == ['b', 'c']
        assert store.nearest('missing') == []

    def test_cosine_of_zero_vector(self):
        assert cosine(np.zeros(3), np.ones(3)) == 0.0


class TestElr:
    def test_no_annotations(self):
        index = make_index({'e1': {}, 'e2': {}})
        assert elr_feature(QueryRecord(id='q', text='x'), EntityDoc(id='e1'), index) == 0.0

    def test_self_annotation_by_hand(self):
        index = make_index({'e1': {}, 'e2': {}, 'e3': {}})
        mu_e = 100.0
        value = elr_feature(QueryRecord(id='q', text='x', annotations=[('e1', 1.0)]),
                            EntityDoc(id='e1'), index, mu_e)
        assert value == pytest.approx(math.log((1 + mu_e * (1 / 3)) / (1 + mu_e)))

    def test_linear_in_confidence(self, toy_index):
        entity = EntityDoc(id='Ann_Dunham', entity_links={'RelEn': toy_index.entity_links('Ann_Dunham')})
        full = elr_feature(QueryRecord(id='q', text='x', annotations=[('Barack_Obama', 0.8), ('Honolulu', 0.6)]),
                           entity, toy_index)
        half = elr_feature(QueryRecord(id='q', text='x', annotations=[('Barack_Obama', 0.4), ('Honolulu', 0.3)]),
                           entity, toy_index)
        assert half == pytest.approx(full / 2)

    def test_linked_beats_unlinked(self, toy_index):
        query = QueryRecord(id='q', text='x', annotations=[('Barack_Obama', 1.0)])
        linked = EntityDoc(id='Ann_Dunham', entity_links={'RelEn': toy_index.entity_links('Ann_Dunham')})
        unlinked = EntityDoc(id='Toulouse', entity_links={'RelEn': toy_index.entity_links('Toulouse')})
        assert elr_feature(query, linked, toy_index) > elr_feature(query, unlinked, toy_index)

    def test_unknown_annotation_is_finite(self, toy_index):
        query = QueryRecord(id='q', text='x', annotations=[('Not_In_KB', 0.5)])
        assert math.isfinite(elr_feature(query, EntityDoc(id='Boeing'), toy_index))


class TestTransEFeature:
    @pytest.fixture
    def store(self):
        return EmbeddingStore(2, ['a', 'b', 'c'], np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]))

    def test_identical_vectors(self, store):
        assert transe_feature(QueryRecord(id='q', text='x', annotations=[('b', 1.0)]), store, 'a') == \
            pytest.approx(1.0)

    def test_missing_embedding(self, store):
        assert transe_feature(QueryRecord(id='q', text='x', annotations=[('zz', 1.0)]), store, 'a') == 0.0
        assert transe_feature(QueryRecord(id='q', text='x', annotations=[('b', 1.0)]), store, 'zz') == 0.0

    def test_opposite_cancel(self, store):
        query = QueryRecord(id='q', text='x', annotations=[('b', 0.5), ('c', 0.5)])
        assert transe_feature(query, store, 'a') == pytest.approx(0.0)
