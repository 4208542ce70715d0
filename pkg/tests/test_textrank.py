"""Language-model, SDM/FSDM, BM25 and cosine features, candidates and feature rows"""

import math

import numpy as np
import pytest

from core.errors import (ConfigurationError, FieldEmptyError, MalformedInputError,
                         ScoreUndefinedError, UnknownEntityError)
from retrieval.corpus import FIELDS
from retrieval.entmatch import EPSILON_FLOOR, EmbeddingStore, QueryRecord
from retrieval.textrank import (BASELINE_FEATURES, FeatureConfig, FeatureVector, FsdmParams,
                                SdmParams, bm25, coordinate_match, cosine_sim, extract_features,
                                feature_groups, fsdm_score, generate_candidates, lm_unigram,
                                read_feature_file, sdm_score, write_feature_file)

from conftest import make_index


@pytest.fixture
def lm_index():
    # |C_names| = 1000, cf(a) = 5; e1 and e3 have length 10
    return make_index({
        'e1': {'names': ['a', 'a'] + [f'x{i}' for i in range(8)]},
        'e2': {'names': ['a'] * 3 + ['y'] * 977},
        'e3': {'names': [f'z{i}' for i in range(10)]},
    })


@pytest.fixture
def text_index():
    return make_index({
        'e1': {'names': ['harry', 'potter'], 'attributes': ['a', 'young', 'wizard', 'named', 'harry']},
        'e2': {'names': ['potter', 'harry'], 'attributes': ['wizard', 'school']},
        'e3': {'names': ['boeing'], 'categories': ['jet', 'airliners'], 'RelEn': ['boeing', 'seattle']},
        'e4': {'attributes': ['harry', 'and', 'the', 'wizard', 'potter'], 'SimEn': ['hp']},
        'e5': {'names': ['seattle'], 'categories': ['cities']},
    })


class TestUnigramLM:
    def test_present_term(self, lm_index):
        assert lm_unigram(lm_index, 'e1', 'names', 'a', mu=100) == pytest.approx(math.log(2.5 / 110))
        assert lm_unigram(lm_index, 'e1', 'names', 'a', mu=100) == pytest.approx(-3.784, abs=1e-3)

    def test_absent_term(self, lm_index):
        assert lm_unigram(lm_index, 'e3', 'names', 'a', mu=100) == pytest.approx(-5.394, abs=1e-3)

    def test_floor(self, lm_index):
        assert lm_unigram(lm_index, 'e3', 'names', 'nowhere', mu=100) == \
            pytest.approx(math.log(EPSILON_FLOOR / 110))

    def test_empty_field(self, lm_index):
        with pytest.raises(FieldEmptyError):
            lm_unigram(lm_index, 'e1', 'RelEn', 'a')


class TestSdm:
    def test_unigram_reduction(self, text_index):
        params = SdmParams(lambda_t=1.0, lambda_o=0.0, lambda_u=0.0, mu=100.0)
        tokens = ['harry', 'potter', 'wizard']
        for entity in text_index.entities():
            expected = sum(lm_unigram(text_index, entity, 'attributes', t, mu=100.0) for t in tokens)
            assert abs(sdm_score(text_index, tokens, entity, 'attributes', params) - expected) < 1e-12

    def test_single_term(self, text_index):
        params = SdmParams(mu=100.0)
        score = sdm_score(text_index, ['harry'], 'e1', 'names', params)
        assert score == pytest.approx(0.8 * lm_unigram(text_index, 'e1', 'names', 'harry', mu=100.0))

    def test_two_terms_by_hand(self):
        index = make_index({'e1': {'names': ['a', 'b', 'c']}, 'e2': {'names': ['c', 'a']}})
        mu = 100.0
        p_t = [(1 + mu * 2 / 5) / 103, (1 + mu * 1 / 5) / 103]     # a, b
        p_o = (1 + mu * 1 / 5) / 103                               # "a b" once in collection
        p_u = (1 + mu * 1 / 5) / 103                               # a, b within 8 once
        expected = 0.8 * sum(math.log(p) for p in p_t) + 0.1 * math.log(p_o) + 0.1 * math.log(p_u)
        score = sdm_score(index, ['a', 'b'], 'e1', 'names', SdmParams(mu=mu))
        assert score == pytest.approx(expected, abs=1e-12)

    def test_empty_query(self, text_index):
        with pytest.raises(ScoreUndefinedError):
            sdm_score(text_index, [], 'e1', 'names')

    def test_window_mismatch(self, text_index):
        with pytest.raises(ConfigurationError):
            sdm_score(text_index, ['harry'], 'e1', 'names', SdmParams(window=4))

    def test_lambdas_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            SdmParams(lambda_t=0.5, lambda_o=0.1, lambda_u=0.1)


class TestFsdm:
    @pytest.mark.parametrize('field_name', ['names', 'attributes'])
    def test_one_hot_reduces_to_sdm(self, text_index, field_name):
        tokens = ['harry', 'potter', 'wizard']
        fsdm = FsdmParams.one_hot(field_name, mu=250.0)
        sdm = SdmParams(mu=250.0)
        for entity in text_index.entities():
            assert abs(fsdm_score(text_index, tokens, entity, fsdm)
                       - sdm_score(text_index, tokens, entity, field_name, sdm)) < 1e-12

    def test_mixture_of_two_fields(self):
        index = make_index({'e1': {'names': ['a'], 'attributes': ['b', 'a']}, 'e2': {'names': ['c']}})
        weights = {f: 0.0 for f in FIELDS}
        weights.update(names=0.5, attributes=0.5)
        mu = 10.0
        params = FsdmParams(weights={x: dict(weights) for x in 'TOU'}, mu={f: mu for f in FIELDS},
                            lambda_t=1.0, lambda_o=0.0, lambda_u=0.0)
        p_names = (1 + mu * 1 / 2) / (1 + mu)
        p_attributes = (1 + mu * 1 / 2) / (2 + mu)
        assert fsdm_score(index, ['a'], 'e1', params) == pytest.approx(math.log((p_names + p_attributes) / 2))

    def test_weights_validated(self):
        with pytest.raises(ConfigurationError):
            FsdmParams(weights={x: {f: 0.5 for f in FIELDS} for x in 'TOU'})


class TestBm25AndFriends:
    def test_no_match(self, text_index):
        assert bm25(text_index, ['zzz'], 'e1', 'names') == 0.0
        assert bm25(text_index, ['zzz'], 'e1', 'names', k1=2.4) == 0.0

    def test_average_length_contribution_is_idf(self):
        index = make_index({'e1': {'names': ['a', 'b']}, 'e2': {'names': ['c', 'd']}})
        idf = math.log((2 - 1 + 0.5) / (1 + 0.5) + 1)
        assert bm25(index, ['a'], 'e1', 'names') == pytest.approx(idf)

    def test_coordinate_match(self):
        index = make_index({'e1': {'names': ['a', 'x', 'c', 'a']}})
        assert coordinate_match(index, ['a', 'b', 'c'], 'e1', 'names') == 2
        assert coordinate_match(index, ['q'], 'e1', 'names') == 0

    def test_cosine(self):
        index = make_index({'e1': {'names': ['a', 'b']}, 'e2': {'names': ['c']}, 'e3': {'names': ['a', 'd']}})
        assert cosine_sim(index, ['a', 'b'], 'e1', 'names') == pytest.approx(1.0)
        assert cosine_sim(index, ['a', 'b'], 'e2', 'names') == 0.0
        partial = cosine_sim(index, ['a', 'b'], 'e3', 'names')
        assert 0.0 < partial < 1.0


class TestCandidates:
    def test_fewer_entities_than_k(self, text_index):
        ranked = generate_candidates(text_index, ['harry'], k=100)
        assert sorted(e for e, _ in ranked) == ['e1', 'e2', 'e4']

    def test_ties_by_entity_id(self):
        index = make_index({'b': {'names': ['x', 'y']}, 'a': {'names': ['x', 'y']}, 'c': {'names': ['x', 'y']}})
        assert [e for e, _ in generate_candidates(index, ['x'])] == ['a', 'b', 'c']

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(3)
        vocab = list('abcdef')
        for _ in range(20):
            docs = {f'E{i}': {f: [str(t) for t in rng.choice(vocab, size=int(rng.integers(0, 6)))]
                              for f in FIELDS} for i in range(5)}
            index = make_index(docs)
            tokens = [str(t) for t in rng.choice(vocab, size=2)]
            k = int(rng.integers(1, 6))
            matching = [e for e, fields in docs.items() if any(t in fields[f] for f in FIELDS for t in tokens)]
            expected = sorted(((e, fsdm_score(index, tokens, e)) for e in matching),
                              key=lambda item: (-item[1], item[0]))[:k]
            assert generate_candidates(index, tokens, k=k) == expected

    def test_empty_query(self, text_index):
        with pytest.raises(ScoreUndefinedError):
            generate_candidates(text_index, [])


class TestFeatures:
    def test_baseline_layout(self, text_index):
        fv = extract_features(text_index, QueryRecord(id='q', text='harry potter'), 'e1')
        assert len(fv.values) == 26 == len(BASELINE_FEATURES)
        assert BASELINE_FEATURES[0] == 'fsdm'

    def test_entity_variants(self, text_index):
        store = EmbeddingStore(2, ['e1', 'e2'], np.eye(2))
        query = QueryRecord(id='q', text='harry potter', annotations=[('e2', 0.9)])
        transe = extract_features(text_index, query, 'e1', FeatureConfig(include_transe=True), store=store)
        both = extract_features(text_index, query, 'e1',
                                FeatureConfig(include_elr=True, include_transe=True), store=store)
        assert len(transe.values) == 27
        assert len(both.values) == 28
        assert FeatureConfig(include_elr=True, include_transe=True).feature_names[-2:] == ('elr', 'transe')

    def test_absent_query_is_finite(self, text_index):
        fv = extract_features(text_index, QueryRecord(id='q', text='zeppelin quartz'), 'e5',
                              FeatureConfig(include_elr=True))
        assert all(math.isfinite(v) for v in fv.values)

    def test_unknown_entity(self, text_index):
        with pytest.raises(UnknownEntityError):
            extract_features(text_index, QueryRecord(id='q', text='harry'), 'nobody')

    def test_transe_needs_store(self, text_index):
        with pytest.raises(ConfigurationError):
            extract_features(text_index, QueryRecord(id='q', text='harry'), 'e1',
                             FeatureConfig(include_transe=True))

    def test_groups(self):
        groups = feature_groups(FeatureConfig(include_elr=True, include_transe=True).feature_names)
        assert groups['fsdm'] == 'FSDM'
        assert groups['elr'] == groups['transe'] == 'ENT'
        assert sum(1 for g in groups.values() if g == 'Others') == 25


class TestFeatureFile:
    def test_write_read(self, tmp_path):
        names = ['f1', 'f2']
        rows = [FeatureVector('q2', 'b', [0.1, -2.0], 1), FeatureVector('q1', 'a', [1e-300, 3.5], 0)]
        path = write_feature_file(rows, names, tmp_path / 'features.txt', config_hash='abc')
        text = path.read_text().splitlines()
        assert text[0] == '# erank config=abc'
        assert text[2].startswith('0 qid:q1 1:')
        read_names, read_rows = read_feature_file(path)
        assert read_names == names
        assert [(r.query_id, r.entity_id, r.values, r.label) for r in read_rows] == [
            ('q1', 'a', [1e-300, 3.5], 0), ('q2', 'b', [0.1, -2.0], 1)]

    def test_wrong_width(self, tmp_path):
        path = tmp_path / 'features.txt'
        path.write_text('# features: f1 f2\n1 qid:q1 1:0.5 #e1\n')
        with pytest.raises(MalformedInputError):
            read_feature_file(path)
