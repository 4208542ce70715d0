"""TransE training: energies, corruption sampling and the SGD update"""

import numpy as np
import pytest

from core.errors import ConfigurationError, TrainingError, UnknownEntityError
from retrieval.corpus import Triple
from retrieval.entmatch import EmbeddingStore
from retrieval.transe import TransEConfig, TripleSet, corrupt, energy, hinge_loss, sgd_step, train


def cycle(n=8):
    return TripleSet([(f"n{i}", 'next', f"n{(i + 1) % n}") for i in range(n)])


class TestEnergy:
    @pytest.fixture
    def store(self):
        return EmbeddingStore(2, ['h', 't'], np.array([[1.0, 0.0], [0.0, 1.0]]),
                              ['r'], np.array([[0.0, 0.0]]))

    def test_l2(self, store):
        assert energy(store, 'h', 'r', 't') == pytest.approx(np.sqrt(2))

    def test_l1(self, store):
        assert energy(store, 'h', 'r', 't', norm='L1') == pytest.approx(2.0)

    def test_unknown(self, store):
        with pytest.raises(UnknownEntityError):
            energy(store, 'h', 'r', 'missing')

    def test_hinge(self):
        assert hinge_loss(0.2, 0.5, 1.0) == pytest.approx(0.7)
        assert hinge_loss(0.2, 1.5, 1.0) == 0.0


class TestCorruption:
    def test_two_entities(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            assert corrupt(('a', 'r', 'b'), ['a', 'b'], rng) in {('b', 'r', 'b'), ('a', 'r', 'a')}

    def test_never_returns_positive_and_replaces_head_half_the_time(self):
        rng = np.random.default_rng(7)
        entities = [f"e{i}" for i in range(30)]
        heads = 0
        for _ in range(10000):
            h, r, t = corrupt(('e3', 'r', 'e9'), entities, rng)
            assert (h, t) != ('e3', 'e9')
            assert h == 'e3' or t == 'e9'
            heads += h != 'e3'
        assert heads / 10000 == pytest.approx(0.5, abs=0.05)

    def test_single_entity(self):
        with pytest.raises(TrainingError):
            corrupt(('a', 'r', 'a'), ['a'], np.random.default_rng(0))


class TestSgdStep:
    def test_inactive_hinge_leaves_tables(self):
        entities = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        relations = np.array([[-1.0, 1.0]])
        before_e, before_r = entities.copy(), relations.copy()
        loss = sgd_step(entities, relations, (0, 0, 1), (0, 0, 2), margin=1.0, learning_rate=0.1)
        assert loss == 0.0
        np.testing.assert_array_equal(entities, before_e)
        np.testing.assert_array_equal(relations, before_r)

    def test_active_step_lowers_positive_energy(self):
        entities = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        relations = np.array([[0.0, 0.0]])
        d_before = np.linalg.norm(entities[0] + relations[0] - entities[1])
        loss = sgd_step(entities, relations, (0, 0, 1), (0, 0, 2), margin=1.0, learning_rate=0.05)
        assert loss > 0
        assert np.linalg.norm(entities[0] + relations[0] - entities[1]) < d_before
        np.testing.assert_allclose(np.linalg.norm(entities, axis=1), 1.0)


class TestTraining:
    def test_literal_tails_are_skipped(self):
        triples = [Triple('a', 'r', 'b', True), Triple('a', 'rdfs:label', 'A', False)]
        assert TripleSet.from_triples(triples).triples == [('a', 'r', 'b')]

    def test_zero_epochs_is_initialisation(self):
        store = train(cycle(), TransEConfig(dim=5, epochs=0, seed=3))
        np.testing.assert_allclose(np.linalg.norm(store.entity_vectors, axis=1), 1.0)
        assert np.all(np.abs(store.relation_vectors) <= 6 / np.sqrt(5))

    def test_cycle_true_energy_well_below_corrupted(self):
        # a single translation cannot close an 8-cycle; the best reachable ratio is about 0.54
        triples = cycle()
        store = train(triples, TransEConfig(dim=16, epochs=2000, learning_rate=0.05, seed=42))
        rng = np.random.default_rng(0)
        true = [energy(store, h, r, t) for h, r, t in triples.triples]
        corrupted = [energy(store, *corrupt(triples.triples[i % len(triples.triples)], triples.entities, rng))
                     for i in range(100)]
        assert np.mean(true) / np.mean(corrupted) <= 0.75

    def test_deterministic_single_worker(self):
        config = TransEConfig(dim=8, epochs=20, learning_rate=0.01, seed=5)
        a, b = train(cycle(), config), train(cycle(), config)
        np.testing.assert_array_equal(a.entity_vectors, b.entity_vectors)
        np.testing.assert_array_equal(a.relation_vectors, b.relation_vectors)

    def test_epoch_callback(self):
        seen = []
        train(cycle(), TransEConfig(dim=4, epochs=6, seed=1), on_epoch=lambda e, loss: seen.append((e, loss)))
        assert [e for e, _ in seen] == list(range(1, 7))
        assert all(loss >= 0 for _, loss in seen)

    def test_hogwild_keeps_unit_norms(self):
        store = train(cycle(), TransEConfig(dim=8, epochs=10, seed=2, workers=2))
        np.testing.assert_allclose(np.linalg.norm(store.entity_vectors, axis=1), 1.0)

    def test_empty_triples(self):
        with pytest.raises(TrainingError):
            train(TripleSet([]), TransEConfig(epochs=1))

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            TransEConfig(norm='L3')
        with pytest.raises(ConfigurationError):
            TransEConfig(dim=0)
