"""Configuration loading, validation, hashing, errors and logging"""

import json
import logging

import pytest
import yaml

from core.config_manager import ConfigManager
from core.errors import (ConfigurationError, ErankError, MalformedInputError, MissingArtifactError,
                         MissingInputError, StoreCorruptError, UnknownEntityError, UsageError)
from core.logger import JSONFormatter, MetricsLogger, setup_logger
from retrieval.corpus import FIELDS
from retrieval.experiment import ExperimentConfig


def write_config(tmp_path, payload):
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(payload))
    return path


@pytest.fixture
def inputs(tmp_path):
    for name in ('triples.tsv', 'queries.jsonl', 'qrels.txt'):
        (tmp_path / name).write_text('')
    return {'triples': 'triples.tsv', 'queries': 'queries.jsonl', 'qrels': 'qrels.txt'}


class TestConfigManager:
    def test_defaults_under_partial_file(self, tmp_path):
        manager = ConfigManager(write_config(tmp_path, {'sdm': {'mu': 100}}))
        assert manager.get('sdm.mu') == 100
        assert manager.get('sdm.lambda_t') == 0.8
        assert manager.get('fsdm.weights.T.names') == 0.2
        assert manager.get('no.such.key', 'fallback') == 'fallback'

    def test_field_defaults_follow_corpus_fields(self, tmp_path):
        manager = ConfigManager(write_config(tmp_path, {}))
        assert tuple(manager.get('fsdm.mu')) == FIELDS
        assert tuple(manager.get('fsdm.weights.O')) == FIELDS

    def test_explicit_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ConfigManager(tmp_path / 'absent.yaml')

    def test_unparseable(self, tmp_path):
        path = tmp_path / 'config.yaml'
        path.write_text('sdm: [unclosed\n')
        with pytest.raises(ConfigurationError):
            ConfigManager(path)

    def test_env_substitution(self, tmp_path, monkeypatch):
        monkeypatch.setenv('ERANK_TRIPLES', '/data/kb.tsv')
        manager = ConfigManager(write_config(tmp_path, {'paths': {'triples': '${ERANK_TRIPLES}'}}))
        assert manager.get('paths.triples') == '/data/kb.tsv'

    def test_relative_paths(self, tmp_path):
        manager = ConfigManager(write_config(tmp_path, {'paths': {'qrels': 'q/qrels.txt'}}))
        assert manager.resolve_path('paths.qrels') == tmp_path.resolve() / 'q' / 'qrels.txt'

    def test_validation_passes(self, tmp_path, inputs):
        assert ConfigManager(write_config(tmp_path, {'paths': inputs})).validate_config()

    @pytest.mark.parametrize('override', [
        {'experiment': {'variant': '+magic'}},
        {'experiment': {'trainer': 'lambdamart'}},
        {'experiment': {'variants': ['baseline', '+ELT']}},
        {'sdm': 'not a section'},
    ])
    def test_validation_errors(self, tmp_path, inputs, override):
        manager = ConfigManager(write_config(tmp_path, {'paths': inputs}))
        for section, value in override.items():
            if isinstance(value, dict):
                for key, item in value.items():
                    manager.set(f'{section}.{key}', item)
            else:
                manager.config[section] = value
        with pytest.raises(ConfigurationError):
            manager.validate_config()

    def test_missing_optional_input(self, tmp_path, inputs):
        manager = ConfigManager(write_config(tmp_path, {'paths': dict(inputs, groups='missing.tsv')}))
        with pytest.raises(MissingInputError):
            manager.validate_config()

    def test_missing_required_input(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ConfigManager(write_config(tmp_path, {})).validate_config()

    def test_hash_ignores_run_local_knobs(self, tmp_path):
        manager = ConfigManager(write_config(tmp_path, {}))
        before = manager.config_hash()
        manager.set('system.threads', 16)
        manager.set('paths.workdir', '/elsewhere')
        manager.set('system.log_level', 'DEBUG')
        assert manager.config_hash() == before
        manager.set('sdm.mu', 1000.0)
        assert manager.config_hash() != before
        assert len(before) == 12

    def test_shipped_config(self):
        manager = ConfigManager()
        assert manager.validate_config()
        config = ExperimentConfig.from_manager(manager)
        assert config.folds == 3
        assert config.run_tag('+TransE', 'ranksvm') == f"erank-transe-ranksvm-{config.config_hash}"


class TestExperimentConfig:
    def test_feature_lengths(self):
        assert [ExperimentConfig.feature_length(v) for v in ('baseline', '+ELR', '+TransE', '+both')] == \
            [26, 27, 27, 28]

    def test_unknown_variant(self, tmp_path):
        manager = ConfigManager(write_config(tmp_path, {'experiment': {'variants': ['+magic']}}))
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_manager(manager)

    def test_artifact_names(self, tmp_path):
        config = ExperimentConfig.from_manager(ConfigManager(write_config(tmp_path, {})))
        assert config.workdir == tmp_path.resolve() / 'work'
        assert config.features_path('+ELR').name == 'features.elr.txt'
        assert config.model_path('baseline', 'ranksvm', 2).name == 'baseline.ranksvm.fold2.yaml'


class TestErrors:
    @pytest.mark.parametrize('error, code', [
        (UsageError('bad flag'), 1),
        (MalformedInputError('bad line', path='x.tsv', line_no=3), 2),
        (MissingArtifactError('index.json.gz', 'index'), 2),
        (MissingInputError('paths.qrels', 'qrels.txt'), 2),
        (ConfigurationError('bad'), 3),
        (UnknownEntityError('Q42'), 3),
        (StoreCorruptError('nan'), 3),
    ])
    def test_exit_codes(self, error, code):
        assert isinstance(error, ErankError)
        assert error.exit_code == code

    def test_messages_locate_problem(self):
        assert 'x.tsv:3' in str(MalformedInputError('bad line', path='x.tsv', line_no=3))
        assert '`erank index`' in str(MissingArtifactError('index.json.gz', 'index'))

    def test_unknown_entity_is_key_error(self):
        with pytest.raises(KeyError):
            raise UnknownEntityError('Q42')


class TestLogging:
    def test_file_handlers(self, tmp_path):
        logger = setup_logger('erank-test', log_dir=tmp_path, level='DEBUG')
        logger.info('hello')
        for handler in logger.handlers:
            handler.flush()
        assert logger.level == logging.DEBUG
        assert any(p.suffix == '.log' for p in tmp_path.iterdir())
        assert any(p.suffix == '.json' for p in tmp_path.iterdir())
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)

    def test_json_formatter_carries_metrics(self):
        record = logging.makeLogRecord({'name': 'erank', 'levelname': 'INFO', 'msg': 'MAP',
                                        'metrics': {'MAP': {'value': 0.5}}})
        payload = json.loads(JSONFormatter().format(record))
        assert payload['message'] == 'MAP'
        assert payload['metrics'] == {'MAP': {'value': 0.5}}

    def test_metrics_logger(self):
        metrics = MetricsLogger(logging.getLogger('erank-metrics-test'))
        metrics.record_metric('train_seconds', 1.5, 's')
        assert metrics.get_metrics()['train_seconds']['value'] == 1.5
        metrics.clear_metrics()
        assert metrics.get_metrics() == {}
