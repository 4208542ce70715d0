"""End-to-end runs of the erank command line, in process"""

import json

import pytest
import yaml

from main import main

from conftest import TOY_DIR


def toy_config(tmp_path, **overrides):
    payload = {
        'paths': {name: str(TOY_DIR / file) for name, file in (
            ('triples', 'triples.tsv'), ('mapping', 'mapping.tsv'), ('queries', 'queries.jsonl'),
            ('qrels', 'qrels.txt'), ('groups', 'groups.tsv'))},
        'experiment': {'folds': 3},
        'coordinate_ascent': {'restarts': 2},
    }
    for section, values in overrides.items():
        payload.setdefault(section, {}).update(values)
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(payload))
    return path


class TestPipeline:
    def test_toy_pipeline(self, tmp_path):
        config = toy_config(tmp_path)
        work = tmp_path / 'work'
        assert main(['pipeline', '--config', str(config), '--workdir', str(work)]) == 0

        lines = (work / 'features.baseline.txt').read_text().splitlines()
        assert lines[0].startswith('# erank config=')
        assert len(lines[1].split()) == 2 + 26
        assert (work / 'runs' / 'baseline.coordinate_ascent.run').exists()
        report = json.loads((work / 'eval' / 'baseline.coordinate_ascent.json').read_text())
        assert 0.0 <= report['summary']['ALL']['MAP'] <= 1.0
        weights = json.loads((work / 'reports' / 'weights.baseline.coordinate_ascent.json').read_text())
        assert sum(weights['distribution'].values()) == pytest.approx(100.0)
        comparison = json.loads((work / 'reports' / 'compare.coordinate_ascent.json').read_text())
        assert [row['system'] for row in comparison['groups']['ALL']['systems']] == ['baseline']
        assert (work / 'reports' / 'compare.coordinate_ascent.txt').exists()

    def test_runs_are_reproducible(self, tmp_path):
        config = toy_config(tmp_path)
        runs = []
        for name in ('a', 'b'):
            work = tmp_path / name
            assert main(['pipeline', '--config', str(config), '--workdir', str(work), '--threads', '2']) == 0
            runs.append((work / 'runs' / 'baseline.coordinate_ascent.run').read_bytes())
        assert runs[0] == runs[1]
        tag = runs[0].decode().split('\n')[0].split()[-1]
        assert tag.startswith('erank-baseline-coordinate_ascent-')

    def test_stages_one_by_one_with_entity_features(self, tmp_path):
        config = toy_config(tmp_path, transe={'dim': 8, 'epochs': 5})
        common = ['--config', str(config), '--workdir', str(tmp_path / 'work')]
        for stage in (['ingest'], ['index'], ['embed'], ['candidates'], ['features', '--variant', '+both'],
                      ['train', '--variant', '+both', '--trainer', 'ranksvm'],
                      ['rerank', '--variant', '+both', '--trainer', 'ranksvm'],
                      ['eval', '--variant', '+both', '--trainer', 'ranksvm']):
            assert main(stage + common) == 0, stage
        header = (tmp_path / 'work' / 'features.both.txt').read_text().splitlines()[1]
        assert header.split()[-2:] == ['elr', 'transe']


class TestExitCodes:
    def test_usage(self):
        assert main([]) == 1
        assert main(['frobnicate']) == 1
        assert main(['train', '--variant', '+magic']) == 1

    def test_missing_artifact(self, tmp_path, capsys):
        config = toy_config(tmp_path)
        assert main(['rerank', '--config', str(config), '--workdir', str(tmp_path / 'work')]) == 2
        assert '`erank features`' in capsys.readouterr().err

    def test_missing_input(self, tmp_path):
        config = toy_config(tmp_path)
        data = yaml.safe_load(config.read_text())
        data['paths']['triples'] = str(tmp_path / 'missing.tsv')
        config.write_text(yaml.safe_dump(data))
        assert main(['ingest', '--config', str(config), '--workdir', str(tmp_path / 'work')]) == 2

    def test_bad_config(self, tmp_path):
        config = toy_config(tmp_path, experiment={'variant': '+magic'})
        assert main(['ingest', '--config', str(config), '--workdir', str(tmp_path / 'work')]) == 3

    def test_malformed_input(self, tmp_path):
        bad = tmp_path / 'qrels.txt'
        bad.write_text('Q1 0 Harry_Potter relevant\n')
        config = toy_config(tmp_path, paths={'qrels': str(bad)})
        work = ['--config', str(config), '--workdir', str(tmp_path / 'work')]
        for stage in ('ingest', 'index', 'candidates'):
            assert main([stage] + work) == 0
        assert main(['features'] + work) == 2


class TestSyntheticKb:
    def test_entity_embeddings_beat_text_baseline(self, tmp_path):
        bundle = tmp_path / 'synthetic'
        assert main(['synth', '--out', str(bundle), '--workdir', str(tmp_path / 'logs')]) == 0
        common = ['--config', str(bundle / 'experiment_config.yaml'), '--threads', '4']
        for stage in ('ingest', 'index', 'embed', 'candidates'):
            assert main([stage] + common) == 0, stage

        scores = {}
        for variant, slug in (('baseline', 'baseline'), ('+TransE', 'transe')):
            for stage in ('features', 'train', 'rerank', 'eval'):
                args = [stage, '--variant', variant]
                if stage != 'features':
                    args += ['--trainer', 'coordinate_ascent']
                assert main(args + common) == 0, args
            report = json.loads((bundle / 'work' / 'eval' / f'{slug}.coordinate_ascent.json').read_text())
            scores[variant] = report['summary']['ALL']['MAP']
        assert scores['+TransE'] >= scores['baseline'] + 0.02
