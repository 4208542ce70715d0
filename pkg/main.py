#!/usr/bin/env python3
"""
erank - Entity Retrieval Pipeline
=================================

Ranks knowledge-base entities for free-text queries: triples are ingested
into five-field entity documents, indexed, scored with fielded text-match
features (plus optional entity-linking and TransE features), fused by a
learned linear model under k-fold cross-validation and evaluated.

Every stage reads and writes plain files in the work directory, so any stage
can be inspected or rerun on its own.

Usage:
    python main.py --help
    python main.py synth --out data/synthetic
    python main.py pipeline --config config/experiment_config.yaml
    python main.py experiment --config data/synthetic/experiment_config.yaml
    python main.py eval --variant +TransE --trainer ranksvm
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from core.config_manager import TRAINERS, VARIANTS, ConfigManager
from core.errors import ErankError, MissingArtifactError, UsageError
from core.logger import MetricsLogger, attach_module_loggers, setup_logger
from core.utils import Timer, format_timestamp, get_system_info, parallel_map, write_text_atomic
from retrieval.corpus import Corpus, FieldMapping, ingest_file, read_triples
from retrieval.entmatch import EmbeddingStore, load_queries
from retrieval.evalkit import (ALL_GROUP, average_weight_distribution, compare_systems,
                               evaluate_run, load_qrels, load_query_groups, read_run,
                               render_table, write_report, write_run)
from retrieval.experiment import ExperimentConfig
from retrieval.index import FieldedIndex, build_index
from retrieval.ltr import FoldPlan, LinearModel, make_folds, make_trainer, rerank_folds, train_folds
from retrieval.synthetic import build_synthetic_kb
from retrieval.textrank import (extract_features, feature_groups, generate_candidates,
                                read_candidates, read_feature_file, write_candidates,
                                write_feature_file)
from retrieval.transe import TripleSet, train as train_transe


class ErankArgumentParser(argparse.ArgumentParser):
    """Usage errors become UsageError (exit 1) instead of argparse's exit 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class EntityRankSystem:
    """
    Orchestrates the ranking pipeline stages

    Loads the experiment configuration, applies command-line overrides and
    runs one stage per subcommand.
    """

    def __init__(self, config_path: Path = None, seed: int = None, threads: int = None,
                 workdir: Path = None, verbose: bool = False):
        self.manager = ConfigManager(config_path)
        if seed is not None:
            self.manager.set('experiment.seed', int(seed))
        if threads is not None:
            self.manager.set('system.threads', int(threads))
        if workdir is not None:
            self.manager.set('paths.workdir', str(Path(workdir).resolve()))

        level = 'DEBUG' if verbose else self.manager.get('system.log_level', 'INFO')
        log_dir = self.manager.resolve_path('system.log_dir')
        if log_dir is None:
            log_dir = (self.manager.resolve_path('paths.workdir') or self.manager.base_dir / 'work') / 'logs'
        self.logger = setup_logger('erank', log_dir, level)
        attach_module_loggers(self.logger)
        self.metrics = MetricsLogger(self.logger)
        self._config: Optional[ExperimentConfig] = None

        self.logger.info("=" * 60)
        self.logger.info("ERANK ENTITY RETRIEVAL PIPELINE")
        self.logger.info(f"Started: {format_timestamp()}")
        self.logger.info(f"Config: {self.manager.config_path} (hash {self.manager.config_hash()})")
        self.logger.debug(f"System: {get_system_info()}")
        self.logger.info("=" * 60)

    @property
    def config(self) -> ExperimentConfig:
        if self._config is None:
            self.manager.validate_config()
            self._config = ExperimentConfig.from_manager(self.manager)
        return self._config

    def print_header(self, title: str):
        """Print formatted section header"""
        print("\n" + "=" * 60)
        print(f" {title}")
        print("=" * 60)

    def _timed(self, stage: str) -> Timer:
        return Timer(stage, self.logger)

    def _record_time(self, stage: str, timer: Timer):
        self.metrics.record_metric(f"{stage}_seconds", round(timer.elapsed, 3), "s")

    @staticmethod
    def _require(path: Path, prerequisite: str) -> Path:
        if not Path(path).exists():
            raise MissingArtifactError(path, prerequisite)
        return path

    # -- stages ------------------------------------------------------------

    def run_ingest(self) -> Corpus:
        cfg = self.config
        mapping_path = cfg.paths.get('mapping')
        mapping = FieldMapping.load(mapping_path) if mapping_path else FieldMapping.default_dbpedia()
        with self._timed('ingest') as timer:
            corpus, report = ingest_file(cfg.paths['triples'], mapping)
            corpus.save(cfg.corpus_path, header=f"erank config={cfg.config_hash}")
        self._record_time('ingest', timer)
        print(f"ingest: {report.triples} triples -> {report.entities} entities "
              f"({report.malformed} malformed) -> {cfg.corpus_path}")
        return corpus

    def run_index(self) -> FieldedIndex:
        cfg = self.config
        corpus = Corpus.load(self._require(cfg.corpus_path, 'ingest'))
        with self._timed('index') as timer:
            index = build_index(corpus, cfg.window)
            index.save(cfg.index_path, config_hash=cfg.config_hash)
        self._record_time('index', timer)
        print(f"index: {len(index)} entities (window {cfg.window}) -> {cfg.index_path}")
        return index

    def run_embed(self) -> EmbeddingStore:
        cfg = self.config
        triples = TripleSet.from_triples(read_triples(cfg.paths['triples']))
        losses: List[float] = []

        def report_epoch(epoch: int, mean_loss: float):
            losses.append(mean_loss)
            print(f"epoch {epoch} mean_loss {mean_loss:.6f}")

        with self._timed('embed') as timer:
            store = train_transe(triples, cfg.transe, on_epoch=report_epoch)
            store.save(cfg.entity_embeddings_path, cfg.relation_embeddings_path)
        self._record_time('embed', timer)
        if losses:
            self.metrics.record_metric('transe_final_mean_loss', losses[-1])

        meta = {
            'config_hash': cfg.config_hash,
            'dim': cfg.transe.dim,
            'epochs': cfg.transe.epochs,
            'norm': cfg.transe.norm,
            'seed': cfg.transe.seed,
            'triples': len(triples),
            'entities': len(triples.entities),
            'relations': len(triples.relations),
            'final_mean_loss': losses[-1] if losses else None,
        }
        write_text_atomic(cfg.embeddings_meta_path, json.dumps(meta, indent=2, sort_keys=True) + '\n')

        if triples.entities:
            anchor = triples.entities[0]
            neighbours = ', '.join(f"{e} ({s:.3f})" for e, s in store.nearest(anchor, 5))
            self.logger.info(f"Nearest neighbours of {anchor}: {neighbours}")
        print(f"embed: {len(triples.entities)} entity vectors (dim {store.dim}) -> "
              f"{cfg.entity_embeddings_path}")
        return store

    def _load_index(self) -> FieldedIndex:
        return FieldedIndex.load(self._require(self.config.index_path, 'index'))

    def _queries(self):
        cfg = self.config
        return load_queries(cfg.paths['queries'], cfg.paths.get('annotations'))

    def run_candidates(self) -> Dict:
        cfg = self.config
        index = self._load_index()
        queries = [q for q in self._queries() if self._has_tokens(q)]

        with self._timed('candidates') as timer:
            ranked = parallel_map(
                lambda q: (q.id, generate_candidates(index, q.tokens, cfg.fsdm, cfg.candidates_k)),
                queries, cfg.threads)
        self._record_time('candidates', timer)

        candidates = {}
        for qid, ranking in ranked:
            if not ranking:
                self.logger.warning(f"Query {qid} matches no entity; no candidates")
                continue
            candidates[qid] = ranking
        write_candidates(candidates, cfg.candidates_path, tag=f"erank-fsdm-{cfg.config_hash}")
        print(f"candidates: {len(candidates)} queries, top-{cfg.candidates_k} -> {cfg.candidates_path}")
        return candidates

    def _has_tokens(self, query) -> bool:
        if not query.tokens:
            self.logger.warning(f"Query {query.id} has no tokens; skipped")
            return False
        return True

    def run_features(self, variant: str) -> Path:
        cfg = self.config
        index = self._load_index()
        candidates = read_candidates(self._require(cfg.candidates_path, 'candidates'))
        queries = {q.id: q for q in self._queries()}
        qrels = load_qrels(cfg.paths['qrels'])
        feature_config = cfg.feature_config(variant)

        store = None
        if cfg.needs_embeddings(variant):
            store = EmbeddingStore.load(self._require(cfg.entity_embeddings_path, 'embed'),
                                        cfg.relation_embeddings_path)

        def query_rows(qid: str):
            query = queries[qid]
            judged = qrels.get(qid, {})
            return [extract_features(index, query, entity_id, feature_config, store=store,
                                     label=judged.get(entity_id, 0))
                    for entity_id, _ in candidates[qid]]

        known = sorted(qid for qid in candidates if qid in queries)
        for qid in sorted(set(candidates) - set(queries)):
            self.logger.warning(f"Candidates for unknown query {qid} ignored")

        with self._timed('features') as timer:
            rows = [row for block in parallel_map(query_rows, known, cfg.threads) for row in block]
        self._record_time('features', timer)

        names = feature_config.feature_names
        path = write_feature_file(rows, names, cfg.features_path(variant), cfg.config_hash)
        print(f"features: {len(rows)} rows x {len(names)} features ({variant}) -> {path}")
        return path

    def _fold_plan(self, rows) -> FoldPlan:
        cfg = self.config
        query_ids = sorted({r.query_id for r in rows})
        plan = make_folds(query_ids, cfg.folds, cfg.seed)
        plan.save(cfg.folds_path, cfg.config_hash)
        return plan

    def run_train(self, variant: str, trainer_name: str) -> List[LinearModel]:
        cfg = self.config
        names, rows = read_feature_file(self._require(cfg.features_path(variant), 'features'))
        qrels = load_qrels(cfg.paths['qrels'])
        plan = self._fold_plan(rows)
        trainer = make_trainer(trainer_name, names, cfg.trainer_params(trainer_name), cfg.seed)

        with self._timed(f'train {trainer_name}') as timer:
            models = train_folds(rows, qrels, plan, trainer, workers=cfg.threads)
        self._record_time(f'train_{trainer_name}', timer)

        for fold, model in enumerate(models):
            model.save(cfg.model_path(variant, trainer_name, fold), cfg.config_hash)
        print(f"train: {len(models)} {trainer_name} fold models ({variant}) -> "
              f"{cfg.model_path(variant, trainer_name, 0).parent}")
        return models

    def _load_models(self, variant: str, trainer_name: str, k: int) -> List[LinearModel]:
        cfg = self.config
        return [LinearModel.load(self._require(cfg.model_path(variant, trainer_name, fold), 'train'))
                for fold in range(k)]

    def run_rerank(self, variant: str, trainer_name: str) -> Path:
        cfg = self.config
        _, rows = read_feature_file(self._require(cfg.features_path(variant), 'features'))
        plan = FoldPlan.load(self._require(cfg.folds_path, 'train'))
        models = self._load_models(variant, trainer_name, plan.k)
        run = rerank_folds(models, rows, plan)
        path = write_run(run, cfg.run_path(variant, trainer_name), tag=cfg.run_tag(variant, trainer_name))
        print(f"rerank: {len(run)} queries ({variant}, {trainer_name}) -> {path}")
        return path

    def _metrics(self) -> List[str]:
        evaluation = self.config.evaluation
        return ['MAP'] + [f"P@{k}" for k in evaluation.get('precision_k', [10, 20])]

    def run_eval(self, variant: str, trainer_name: str) -> Dict:
        cfg = self.config
        run = read_run(self._require(cfg.run_path(variant, trainer_name), 'rerank'))
        qrels = load_qrels(cfg.paths['qrels'])
        groups = load_query_groups(cfg.paths.get('groups'))
        metrics = self._metrics()
        report = evaluate_run(run, qrels, groups, metrics, int(cfg.evaluation.get('cutoff', 100)))

        payload = dict(report.to_dict(), config_hash=cfg.config_hash, variant=variant, trainer=trainer_name)
        path = write_text_atomic(cfg.eval_path(variant, trainer_name),
                                 json.dumps(payload, indent=2, sort_keys=True) + '\n')
        for metric in metrics:
            self.metrics.record_metric(f"{cfg.slug(variant)}_{trainer_name}_{metric}",
                                       round(report.summary[ALL_GROUP][metric], 6))

        print(f"eval ({variant}, {trainer_name}):")
        for group, summary in report.summary.items():
            cells = '  '.join(f"{m} {summary[m]:.4f}" for m in metrics)
            print(f"  {group:<14} ({report.counts[group]:>3} queries)  {cells}")
        print(f"  -> {path}")
        return payload

    def run_compare(self, trainer_names: Sequence[str], variants: Sequence[str] = None) -> List[Path]:
        cfg = self.config
        variants = list(variants or cfg.variants)
        qrels = load_qrels(cfg.paths['qrels'])
        groups = load_query_groups(cfg.paths.get('groups'))
        evaluation = cfg.evaluation
        written = []
        for trainer_name in trainer_names:
            systems = [(variant, read_run(self._require(cfg.run_path(variant, trainer_name), 'rerank')))
                       for variant in variants]
            report = compare_systems(
                systems, qrels, groups, self._metrics(),
                cutoff=int(evaluation.get('cutoff', 100)),
                iterations=int(evaluation.get('permutation_iterations', 100000)),
                seed=cfg.seed,
                exhaustive_limit=int(evaluation.get('exhaustive_limit', 20)),
                alpha=float(evaluation.get('alpha', 0.05)),
                tie_epsilon=float(evaluation.get('tie_epsilon', 1e-6)),
            )
            text_path, json_path = cfg.compare_paths(trainer_name)
            write_report(report, text_path, json_path, cfg.config_hash)
            self.print_header(f"COMPARISON ({trainer_name})")
            print(render_table(report), end='')
            written += [text_path, json_path]
        return written

    def run_weights(self, variant: str, trainer_name: str) -> Dict[str, float]:
        cfg = self.config
        plan = FoldPlan.load(self._require(cfg.folds_path, 'train'))
        models = self._load_models(variant, trainer_name, plan.k)
        distribution = average_weight_distribution(models, feature_groups(models[0].feature_names))

        text_path, json_path = cfg.weights_paths(variant, trainer_name)
        lines = [f"# erank config={cfg.config_hash}",
                 f"# weight distribution ({variant}, {trainer_name}, mean over {plan.k} folds)"]
        lines += [f"{group}\t{share:.2f}%" for group, share in distribution.items()]
        write_text_atomic(text_path, '\n'.join(lines) + '\n')
        write_text_atomic(json_path, json.dumps({'config_hash': cfg.config_hash, 'variant': variant,
                                                 'trainer': trainer_name, 'folds': plan.k,
                                                 'distribution': distribution},
                                                indent=2, sort_keys=True) + '\n')
        print(f"weights ({variant}, {trainer_name}): " +
              ', '.join(f"{g} {s:.2f}%" for g, s in distribution.items()))
        return distribution

    def run_synth(self, out_dir: Optional[Path] = None) -> Path:
        target = out_dir or self.manager.resolve_path('paths.synthetic_dir')
        bundle = build_synthetic_kb(target, seed=int(self.manager.get('experiment.seed', 42)))
        print(f"synth: {bundle.entities} entities, {bundle.triples} triples, {bundle.queries} queries "
              f"-> {bundle.root}")
        print(f"  config: {bundle.config_path}")
        return bundle.config_path

    # -- compositions --------------------------------------------------------

    def _reranked_variants(self, variant: str, trainer_name: str) -> List[str]:
        """Configured variants that already have a run for this trainer, plus ``variant``"""
        cfg = self.config
        available = [v for v in cfg.variants if v == variant or cfg.run_path(v, trainer_name).exists()]
        return available if variant in available else [variant] + available

    def run_pipeline(self, variant: str, trainer_name: str):
        self.print_header(f"PIPELINE ({variant}, {trainer_name})")
        self.run_ingest()
        self.run_index()
        if self.config.needs_embeddings(variant):
            self.run_embed()
        self.run_candidates()
        self.run_features(variant)
        self.run_train(variant, trainer_name)
        self.run_rerank(variant, trainer_name)
        self.run_eval(variant, trainer_name)
        self.run_weights(variant, trainer_name)
        self.run_compare([trainer_name], self._reranked_variants(variant, trainer_name))

    def run_experiment(self, trainer_names: Sequence[str]):
        cfg = self.config
        self.print_header(f"EXPERIMENT ({', '.join(cfg.variants)})")
        self.run_ingest()
        self.run_index()
        if any(cfg.needs_embeddings(v) for v in cfg.variants):
            self.run_embed()
        self.run_candidates()
        for variant in cfg.variants:
            self.run_features(variant)
            for trainer_name in trainer_names:
                self.run_train(variant, trainer_name)
                self.run_rerank(variant, trainer_name)
                self.run_eval(variant, trainer_name)
                self.run_weights(variant, trainer_name)
        self.run_compare(trainer_names)

    def shutdown(self):
        """Close log handlers so files in the work directory are released"""
        for name in ('erank', 'retrieval', 'core'):
            log = logging.getLogger(name)
            for handler in list(log.handlers):
                handler.close()
                log.removeHandler(handler)


def create_parser() -> argparse.ArgumentParser:
    """Create argument parser"""
    # SUPPRESS keeps a subcommand default from masking a flag given before the subcommand
    common = ErankArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', type=Path, help='Experiment configuration file')
    common.add_argument('--seed', type=int, help='Override experiment.seed')
    common.add_argument('--threads', type=int, help='Override system.threads')
    common.add_argument('--workdir', type=Path, help='Override paths.workdir')
    common.add_argument('--verbose', '-v', action='store_true', help='Debug logging')

    parser = ErankArgumentParser(
        prog='erank',
        description="Entity retrieval with fielded text features, entity embeddings and learning to rank",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
        epilog="""
Examples (`erank` after `pip install -e .`, otherwise `python main.py`):
  erank synth --out data/synthetic          # Write the synthetic KB bundle
  erank pipeline                            # All stages for the configured variant
  erank experiment --config data/synthetic/experiment_config.yaml
  erank features --variant +ELR             # One stage
  erank compare --trainer ranksvm           # Baseline vs variants table

Exit codes: 0 success, 1 usage, 2 data error, 3 contract violation
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='Stage to execute')

    def add(name: str, help_text: str, variant: bool = False, trainer: bool = False):
        sub = subparsers.add_parser(name, help=help_text, parents=[common])
        if variant:
            sub.add_argument('--variant', choices=VARIANTS, help='Override experiment.variant')
        if trainer:
            sub.add_argument('--trainer', choices=TRAINERS, help='Override experiment.trainer')
        return sub

    add('ingest', 'Triples -> fielded entity documents')
    add('index', 'Entity documents -> positional fielded index')
    add('embed', 'Train TransE entity embeddings')
    add('candidates', 'FSDM first-pass retrieval (top-k per query)')
    add('features', 'Feature rows for every candidate', variant=True)
    add('train', 'Cross-validated LTR fold models', variant=True, trainer=True)
    add('rerank', 'Held-out rerank with the fold models', variant=True, trainer=True)
    add('eval', 'MAP / P@k over all queries and groups', variant=True, trainer=True)
    add('compare', 'Compare the configured variants', trainer=True)
    add('weights', 'Feature-group weight distribution', variant=True, trainer=True)
    add('pipeline', 'ingest .. weights for one variant', variant=True, trainer=True)
    add('experiment', 'All configured variants and trainers, then compare', trainer=True)
    synth = add('synth', 'Write the synthetic knowledge-base bundle')
    synth.add_argument('--out', type=Path, help='Output directory (default paths.synthetic_dir)')

    return parser


def dispatch(system: EntityRankSystem, args: argparse.Namespace):
    if args.command == 'synth':
        return system.run_synth(args.out)

    cfg = system.config
    variant = getattr(args, 'variant', None) or cfg.variant
    trainer = getattr(args, 'trainer', None) or cfg.trainer

    if args.command == 'ingest':
        system.run_ingest()
    elif args.command == 'index':
        system.run_index()
    elif args.command == 'embed':
        system.run_embed()
    elif args.command == 'candidates':
        system.run_candidates()
    elif args.command == 'features':
        system.run_features(variant)
    elif args.command == 'train':
        system.run_train(variant, trainer)
    elif args.command == 'rerank':
        system.run_rerank(variant, trainer)
    elif args.command == 'eval':
        system.run_eval(variant, trainer)
    elif args.command == 'compare':
        system.run_compare([args.trainer] if args.trainer else cfg.trainers)
    elif args.command == 'weights':
        system.run_weights(variant, trainer)
    elif args.command == 'pipeline':
        system.run_pipeline(variant, trainer)
    elif args.command == 'experiment':
        system.run_experiment([args.trainer] if args.trainer else cfg.trainers)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    if not args.command:
        parser.print_help()
        return UsageError.exit_code

    system = None
    try:
        system = EntityRankSystem(getattr(args, 'config', None), seed=getattr(args, 'seed', None),
                                  threads=getattr(args, 'threads', None),
                                  workdir=getattr(args, 'workdir', None),
                                  verbose=getattr(args, 'verbose', False))
        dispatch(system, args)
        return 0
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return 1
    except ErankError as e:
        if system is not None:
            system.logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        if system is not None:
            system.logger.error(f"Unexpected error: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 3
    finally:
        if system is not None:
            system.shutdown()


if __name__ == "__main__":
    sys.exit(main())
