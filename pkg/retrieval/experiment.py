#!/usr/bin/env python3
"""
Experiment Configuration
========================

Typed view over the YAML experiment bundle: resolved input paths, the variant
(which entity features are enabled), trainer settings and all module parameter
blocks. Also defines artifact naming inside the work directory.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from core.config_manager import TRAINERS, VARIANTS, ConfigManager
from core.errors import ConfigurationError
from core.utils import default_thread_count
from retrieval.corpus import FIELDS
from retrieval.textrank import BASELINE_FEATURES, FeatureConfig, FsdmParams, SdmParams
from retrieval.transe import TransEConfig

VARIANT_SLUGS = {'baseline': 'baseline', '+ELR': 'elr', '+TransE': 'transe', '+both': 'both'}
VARIANT_ENTITY_FEATURES = {
    'baseline': (False, False),
    '+ELR': (True, False),
    '+TransE': (False, True),
    '+both': (True, True),
}
INPUT_PATHS = ('triples', 'mapping', 'queries', 'annotations', 'qrels', 'groups')


@dataclass
class ExperimentConfig:
    paths: Dict[str, Optional[Path]]
    workdir: Path
    config_hash: str
    variant: str = 'baseline'
    trainer: str = 'coordinate_ascent'
    seed: int = 42
    folds: int = 5
    candidates_k: int = 100
    threads: int = 1
    sdm: SdmParams = field(default_factory=SdmParams)
    fsdm: FsdmParams = field(default_factory=FsdmParams)
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    mu_e: float = 100.0
    transe: TransEConfig = field(default_factory=TransEConfig)
    coordinate_ascent: Dict = field(default_factory=dict)
    ranksvm: Dict = field(default_factory=dict)
    evaluation: Dict = field(default_factory=dict)
    variants: List[str] = field(default_factory=lambda: ['baseline', '+ELR', '+TransE'])
    trainers: List[str] = field(default_factory=lambda: list(TRAINERS))

    def __post_init__(self):
        for name in [self.variant] + list(self.variants):
            if name not in VARIANTS:
                raise ConfigurationError(f"unknown variant {name!r}; expected one of {VARIANTS}")
        for name in [self.trainer] + list(self.trainers):
            if name not in TRAINERS:
                raise ConfigurationError(f"unknown trainer {name!r}; expected one of {TRAINERS}")
        if self.candidates_k < 1:
            raise ConfigurationError(f"experiment.candidates_k must be >= 1, got {self.candidates_k}")

    @property
    def window(self) -> int:
        return self.sdm.window

    @classmethod
    def from_manager(cls, manager: ConfigManager) -> 'ExperimentConfig':
        get = manager.get
        window = int(get('index.window', 8))
        sdm = SdmParams(lambda_t=float(get('sdm.lambda_t', 0.8)), lambda_o=float(get('sdm.lambda_o', 0.1)),
                        lambda_u=float(get('sdm.lambda_u', 0.1)), mu=float(get('sdm.mu', 2500.0)),
                        window=window)
        fsdm_mu = get('fsdm.mu', 2500.0)
        if not isinstance(fsdm_mu, dict):
            fsdm_mu = {f: fsdm_mu for f in FIELDS}
        fsdm = FsdmParams(
            weights={x: {f: float(w) for f, w in get(f'fsdm.weights.{x}', {}).items()} for x in ('T', 'O', 'U')},
            mu={f: float(v) for f, v in fsdm_mu.items()},
            lambda_t=float(get('fsdm.lambda_t', 0.8)), lambda_o=float(get('fsdm.lambda_o', 0.1)),
            lambda_u=float(get('fsdm.lambda_u', 0.1)),
        )
        seed = int(get('experiment.seed', 42))
        transe = TransEConfig(
            dim=int(get('transe.dim', 100)), margin=float(get('transe.margin', 1.0)),
            learning_rate=float(get('transe.learning_rate', 0.001)), epochs=int(get('transe.epochs', 1000)),
            negatives=int(get('transe.negatives', 1)), norm=str(get('transe.norm', 'L2')),
            seed=seed, workers=int(get('transe.workers', 1)),
        )
        threads = get('system.threads') or default_thread_count()
        workdir = manager.resolve_path('paths.workdir') or manager.base_dir / 'work'

        return cls(
            paths={name: manager.resolve_path(f'paths.{name}') for name in INPUT_PATHS},
            workdir=workdir,
            config_hash=manager.config_hash(),
            variant=get('experiment.variant', 'baseline'),
            trainer=get('experiment.trainer', 'coordinate_ascent'),
            seed=seed,
            folds=int(get('experiment.folds', 5)),
            candidates_k=int(get('experiment.candidates_k', 100)),
            threads=int(threads),
            sdm=sdm,
            fsdm=fsdm,
            bm25_k1=float(get('bm25.k1', 1.2)),
            bm25_b=float(get('bm25.b', 0.75)),
            mu_e=float(get('entity.mu_e', 100.0)),
            transe=transe,
            coordinate_ascent=dict(get('coordinate_ascent', {})),
            ranksvm=dict(get('ranksvm', {})),
            evaluation=dict(get('evaluation', {})),
            variants=list(get('experiment.variants', ['baseline', '+ELR', '+TransE'])),
            trainers=list(get('experiment.trainers', list(TRAINERS))),
        )

    # -- variants ------------------------------------------------------------

    @staticmethod
    def slug(variant: str) -> str:
        return VARIANT_SLUGS[variant]

    @staticmethod
    def needs_embeddings(variant: str) -> bool:
        return VARIANT_ENTITY_FEATURES[variant][1]

    @staticmethod
    def feature_length(variant: str) -> int:
        return len(BASELINE_FEATURES) + sum(VARIANT_ENTITY_FEATURES[variant])

    def feature_config(self, variant: Optional[str] = None) -> FeatureConfig:
        include_elr, include_transe = VARIANT_ENTITY_FEATURES[variant or self.variant]
        return FeatureConfig(sdm=self.sdm, fsdm=self.fsdm, k1=self.bm25_k1, b=self.bm25_b,
                             include_elr=include_elr, include_transe=include_transe, mu_e=self.mu_e)

    def run_tag(self, variant: str, trainer: str) -> str:
        return f"erank-{self.slug(variant)}-{trainer}-{self.config_hash}"

    def trainer_params(self, trainer: str) -> Dict:
        section = self.coordinate_ascent if trainer == 'coordinate_ascent' else self.ranksvm
        params = dict(section)
        if trainer == 'coordinate_ascent' and 'cutoff' not in params:
            params['cutoff'] = int(self.evaluation.get('cutoff', 100))
        return params

    # -- artifacts -----------------------------------------------------------

    def artifact(self, name: str) -> Path:
        return self.workdir / name

    @property
    def corpus_path(self) -> Path:
        return self.artifact('corpus.jsonl')

    @property
    def index_path(self) -> Path:
        return self.artifact('index.json.gz')

    @property
    def entity_embeddings_path(self) -> Path:
        return self.artifact('entity_embeddings.txt')

    @property
    def relation_embeddings_path(self) -> Path:
        return self.artifact('relation_embeddings.txt')

    @property
    def embeddings_meta_path(self) -> Path:
        return self.artifact('embeddings.meta.json')

    @property
    def candidates_path(self) -> Path:
        return self.artifact('candidates.run')

    def features_path(self, variant: str) -> Path:
        return self.artifact(f'features.{self.slug(variant)}.txt')

    def model_path(self, variant: str, trainer: str, fold: int) -> Path:
        return self.artifact(f'models/{self.slug(variant)}.{trainer}.fold{fold}.yaml')

    @property
    def folds_path(self) -> Path:
        return self.artifact('models/folds.yaml')

    def run_path(self, variant: str, trainer: str) -> Path:
        return self.artifact(f'runs/{self.slug(variant)}.{trainer}.run')

    def eval_path(self, variant: str, trainer: str) -> Path:
        return self.artifact(f'eval/{self.slug(variant)}.{trainer}.json')

    def compare_paths(self, trainer: str):
        return (self.artifact(f'reports/compare.{trainer}.txt'),
                self.artifact(f'reports/compare.{trainer}.json'))

    def weights_paths(self, variant: str, trainer: str):
        stem = f'reports/weights.{self.slug(variant)}.{trainer}'
        return self.artifact(stem + '.txt'), self.artifact(stem + '.json')
