"""
Configuration Manager
=====================
Handles YAML experiment configuration loading, validation, and environment variables

Features:
- YAML configuration loading over a complete set of defaults
- Environment variable substitution (``${VAR_NAME}``)
- Validation of sections, variant names and referenced input files
- Config hashing for artifact provenance
"""

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from core.errors import ConfigurationError, MissingInputError
from retrieval.corpus import FIELDS


DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "experiment_config.yaml"

VARIANTS = ('baseline', '+ELR', '+TransE', '+both')
TRAINERS = ('coordinate_ascent', 'ranksvm')

# keys that never change artifact contents
_UNHASHED_KEYS = (('system', 'threads'), ('system', 'log_level'), ('system', 'log_dir'),
                  ('paths', 'workdir'), ('paths', 'synthetic_dir'))


def _uniform_field_weights() -> Dict[str, float]:
    return {field: 0.2 for field in FIELDS}


class ConfigManager:
    """Manages experiment configuration with validation"""

    def __init__(self, config_path: Optional[Path] = None, required: bool = False):
        self.logger = logging.getLogger(__name__)
        self.config_path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
        self.required = required or config_path is not None
        self.config: Dict[str, Any] = {}
        self.load_config()

    @property
    def base_dir(self) -> Path:
        """Directory relative paths are resolved against"""
        return self.config_path.resolve().parent

    def load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file, merged over the defaults"""
        defaults = self._get_default_config()

        if not self.config_path.exists():
            if self.required:
                raise ConfigurationError(f"config file not found: {self.config_path}")
            self.logger.warning(f"Config file not found: {self.config_path}; using defaults")
            self.config = defaults
            return self.config

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                raw_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"cannot parse {self.config_path}: {e}") from e

        if not isinstance(raw_config, dict):
            raise ConfigurationError(f"{self.config_path} must contain a mapping at top level")

        self.config = self._merge(defaults, self._substitute_env_vars(raw_config))
        self.logger.info(f"Configuration loaded from {self.config_path}")
        return self.config

    def _substitute_env_vars(self, config: Any) -> Any:
        """Recursively substitute environment variables in config"""
        if isinstance(config, dict):
            return {k: self._substitute_env_vars(v) for k, v in config.items()}
        elif isinstance(config, list):
            return [self._substitute_env_vars(item) for item in config]
        elif isinstance(config, str):
            if config.startswith('${') and config.endswith('}'):
                var_name = config[2:-1]
                return os.environ.get(var_name, config)
            return config
        else:
            return config

    def _merge(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        merged = copy.deepcopy(base)
        for key, value in override.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = self._merge(merged[key], value)
            else:
                merged[key] = copy.deepcopy(value)
        return merged

    def _get_default_config(self) -> Dict[str, Any]:
        """Return default configuration"""
        return {
            'system': {
                'name': 'erank',
                'version': '1.0.0',
                'log_level': 'INFO',
                'log_dir': None,
                'threads': None,
            },
            'paths': {
                'triples': None,
                'mapping': None,
                'queries': None,
                'annotations': None,
                'qrels': None,
                'groups': None,
                'workdir': 'work',
                'synthetic_dir': 'synthetic',
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
            'index': {
                'window': 8,
            },
            'sdm': {
                'lambda_t': 0.8,
                'lambda_o': 0.1,
                'lambda_u': 0.1,
                'mu': 2500.0,
            },
            'fsdm': {
                'lambda_t': 0.8,
                'lambda_o': 0.1,
                'lambda_u': 0.1,
                'mu': {field: 2500.0 for field in FIELDS},
                'weights': {
                    'T': _uniform_field_weights(),
                    'O': _uniform_field_weights(),
                    'U': _uniform_field_weights(),
                },
            },
            'bm25': {
                'k1': 1.2,
                'b': 0.75,
            },
            'entity': {
                'mu_e': 100.0,
            },
            'transe': {
                'dim': 100,
                'margin': 1.0,
                'learning_rate': 0.001,
                'epochs': 1000,
                'negatives': 1,
                'norm': 'L2',
                'workers': 1,
            },
            'coordinate_ascent': {
                'restarts': 5,
                'max_passes': 25,
                'tolerance': 1e-4,
                'normalize': 'zscore',
            },
            'ranksvm': {
                'C': 1.0,
                'epochs': 100,
                'learning_rate': 0.01,
                'normalize': 'zscore',
            },
            'evaluation': {
                'cutoff': 100,
                'precision_k': [10, 20],
                'permutation_iterations': 100000,
                'exhaustive_limit': 20,
                'alpha': 0.05,
                'tie_epsilon': 1e-6,
            },
        }

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value using dot notation"""
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
                if value is None:
                    return default
            else:
                return default

        return value

    def set(self, key: str, value: Any):
        """Set configuration value using dot notation"""
        keys = key.split('.')
        config = self.config

        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                config[k] = {}
            config = config[k]

        config[keys[-1]] = value

    def resolve_path(self, key: str) -> Optional[Path]:
        """Resolve a path entry relative to the config file directory"""
        value = self.get(key)
        if value is None:
            return None
        path = Path(os.path.expanduser(str(value)))
        if not path.is_absolute():
            path = self.base_dir / path
        return path

    def save_config(self, path: Optional[Path] = None):
        """Save configuration to YAML file"""
        save_path = Path(path) if path else self.config_path
        save_path.parent.mkdir(parents=True, exist_ok=True)
        with open(save_path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(self.config, f, default_flow_style=False, sort_keys=False)
        self.logger.info(f"Configuration saved to {save_path}")

    def validate_config(self, required_paths=('triples', 'queries', 'qrels')) -> bool:
        """Validate configuration; raises ConfigurationError on the first violation"""
        required_sections = ['system', 'paths', 'experiment', 'index', 'sdm', 'fsdm',
                             'bm25', 'entity', 'transe', 'coordinate_ascent', 'ranksvm',
                             'evaluation']

        for section in required_sections:
            if not isinstance(self.config.get(section), dict):
                raise ConfigurationError(f"missing required config section: {section}")

        variant = self.get('experiment.variant')
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        for name in self.get('experiment.variants', []):
            if name not in VARIANTS:
                raise ConfigurationError(f"unknown variant {name!r} in experiment.variants")

        trainer = self.get('experiment.trainer')
        if trainer not in TRAINERS:
            raise ConfigurationError(f"unknown trainer {trainer!r}; expected one of {TRAINERS}")

        for name in required_paths:
            path = self.resolve_path(f'paths.{name}')
            if path is None:
                raise ConfigurationError(f"paths.{name} is not set")
            if not path.exists():
                raise MissingInputError(f"paths.{name}", path)
        for name in ('mapping', 'annotations', 'groups'):
            path = self.resolve_path(f'paths.{name}')
            if path is not None and not path.exists():
                raise MissingInputError(f"paths.{name}", path)

        self.logger.debug("Configuration validation passed")
        return True

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical config, excluding run-local knobs"""
        hashed = copy.deepcopy(self.config)
        for section, key in _UNHASHED_KEYS:
            hashed.get(section, {}).pop(key, None)
        canonical = json.dumps(hashed, sort_keys=True, separators=(',', ':'), default=str)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]
