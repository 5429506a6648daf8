"""
Run configuration.

Defaults follow the published training setup where it states one (nine rounds
of three epochs, SGD momentum 0.9 at lr 0.001, batch 128, delta 1,
alpha 2**-11). Precedence, lowest first: defaults, JSON file, --seed,
--set key=value overrides.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

from pwfn.bayes_weights import DEFAULT_ALPHA, DEFAULT_CUTOFF
from pwfn.clustering import DEFAULT_DELTA, FixingSchedule, default_schedule
from pwfn.codebook import DEFAULT_MAX_CENTERS, DEFAULT_PRECISION_B, DEFAULT_TOP_J, BaseSetConfig
from pwfn.errors import ConfigError
from pwfn.numerics import NetworkSpec

logger = logging.getLogger(__name__)

PRIOR_MODES = ('powers_of_two_prior', 'uniform_prior')
DATASET_KINDS = ('synthetic', 'csv')
# every center must survive the float32 checkpoint exactly
MAX_CHECKPOINT_PRECISION_B = 23


@dataclass
class DatasetSpec:
    kind: str = 'synthetic'
    # synthetic Gaussian blobs
    n_classes: int = 3
    n_features: int = 2
    n_train: int = 3000
    n_test: int = 1000
    class_separation: float = 3.0
    seed: int = 0
    # tabular file (CSV or Excel)
    path: Optional[str] = None
    label_column: str = 'label'
    normalization: str = 'standardize'
    test_fraction: float = 0.25

    def validate(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f'dataset.kind must be one of {DATASET_KINDS}, got {self.kind!r}')
        if self.kind == 'synthetic':
            if self.n_classes < 2 or self.n_features < 1:
                raise ConfigError('Synthetic dataset needs n_classes >= 2 and n_features >= 1')
            if self.n_train < 1 or self.n_test < 1:
                raise ConfigError('Synthetic dataset needs n_train >= 1 and n_test >= 1')
            if not self.class_separation >= 0:
                raise ConfigError(f'class_separation must be non-negative, got {self.class_separation}')
        else:
            if not self.path:
                raise ConfigError('dataset.path is required for a csv dataset')
            if self.normalization not in ('standardize', 'none'):
                raise ConfigError(f'Unknown normalization {self.normalization!r}')
            if not 0.0 < self.test_fraction < 1.0:
                raise ConfigError(f'test_fraction must lie in (0, 1), got {self.test_fraction}')
        return self


@dataclass
class RunConfig:
    network: NetworkSpec = field(default_factory=lambda: NetworkSpec((2, 16, 16, 3)))
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    rounds_T: int = 9
    epochs_per_round: int = 3
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 128
    alpha: float = DEFAULT_ALPHA
    delta0: float = DEFAULT_DELTA
    sigma_cutoff_S: float = DEFAULT_CUTOFF
    codebook_b: int = DEFAULT_PRECISION_B
    codebook_j: int = DEFAULT_TOP_J
    schedule: Optional[Tuple[float, ...]] = None
    seed: int = 0
    prior_mode: str = 'powers_of_two_prior'
    pretrain_epochs: int = 30
    pretrain_learning_rate: float = 0.01
    ensemble_samples: int = 20
    max_centers: int = DEFAULT_MAX_CENTERS
    deterministic_fixed: bool = False
    # the reweighted parabola is a variance; sigma is its square root
    prior_as_variance: bool = True

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = default_schedule(self.rounds_T)
        self.schedule = tuple(float(p) for p in self.schedule)

    def validate(self):
        self.dataset.validate()
        if self.rounds_T != len(self.schedule):
            raise ConfigError(f'rounds_T ({self.rounds_T}) does not match the schedule length '
                              f'({len(self.schedule)})')
        self.fixing_schedule()
        self.base_set()
        if self.codebook_b > MAX_CHECKPOINT_PRECISION_B:
            raise ConfigError(f'codebook_b must be <= {MAX_CHECKPOINT_PRECISION_B} so centers '
                              f'stay exact in 32-bit checkpoints, got {self.codebook_b}')
        if self.epochs_per_round < 0 or self.pretrain_epochs < 0:
            raise ConfigError('Epoch counts must be non-negative')
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if not self.learning_rate > 0 or not self.pretrain_learning_rate > 0:
            raise ConfigError('Learning rates must be positive')
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f'momentum must lie in [0, 1), got {self.momentum}')
        if not self.alpha >= 0:
            raise ConfigError(f'alpha must be non-negative, got {self.alpha}')
        if not self.delta0 > 0:
            raise ConfigError(f'delta0 must be positive, got {self.delta0}')
        if not self.sigma_cutoff_S > 0:
            raise ConfigError(f'sigma_cutoff_S must be positive, got {self.sigma_cutoff_S}')
        if self.prior_mode not in PRIOR_MODES:
            raise ConfigError(f'prior_mode must be one of {PRIOR_MODES}, got {self.prior_mode!r}')
        if self.ensemble_samples < 1:
            raise ConfigError(f'ensemble_samples must be >= 1, got {self.ensemble_samples}')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'seed must be a 64-bit unsigned integer, got {self.seed}')
        if self.dataset.kind == 'synthetic' and self.dataset.n_features != self.network.layer_dims[0]:
            raise ConfigError(f'Dataset has {self.dataset.n_features} features but the network '
                              f'expects {self.network.layer_dims[0]} inputs')
        if self.dataset.kind == 'synthetic' and self.dataset.n_classes != self.network.layer_dims[-1]:
            raise ConfigError(f'Dataset has {self.dataset.n_classes} classes but the network '
                              f'has {self.network.layer_dims[-1]} outputs')
        return self

    def fixing_schedule(self):
        return FixingSchedule(self.schedule, self.epochs_per_round)

    def base_set(self):
        return BaseSetConfig(self.codebook_b, self.codebook_j)

    @property
    def total_epochs(self):
        return self.rounds_T * self.epochs_per_round

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data['network'] = self.network.to_dict()
        data['dataset'] = {f.name: getattr(self.dataset, f.name) for f in fields(self.dataset)}
        data['schedule'] = list(self.schedule)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'Unknown config keys: {unknown}')
        if 'network' in data:
            network = data['network']
            data['network'] = network if isinstance(network, NetworkSpec) else NetworkSpec.from_dict(network)
        if 'dataset' in data:
            dataset = data['dataset']
            if not isinstance(dataset, DatasetSpec):
                dataset_known = {f.name for f in fields(DatasetSpec)}
                bad = sorted(set(dataset) - dataset_known)
                if bad:
                    raise ConfigError(f'Unknown dataset keys: {bad}')
                dataset = DatasetSpec(**dataset)
            data['dataset'] = dataset
        if 'schedule' in data and data['schedule'] is not None:
            data['schedule'] = tuple(data['schedule'])
        try:
            config = cls(**data)
        except (TypeError, ValueError) as e:
            raise ConfigError(f'Invalid config: {e}') from e
        return config.validate()


def parse_override(item):
    """'a.b=value' -> (['a', 'b'], value); values are JSON with a string fallback"""
    if '=' not in item:
        raise ConfigError(f'Override {item!r} is not of the form key=value')
    key, raw = item.split('=', 1)
    path = [part for part in key.strip().split('.') if part]
    if not path:
        raise ConfigError(f'Override {item!r} has an empty key')
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(data, overrides):
    for item in overrides:
        path, value = parse_override(item)
        target = data
        for part in path[:-1]:
            child = target.get(part)
            if not isinstance(child, dict):
                child = {}
                target[part] = child
            target = child
        target[path[-1]] = value
    return data


def load_run_config(path=None, seed=None, overrides=()):
    data = RunConfig().to_dict()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f'Config file not found: {path}')
        try:
            with open(path, encoding='utf-8') as f:
                file_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Config file {path} is not valid JSON: {e}') from e
        if not isinstance(file_data, dict):
            raise ConfigError(f'Config file {path} must hold a JSON object')
        for key, value in file_data.items():
            if key == 'dataset' and isinstance(value, dict):
                data['dataset'].update(value)
            elif key == 'network' and isinstance(value, dict):
                data['network'].update(value)
            else:
                data[key] = value
        if 'rounds_T' in file_data and 'schedule' not in file_data:
            data['schedule'] = None
    if seed is not None:
        data['seed'] = seed
    override_keys = [parse_override(item)[0][0] for item in overrides]
    apply_overrides(data, overrides)
    if 'rounds_T' in override_keys and 'schedule' not in override_keys:
        data['schedule'] = None
    config = RunConfig.from_dict(data)
    logger.info(f'Config loaded (file={path}, seed={config.seed}, {len(overrides)} overrides)')
    return config
