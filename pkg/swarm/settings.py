"""Experiment configuration: one JSON document with the sections
swarm, dynamics, model, data, coordinator and seeds. Every section and key is
optional; missing values fall back to the defaults in utils.constants.
"""
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import itertools
import json
import logging

import numpy as np

from .core import Dynamic, Dynamic2Form, DynamicsConfig, RMode, default_weight_matrix
from .data import SELECTION_METHODS
from .models import MODEL_REGISTRY, SequenceArch, SequenceModelDims
from .utils import constants
from .worker import EXCHANGE_GRADIENTS, WorkerSettings

logger = logging.getLogger('CollaborativeSwarm')

# Models that train on the synthetic sequence data
SEQUENCE_MODELS = ('transformer', 'rnn', 'lstm', 'gru', 'bilstm', 'mlp')
BENCHMARK_MODELS = ('sphere', 'rosenbrock', 'rastrigin')


class ConfigError(ValueError):
    """Invalid configuration value, tagged with its dotted key"""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


@dataclass
class SwarmSection:
    num_particles: int = constants.PARTICLES_PER_GROUP
    epochs: int = constants.EPOCHS
    batch_size: int = constants.BATCH_SIZE
    learning_rates: Optional[List[float]] = None
    resample_wild_learning_rate: bool = False
    exchange_gradient: str = 'full'
    stochastic_layers: bool = True


@dataclass
class DynamicsSection:
    dynamics: List[str] = field(default_factory=lambda: list(constants.DYNAMIC_NAMES))
    c1: float = constants.C1
    c2: float = constants.C2
    c: float = constants.DYNAMIC2_C
    beta: float = constants.BETA
    k: Optional[int] = None
    warmup_epochs: int = constants.WARMUP_EPOCHS
    r_mode: str = RMode.SCALAR.value
    dynamic2_form: str = Dynamic2Form.NORMALIZED.value
    weights: Optional[List[List[float]]] = None


@dataclass
class ModelSection:
    names: List[str] = field(default_factory=lambda: ['rastrigin'])
    params: Dict[str, Dict[str, Any]] = field(default_factory=dict)


@dataclass
class DataSection:
    num_classes: int = 4
    samples_per_class: int = 70
    min_len: int = 12
    max_len: int = 24
    feature_dim: int = 8
    noise_sigma: float = 0.1
    train_count: int = 200
    frames: int = 16
    max_seq_len: Optional[int] = None
    selection: str = 'shadow'
    augment_copies: int = 0
    seed: int = 0
    path: Optional[str] = None


@dataclass
class SweepSection:
    """Axes crossed with the model x dynamic x seed grid; empty axes are not swept"""
    selection: List[str] = field(default_factory=list)
    max_seq_len: List[int] = field(default_factory=list)
    frames: List[int] = field(default_factory=list)
    num_heads: List[int] = field(default_factory=list)
    dense_units: List[int] = field(default_factory=list)

    def axes(self) -> List[Tuple[str, List[Any]]]:
        return [(f.name, list(getattr(self, f.name))) for f in fields(self) if getattr(self, f.name)]


@dataclass
class CoordinatorSection:
    timeout: float = constants.COORDINATOR_TIMEOUT
    listen: str = constants.DEFAULT_LISTEN
    fsync: bool = False


SECTIONS = {
    'swarm': SwarmSection,
    'dynamics': DynamicsSection,
    'model': ModelSection,
    'data': DataSection,
    'coordinator': CoordinatorSection,
    'sweep': SweepSection,
}

SWEEP_DATA_KEYS = ('selection', 'max_seq_len', 'frames')


def variant_label(point: Dict[str, Any]) -> str:
    """Directory-safe name of a sweep point, e.g. selection-stride_frames-8"""
    return '_'.join(f"{name}-{value}" for name, value in point.items())


@dataclass
class Variant:
    label: str
    point: Dict[str, Any]
    config: 'ExperimentConfig'


def _build_section(name: str, raw: Any):
    cls = SECTIONS[name]
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(name, f"expected an object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    section = cls(**raw)
    defaults = cls()
    for f in fields(cls):
        value, default = getattr(section, f.name), getattr(defaults, f.name)
        if default is None or value is None:
            continue
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            raise ConfigError(f"{name}.{f.name}", f"expected {type(default).__name__}, got {value!r}")
    return section


@dataclass
class ExperimentConfig:
    swarm: SwarmSection = field(default_factory=SwarmSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    coordinator: CoordinatorSection = field(default_factory=CoordinatorSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    seeds: List[int] = field(default_factory=lambda: [0])

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'ExperimentConfig':
        if not isinstance(raw, dict):
            raise ConfigError('<root>', "configuration must be a JSON object")
        for key in raw:
            if key not in SECTIONS and key != 'seeds':
                raise ConfigError(key, "unknown section")
        seeds = raw.get('seeds', [0])
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            seeds = [seeds]
        if not isinstance(seeds, list) or not seeds or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError('seeds', "expected a non-empty list of integers")
        config = cls(seeds=list(seeds), **{name: _build_section(name, raw.get(name)) for name in SECTIONS})
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        config_path = Path(path)
        if not config_path.exists():
            logger.error(f"Config file does not exist: {config_path}")
            raise FileNotFoundError(f"Config file not found: {config_path}")
        try:
            raw = json.loads(config_path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError('<root>', f"invalid JSON at line {e.lineno}: {e.msg}") from e
        logger.info(f"Loaded experiment config from {config_path}")
        return cls.from_dict(raw)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_seeds(self, seeds: List[int]) -> 'ExperimentConfig':
        return replace(self, seeds=list(seeds))

    def validate(self) -> None:
        s, d, m, data = self.swarm, self.dynamics, self.model, self.data
        if s.num_particles < 1:
            raise ConfigError('swarm.num_particles', "must be at least 1")
        if s.epochs < 0:
            raise ConfigError('swarm.epochs', "must be nonnegative")
        if s.batch_size < 1:
            raise ConfigError('swarm.batch_size', "must be positive")
        if s.exchange_gradient not in EXCHANGE_GRADIENTS:
            raise ConfigError('swarm.exchange_gradient', f"must be one of {EXCHANGE_GRADIENTS}")
        if s.learning_rates is not None and (not s.learning_rates or any(r < 0 for r in s.learning_rates)):
            raise ConfigError('swarm.learning_rates', "must be a non-empty list of nonnegative rates")

        if not d.dynamics:
            raise ConfigError('dynamics.dynamics', "must name at least one dynamic")
        for name in d.dynamics:
            if name not in constants.DYNAMIC_NAMES:
                raise ConfigError('dynamics.dynamics', f"unknown dynamic {name!r}")
        if d.r_mode not in {mode.value for mode in RMode}:
            raise ConfigError('dynamics.r_mode', f"unknown r mode {d.r_mode!r}")
        if d.dynamic2_form not in {form.value for form in Dynamic2Form}:
            raise ConfigError('dynamics.dynamic2_form', f"unknown form {d.dynamic2_form!r}")
        if not d.beta > 0:
            raise ConfigError('dynamics.beta', "must be positive")
        if d.warmup_epochs < 0:
            raise ConfigError('dynamics.warmup_epochs', "must be nonnegative")
        if d.k is not None and not 0 <= d.k <= s.num_particles - 1:
            raise ConfigError('dynamics.k', f"must lie in [0, {s.num_particles - 1}] for {s.num_particles} particles")
        try:
            self.dynamics_config(d.dynamics[0])
        except ValueError as e:
            raise ConfigError('dynamics.weights', str(e)) from e

        if not m.names:
            raise ConfigError('model.names', "must name at least one model")
        for name in m.names:
            if name not in MODEL_REGISTRY:
                raise ConfigError('model.names', f"unknown model {name!r}")
            if name not in SEQUENCE_MODELS + BENCHMARK_MODELS:
                raise ConfigError('model.names', f"{name!r} is a gradient-check model, not an experiment model")
        for name in m.params:
            if name not in MODEL_REGISTRY:
                raise ConfigError(f"model.params.{name}", "unknown model")

        if data.selection not in SELECTION_METHODS:
            raise ConfigError('data.selection', f"must be one of {SELECTION_METHODS}")
        if data.min_len < 1:
            raise ConfigError('data.min_len', "must be at least 1")
        if data.max_len < data.min_len:
            raise ConfigError('data.max_len', "must be at least min_len")
        if data.path is None and not 0 < data.train_count <= data.num_classes * data.samples_per_class:
            raise ConfigError('data.train_count', "must lie in (0, num_classes * samples_per_class]")
        if any(name in SEQUENCE_MODELS for name in m.names) and s.batch_size > data.train_count:
            raise ConfigError('swarm.batch_size', "is larger than the training set")
        if data.max_seq_len is not None and (not isinstance(data.max_seq_len, int) or data.max_seq_len < 1):
            raise ConfigError('data.max_seq_len', "must be a positive integer or null")
        for name in m.names:
            if name in SEQUENCE_MODELS:
                try:
                    SequenceModelDims(**self.model_params(name)).check(SequenceArch(name))
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"model.params.{name}", str(e)) from e
        if self.coordinator.timeout <= 0:
            raise ConfigError('coordinator.timeout', "must be positive")
        self._validate_sweep()

    def _validate_sweep(self) -> None:
        axes = self.sweep.axes()
        if not axes:
            return
        if not any(name in SEQUENCE_MODELS for name in self.model.names):
            raise ConfigError('sweep', "sweep axes only affect sequence models, none is configured")
        for name, values in axes:
            if name == 'selection':
                bad = [v for v in values if v not in SELECTION_METHODS]
            else:
                bad = [v for v in values if not isinstance(v, int) or isinstance(v, bool) or v < 1]
            if bad:
                raise ConfigError(f"sweep.{name}", f"invalid values {bad}")
            if len(set(values)) != len(values):
                raise ConfigError(f"sweep.{name}", "values must be distinct")
        for variant in self.variants():
            try:
                variant.config.validate()
            except ConfigError as e:
                raise ConfigError('sweep', f"point {variant.label} is invalid, {e.key}: {e.message}") from e

    def variants(self) -> List[Variant]:
        """One configuration per point of the sweep grid, or the unlabeled base config without axes"""
        axes = self.sweep.axes()
        if not axes:
            return [Variant('', {}, self)]
        names = [name for name, _ in axes]
        variants = []
        for values in itertools.product(*(values for _, values in axes)):
            point = dict(zip(names, values))
            variants.append(Variant(variant_label(point), point, self.at_point(point)))
        return variants

    def at_point(self, point: Dict[str, Any]) -> 'ExperimentConfig':
        """Copy with the sweep values applied; num_heads only reaches the transformer"""
        data = replace(self.data, **{k: v for k, v in point.items() if k in SWEEP_DATA_KEYS})
        params = {name: dict(values) for name, values in self.model.params.items()}
        for name in self.model.names:
            if name not in SEQUENCE_MODELS:
                continue
            if 'dense_units' in point:
                params.setdefault(name, {})['dense_units'] = point['dense_units']
            if 'num_heads' in point and name == SequenceArch.TRANSFORMER.value:
                params.setdefault(name, {})['num_heads'] = point['num_heads']
        return replace(self, data=data, model=replace(self.model, params=params), sweep=SweepSection())

    def weight_matrix(self) -> np.ndarray:
        if self.dynamics.weights is None:
            return default_weight_matrix(self.swarm.num_particles)
        weights = np.array(self.dynamics.weights, dtype=np.float64)
        if weights.shape == (self.swarm.num_particles, self.swarm.num_particles):
            np.fill_diagonal(weights, np.nan)
        return weights

    def dynamics_config(self, dynamic: str) -> DynamicsConfig:
        d = self.dynamics
        n = self.swarm.num_particles
        return DynamicsConfig(
            weights=self.weight_matrix(),
            c1=d.c1, c2=d.c2, c=d.c, beta=d.beta,
            k=min(constants.NUM_NEIGHBORS, n - 1) if d.k is None else d.k,
            dynamic=Dynamic(dynamic),
            warmup_epochs=d.warmup_epochs,
            r_mode=RMode(d.r_mode),
            dynamic2_form=Dynamic2Form(d.dynamic2_form),
        )

    def worker_settings(self, seed: int) -> WorkerSettings:
        s = self.swarm
        return WorkerSettings(
            epochs=s.epochs,
            batch_size=s.batch_size,
            base_seed=seed,
            learning_rates=s.learning_rates,
            resample_wild_learning_rate=s.resample_wild_learning_rate,
            exchange_gradient=s.exchange_gradient,
            stochastic_layers=s.stochastic_layers,
        )

    def model_params(self, name: str) -> Dict[str, Any]:
        params = dict(self.model.params.get(name, {}))
        if name in SEQUENCE_MODELS:
            params.setdefault('frames', self.data.frames)
            params.setdefault('features', self.data.feature_dim)
            params.setdefault('num_classes', self.data.num_classes)
        return params
