from dataclasses import replace
from typing import Any, Callable, Dict

from .base import LossModel, ParameterLayout, SequenceBatch
from .benchmarks import BenchmarkModel
from .convnet import ConvNetClassifier, ConvNetDims
from .gradcheck import finite_diff_gradient, max_relative_error
from .sequence import SequenceArch, SequenceClassifier, SequenceModelDims, build_sequence_classifier


def _benchmark(name: str) -> Callable[..., LossModel]:
    def build(seed: int = 0, dimension: int = 10) -> LossModel:
        return BenchmarkModel(name, dimension)
    return build


def _sequence(arch: SequenceArch) -> Callable[..., LossModel]:
    def build(seed: int = 0, **dims: Any) -> LossModel:
        return build_sequence_classifier(arch, seed=seed, **dims)
    return build


def _convnet(seed: int = 0, **dims: Any) -> LossModel:
    try:
        return ConvNetClassifier(replace(ConvNetDims(), **dims), seed)
    except TypeError as e:
        raise ValueError(f"unknown convnet dimension: {e}") from e


MODEL_REGISTRY: Dict[str, Callable[..., LossModel]] = {
    'sphere': _benchmark('sphere'),
    'rosenbrock': _benchmark('rosenbrock'),
    'rastrigin': _benchmark('rastrigin'),
    **{arch.value: _sequence(arch) for arch in SequenceArch},
    'convnet': _convnet,
}


def build_model(name: str, seed: int = 0, **dims: Any) -> LossModel:
    """Look up a model by name and build it with the given dimensions"""
    if name not in MODEL_REGISTRY:
        raise ValueError(f"unknown model {name!r}, choose from {sorted(MODEL_REGISTRY)}")
    try:
        return MODEL_REGISTRY[name](seed=seed, **dims)
    except TypeError as e:
        raise ValueError(f"bad dimensions for model {name!r}: {e}") from e


__all__ = [
    'BenchmarkModel', 'ConvNetClassifier', 'ConvNetDims', 'LossModel', 'MODEL_REGISTRY',
    'ParameterLayout', 'SequenceArch', 'SequenceBatch', 'SequenceClassifier', 'SequenceModelDims',
    'build_model', 'build_sequence_classifier', 'finite_diff_gradient', 'max_relative_error',
]
