from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple
import logging

import numpy as np

logger = logging.getLogger('SwarmModels')

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class SequenceBatch:
    """Labelled inputs; [batch, frames, features] for sequence models, [batch, H, W, C] for images"""
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if inputs.shape[0] != labels.shape[0]:
            raise ValueError(f"{inputs.shape[0]} inputs but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'labels', labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def frames(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def features(self) -> int:
        return int(self.inputs.shape[-1])

    def take(self, indices: Iterable[int]) -> 'SequenceBatch':
        index = np.asarray(list(indices), dtype=np.int64)
        return SequenceBatch(self.inputs[index], self.labels[index], self.num_classes)


class ParameterLayout:
    """Ordered table of named tensors packed into one flat float64 vector"""

    def __init__(self, shapes: Iterable[Tuple[str, Tuple[int, ...]]]):
        self.shapes: List[Tuple[str, Tuple[int, ...]]] = []
        self._slices: Dict[str, slice] = {}
        offset = 0
        for name, shape in shapes:
            if name in self._slices:
                raise ValueError(f"duplicate parameter name {name}")
            shape = tuple(int(s) for s in shape)
            count = int(np.prod(shape)) if shape else 1
            self.shapes.append((name, shape))
            self._slices[name] = slice(offset, offset + count)
            offset += count
        self.size = offset

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def unflatten(self, vector: np.ndarray) -> Params:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ValueError(f"parameter vector has shape {vector.shape}, expected ({self.size},)")
        return {name: vector[self._slices[name]].reshape(shape) for name, shape in self.shapes}

    def flatten(self, tensors: Params) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.float64)
        for name, shape in self.shapes:
            if name not in tensors:
                continue
            value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != shape:
                raise ValueError(f"{name} has shape {value.shape}, expected {shape}")
            out[self._slices[name]] = value.reshape(-1)
        return out


class LossModel(ABC):
    """Differentiable objective over a flat parameter vector and a data batch"""

    name: str = 'model'

    @property
    @abstractmethod
    def dimension(self) -> int:
        """Number of parameters D"""

    @abstractmethod
    def evaluate_and_gradient(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                              training: bool = False,
                              rng: Optional[np.random.Generator] = None) -> Tuple[float, np.ndarray]:
        """Loss and its gradient in one pass"""

    @abstractmethod
    def init_params(self, seed: int) -> np.ndarray:
        """Initial parameter vector for a seed"""

    def evaluate(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                 training: bool = False, rng: Optional[np.random.Generator] = None) -> float:
        return self.evaluate_and_gradient(params, batch, training, rng)[0]

    def gradient(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                 training: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.evaluate_and_gradient(params, batch, training, rng)[1]

    @property
    def is_classifier(self) -> bool:
        return False

    def predict(self, params: np.ndarray, batch: SequenceBatch) -> np.ndarray:
        raise NotImplementedError(f"{self.name} does not produce class predictions")

    def _check_params(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.dimension,):
            raise ValueError(f"{self.name} expects {self.dimension} parameters, got shape {params.shape}")
        return params
