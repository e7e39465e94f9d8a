"""Analytic optimisation benchmarks with closed-form gradients.

They ignore the data batch, so a worker takes one gradient step per epoch on them.
"""
from typing import Optional, Tuple

import numpy as np

from .base import LossModel, SequenceBatch


def sphere_eval_grad(x: np.ndarray) -> Tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    return float(np.square(x).sum()), 2.0 * x


def rosenbrock_eval_grad(x: np.ndarray) -> Tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("Rosenbrock needs at least two dimensions")
    head, tail = x[:-1], x[1:]
    gap = tail - head ** 2
    loss = float(100.0 * np.square(gap).sum() + np.square(1.0 - head).sum())
    grad = np.zeros_like(x)
    grad[:-1] = -400.0 * head * gap - 2.0 * (1.0 - head)
    grad[1:] += 200.0 * gap
    return loss, grad


def rastrigin_eval_grad(x: np.ndarray) -> Tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    loss = float(10.0 * x.size + (np.square(x) - 10.0 * np.cos(2.0 * np.pi * x)).sum())
    grad = 2.0 * x + 20.0 * np.pi * np.sin(2.0 * np.pi * x)
    return loss, grad


class BenchmarkModel(LossModel):
    """Batch-independent objective on a box domain"""

    _functions = {
        'sphere': (sphere_eval_grad, 5.12, 1),
        'rosenbrock': (rosenbrock_eval_grad, 2.048, 2),
        'rastrigin': (rastrigin_eval_grad, 5.12, 1),
    }

    def __init__(self, name: str, dimension: int):
        if name not in self._functions:
            raise ValueError(f"unknown benchmark {name!r}, choose from {sorted(self._functions)}")
        function, bound, min_dim = self._functions[name]
        if dimension < min_dim:
            raise ValueError(f"{name} needs at least {min_dim} dimensions, got {dimension}")
        self.name = name
        self._function = function
        self.bound = bound
        self._dimension = int(dimension)

    @property
    def dimension(self) -> int:
        return self._dimension

    def evaluate_and_gradient(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                              training: bool = False,
                              rng: Optional[np.random.Generator] = None) -> Tuple[float, np.ndarray]:
        return self._function(self._check_params(params))

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(-self.bound, self.bound, self._dimension)
