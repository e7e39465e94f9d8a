"""Central finite differences as an oracle for the hand-written backward passes."""
from typing import Iterable, Optional

import numpy as np

from ..utils import constants
from .base import LossModel, SequenceBatch


def finite_diff_gradient(model: LossModel, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                         eps: float = constants.FINITE_DIFF_EPS,
                         indices: Optional[Iterable[int]] = None) -> np.ndarray:
    """(L(p + eps e_i) - L(p - eps e_i)) / 2 eps per component.

    With ``indices`` only those components are checked; the others stay zero.
    Stochastic layers are never active here.
    """
    params = np.array(params, dtype=np.float64)
    grad = np.zeros_like(params)
    components = range(params.size) if indices is None else indices
    for i in components:
        saved = params[i]
        params[i] = saved + eps
        upper = model.evaluate(params, batch)
        params[i] = saved - eps
        lower = model.evaluate(params, batch)
        params[i] = saved
        grad[i] = (upper - lower) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|); zero for empty vectors"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"gradient shapes differ: {analytic.shape} vs {numeric.shape}")
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def sample_indices(size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted random subset of parameter indices"""
    if count >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, count, replace=False))
