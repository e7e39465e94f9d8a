"""Toy image classifier exercising the convolution and pooling primitives."""
from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from . import layers
from .base import LossModel, ParameterLayout, SequenceBatch

logger = logging.getLogger('SwarmModels')


@dataclass(frozen=True)
class ConvNetDims:
    height: int = 6
    width: int = 6
    channels: int = 2
    kernel: int = 3
    filters: int = 4
    pool: int = 2
    pool_mode: str = 'max'
    activation: str = 'tanh'
    num_classes: int = 3

    @property
    def conv_shape(self) -> Tuple[int, int]:
        return self.height - self.kernel + 1, self.width - self.kernel + 1

    def check(self) -> None:
        conv_h, conv_w = self.conv_shape
        if conv_h < 1 or conv_w < 1:
            raise ValueError(f"kernel {self.kernel} is larger than the {self.height}x{self.width} image")
        if self.pool < 1 or conv_h % self.pool or conv_w % self.pool:
            raise ValueError(f"pool window {self.pool} does not divide the {conv_h}x{conv_w} feature map")
        if self.activation not in layers.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.num_classes < 2:
            raise ValueError("a classifier needs at least two classes")


class ConvNetClassifier(LossModel):
    """conv -> activation -> pool -> global average pool -> dense -> softmax"""

    name = 'convnet'

    def __init__(self, dims: Optional[ConvNetDims] = None, seed: int = 0):
        self.dims = dims or ConvNetDims()
        self.dims.check()
        self.seed = int(seed)
        d = self.dims
        self.layout = ParameterLayout([
            ('conv.w', (d.kernel, d.kernel, d.channels, d.filters)),
            ('conv.b', (d.filters,)),
            ('fc.w', (d.filters, d.num_classes)),
            ('fc.b', (d.num_classes,)),
        ])

    @property
    def dimension(self) -> int:
        return self.layout.size

    @property
    def is_classifier(self) -> bool:
        return True

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        d = self.dims
        fan_in = d.kernel * d.kernel * d.channels
        return self.layout.flatten({
            'conv.w': rng.normal(0.0, np.sqrt(1.0 / fan_in), (d.kernel, d.kernel, d.channels, d.filters)),
            'fc.w': rng.normal(0.0, np.sqrt(1.0 / d.filters), (d.filters, d.num_classes)),
        })

    def _check_batch(self, batch: Optional[SequenceBatch]) -> SequenceBatch:
        d = self.dims
        if batch is None:
            raise ValueError("convnet classifier needs a data batch")
        if batch.inputs.shape[1:] != (d.height, d.width, d.channels):
            raise ValueError(f"convnet expects images [batch, {d.height}, {d.width}, {d.channels}], "
                             f"got {batch.inputs.shape}")
        return batch

    def _logits(self, params: np.ndarray, inputs: np.ndarray) -> Tuple[np.ndarray, tuple]:
        d = self.dims
        p = self.layout.unflatten(self._check_params(params))
        conv_pre, conv_cache = layers.conv2d_forward(inputs, p['conv.w'], p['conv.b'])
        conv = layers.activation(conv_pre, d.activation)
        pooled, pool_cache = layers.pool2d_forward(conv, (d.pool, d.pool), d.pool_mode)
        features = layers.global_average_pool(pooled)
        logits, fc_cache = layers.dense_forward(features, p['fc.w'], p['fc.b'])
        return logits, (conv_cache, conv_pre, conv, pool_cache, pooled.shape, fc_cache)

    def evaluate_and_gradient(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                              training: bool = False,
                              rng: Optional[np.random.Generator] = None) -> Tuple[float, np.ndarray]:
        batch = self._check_batch(batch)
        logits, (conv_cache, conv_pre, conv, pool_cache, pooled_shape, fc_cache) = self._logits(params, batch.inputs)
        loss, _, dlogits = layers.softmax_cross_entropy(logits, batch.labels)

        dfeatures, dfc_w, dfc_b = layers.dense_backward(dlogits, fc_cache)
        dpooled = layers.global_average_pool_backward(dfeatures, pooled_shape)
        dconv = layers.pool2d_backward(dpooled, pool_cache)
        dconv_pre = layers.activation_backward(dconv, conv_pre, conv, self.dims.activation)
        _, dconv_w, dconv_b = layers.conv2d_backward(dconv_pre, conv_cache)
        grad = self.layout.flatten({'conv.w': dconv_w, 'conv.b': dconv_b, 'fc.w': dfc_w, 'fc.b': dfc_b})
        return loss, grad

    def predict(self, params: np.ndarray, batch: SequenceBatch) -> np.ndarray:
        batch = self._check_batch(batch)
        return np.argmax(self._logits(params, batch.inputs)[0], axis=-1)


def random_image_batch(dims: ConvNetDims, size: int, seed: int) -> SequenceBatch:
    """Gaussian images with uniformly drawn labels, for gradient checks"""
    rng = np.random.default_rng(seed)
    inputs = rng.standard_normal((size, dims.height, dims.width, dims.channels))
    return SequenceBatch(inputs, rng.integers(0, dims.num_classes, size), dims.num_classes)
