"""Miniature sequence classifiers.

Pipeline: frame-wise tanh projector (standing in for the ConvNet backbone),
a temporal model, global max pooling over time, Gaussian noise, a ReLU dense
layer, dropout and a softmax output trained with cross-entropy.
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple
import logging

import numpy as np

from ..utils import constants
from . import layers
from .base import LossModel, ParameterLayout, Params, SequenceBatch

logger = logging.getLogger('SwarmModels')

OUTPUT_INIT_SCALE = 0.01


class SequenceArch(str, Enum):
    TRANSFORMER = 'transformer'
    RNN = 'rnn'
    LSTM = 'lstm'
    GRU = 'gru'
    BILSTM = 'bilstm'
    MLP = 'mlp'


@dataclass(frozen=True)
class SequenceModelDims:
    frames: int = 16
    features: int = 8
    num_classes: int = 4
    d_model: int = constants.DESK_D_MODEL
    num_heads: int = constants.DESK_NUM_HEADS
    num_blocks: int = constants.DESK_NUM_BLOCKS
    ffn_dim: int = constants.DENSE_DIM
    hidden_units: int = constants.DESK_RNN_UNITS
    dense_units: int = constants.DESK_DENSE_UNITS
    dropout_rate: float = constants.DROPOUT_RATE
    noise_std: float = constants.GAUSSIAN_NOISE_STD

    def check(self, arch: SequenceArch) -> None:
        for name in ('frames', 'features', 'num_classes', 'd_model', 'hidden_units', 'dense_units'):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ValueError(f"a classifier needs at least two classes, got {self.num_classes}")
        if arch is SequenceArch.TRANSFORMER:
            if self.d_model % 2:
                raise ValueError(f"d_model must be even for the position encoding, got {self.d_model}")
            if self.num_heads < 1 or self.d_model % self.num_heads:
                raise ValueError(f"{self.num_heads} heads do not divide d_model={self.d_model}")
            if self.num_blocks < 1 or self.ffn_dim < 1:
                raise ValueError("the encoder needs at least one block and a positive ffn_dim")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")


def _sub(params: Params, prefix: str) -> Params:
    return {name[len(prefix):]: value for name, value in params.items() if name.startswith(prefix)}


def _prefixed(grads: Params, prefix: str) -> Params:
    return {prefix + name: value for name, value in grads.items()}


class SequenceClassifier(LossModel):
    """Hand-differentiated classifier over [batch, frames, features] inputs"""

    def __init__(self, arch: Any = SequenceArch.TRANSFORMER, dims: Optional[SequenceModelDims] = None,
                 seed: int = 0):
        self.arch = SequenceArch(arch)
        self.dims = dims or SequenceModelDims()
        self.dims.check(self.arch)
        self.name = self.arch.value
        self.seed = int(seed)
        self.layout = ParameterLayout(self._shapes())
        if self.arch is SequenceArch.TRANSFORMER:
            self._encoding = layers.position_encoding_matrix(self.dims.frames, self.dims.d_model)
        logger.debug(f"Built {self.name} classifier with {self.layout.size} parameters")

    @property
    def dimension(self) -> int:
        return self.layout.size

    @property
    def is_classifier(self) -> bool:
        return True

    @property
    def temporal_width(self) -> int:
        """Feature width entering the temporal max pool"""
        if self.arch in (SequenceArch.TRANSFORMER, SequenceArch.MLP):
            return self.dims.d_model
        return self.dims.hidden_units

    def _shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        d = self.dims
        shapes = [('proj.w', (d.features, d.d_model)), ('proj.b', (d.d_model,))]
        if self.arch is SequenceArch.TRANSFORMER:
            d_k = d.d_model // d.num_heads
            for block in range(d.num_blocks):
                prefix = f'block{block}.'
                shapes += [
                    (prefix + 'wq', (d.num_heads, d.d_model, d_k)),
                    (prefix + 'wk', (d.num_heads, d.d_model, d_k)),
                    (prefix + 'wv', (d.num_heads, d.d_model, d_k)),
                    (prefix + 'wo', (d.num_heads * d_k, d.d_model)),
                    (prefix + 'ln1_gamma', (d.d_model,)),
                    (prefix + 'ln1_beta', (d.d_model,)),
                    (prefix + 'ffn_w1', (d.d_model, d.ffn_dim)),
                    (prefix + 'ffn_b1', (d.ffn_dim,)),
                    (prefix + 'ffn_w2', (d.ffn_dim, d.d_model)),
                    (prefix + 'ffn_b2', (d.d_model,)),
                    (prefix + 'ln2_gamma', (d.d_model,)),
                    (prefix + 'ln2_beta', (d.d_model,)),
                ]
        elif self.arch is SequenceArch.BILSTM:
            for prefix in ('fwd.', 'bwd.'):
                shapes += [(prefix + n, s) for n, s in layers.cell_shapes('lstm', d.d_model, d.hidden_units)]
            shapes += [
                ('merge.w_yh', (d.hidden_units, d.hidden_units)),
                ('merge.w_yz', (d.hidden_units, d.hidden_units)),
                ('merge.b_y', (d.hidden_units,)),
            ]
        elif self.arch is not SequenceArch.MLP:
            shapes += [('rec.' + n, s) for n, s in layers.cell_shapes(self.arch.value, d.d_model, d.hidden_units)]
        shapes += [
            ('head.w1', (self.temporal_width, d.dense_units)),
            ('head.b1', (d.dense_units,)),
            ('head.w2', (d.dense_units, d.num_classes)),
            ('head.b2', (d.num_classes,)),
        ]
        return shapes

    def init_params(self, seed: int) -> np.ndarray:
        """Glorot-uniform weights, unit layer-norm scales, zero biases, a near-silent output layer"""
        rng = np.random.default_rng(seed)
        tensors: Params = {}
        for name, shape in self.layout.shapes:
            if len(shape) == 1:
                tensors[name] = np.ones(shape) if name.endswith('gamma') else np.zeros(shape)
                continue
            limit = np.sqrt(6.0 / (shape[-2] + shape[-1]))
            tensors[name] = rng.uniform(-limit, limit, shape)
        tensors['head.w2'] *= OUTPUT_INIT_SCALE
        return self.layout.flatten(tensors)

    def _check_batch(self, batch: Optional[SequenceBatch]) -> SequenceBatch:
        if batch is None:
            raise ValueError(f"{self.name} classifier needs a data batch")
        if batch.inputs.ndim != 3 or batch.inputs.shape[1:] != (self.dims.frames, self.dims.features):
            raise ValueError(
                f"{self.name} expects inputs [batch, {self.dims.frames}, {self.dims.features}], "
                f"got {batch.inputs.shape}"
            )
        if batch.num_classes != self.dims.num_classes:
            raise ValueError(f"batch has {batch.num_classes} classes, model has {self.dims.num_classes}")
        if len(batch) == 0:
            raise ValueError("empty batch")
        return batch

    def _forward(self, p: Params, inputs: np.ndarray, training: bool,
                 rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, Dict[str, Any]]:
        d = self.dims
        cache: Dict[str, Any] = {}
        proj_pre, cache['proj'] = layers.dense_forward(inputs, p['proj.w'], p['proj.b'])
        proj = np.tanh(proj_pre)
        cache['proj_out'] = proj

        if self.arch is SequenceArch.TRANSFORMER:
            h = proj + self._encoding
            cache['blocks'] = []
            for block in range(d.num_blocks):
                h, block_cache = layers.encoder_block_forward(h, _sub(p, f'block{block}.'))
                cache['blocks'].append(block_cache)
        elif self.arch is SequenceArch.BILSTM:
            h_fwd, cache['fwd'] = layers.recurrent_forward('lstm', proj, _sub(p, 'fwd.'), d.hidden_units)
            h_bwd, cache['bwd'] = layers.recurrent_forward('lstm', proj, _sub(p, 'bwd.'), d.hidden_units,
                                                           reverse=True)
            h, cache['merge'] = layers.bidirectional_logits_forward(h_fwd, h_bwd, _sub(p, 'merge.'))
        elif self.arch is SequenceArch.MLP:
            h = proj
        else:
            h, cache['rec'] = layers.recurrent_forward(self.arch.value, proj, _sub(p, 'rec.'), d.hidden_units)

        pooled, cache['pool'] = layers.temporal_max_pool_forward(h)
        if training:
            pooled = layers.gaussian_noise_forward(pooled, d.noise_std, rng)
        dense_pre, cache['dense1'] = layers.dense_forward(pooled, p['head.w1'], p['head.b1'])
        dense = np.maximum(dense_pre, 0.0)
        cache['dense_pre'] = dense_pre
        cache['mask'] = None
        if training:
            dense, cache['mask'] = layers.dropout_forward(dense, d.dropout_rate, rng)
        logits, cache['dense2'] = layers.dense_forward(dense, p['head.w2'], p['head.b2'])
        return logits, cache

    def _backward(self, dlogits: np.ndarray, cache: Dict[str, Any]) -> Params:
        grads: Params = {}
        ddense, grads['head.w2'], grads['head.b2'] = layers.dense_backward(dlogits, cache['dense2'])
        if cache['mask'] is not None:
            ddense = ddense * cache['mask']
        ddense_pre = ddense * (cache['dense_pre'] > 0)
        dpooled, grads['head.w1'], grads['head.b1'] = layers.dense_backward(ddense_pre, cache['dense1'])
        dh = layers.temporal_max_pool_backward(dpooled, cache['pool'])

        if self.arch is SequenceArch.TRANSFORMER:
            for block in reversed(range(self.dims.num_blocks)):
                dh, block_grads = layers.encoder_block_backward(dh, cache['blocks'][block])
                grads.update(_prefixed(block_grads, f'block{block}.'))
            dproj = dh
        elif self.arch is SequenceArch.BILSTM:
            dh_fwd, dh_bwd, merge_grads = layers.bidirectional_logits_backward(dh, cache['merge'])
            grads.update(_prefixed(merge_grads, 'merge.'))
            dproj_fwd, fwd_grads = layers.recurrent_backward(dh_fwd, cache['fwd'])
            dproj_bwd, bwd_grads = layers.recurrent_backward(dh_bwd, cache['bwd'])
            grads.update(_prefixed(fwd_grads, 'fwd.'))
            grads.update(_prefixed(bwd_grads, 'bwd.'))
            dproj = dproj_fwd + dproj_bwd
        elif self.arch is SequenceArch.MLP:
            dproj = dh
        else:
            dproj, rec_grads = layers.recurrent_backward(dh, cache['rec'])
            grads.update(_prefixed(rec_grads, 'rec.'))

        proj = cache['proj_out']
        _, grads['proj.w'], grads['proj.b'] = layers.dense_backward(dproj * (1.0 - proj * proj), cache['proj'])
        return grads

    def _rng(self, rng: Optional[np.random.Generator]) -> np.random.Generator:
        return rng if rng is not None else np.random.default_rng(self.seed)

    def logits(self, params: np.ndarray, batch: SequenceBatch, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
        p = self.layout.unflatten(self._check_params(params))
        batch = self._check_batch(batch)
        return self._forward(p, batch.inputs, training, self._rng(rng) if training else None)[0]

    def evaluate_and_gradient(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                              training: bool = False,
                              rng: Optional[np.random.Generator] = None) -> Tuple[float, np.ndarray]:
        p = self.layout.unflatten(self._check_params(params))
        batch = self._check_batch(batch)
        logits, cache = self._forward(p, batch.inputs, training, self._rng(rng) if training else None)
        loss, _, dlogits = layers.softmax_cross_entropy(logits, batch.labels)
        return loss, self.layout.flatten(self._backward(dlogits, cache))

    def evaluate(self, params: np.ndarray, batch: Optional[SequenceBatch] = None,
                 training: bool = False, rng: Optional[np.random.Generator] = None) -> float:
        batch = self._check_batch(batch)
        return layers.softmax_cross_entropy(self.logits(params, batch, training, rng), batch.labels)[0]

    def predict(self, params: np.ndarray, batch: SequenceBatch) -> np.ndarray:
        return np.argmax(self.logits(params, batch), axis=-1)

    def probabilities(self, params: np.ndarray, batch: SequenceBatch) -> np.ndarray:
        return layers.softmax(self.logits(params, batch))


def build_sequence_classifier(arch: Any, dims: Optional[SequenceModelDims] = None, seed: int = 0,
                              **overrides: Any) -> SequenceClassifier:
    """Compose a classifier for one architecture; keyword overrides adjust the default dims"""
    dims = dims or SequenceModelDims()
    if overrides:
        try:
            dims = replace(dims, **overrides)
        except TypeError as e:
            raise ValueError(f"unknown sequence model dimension: {e}") from e
    return SequenceClassifier(arch, dims, seed)
