"""Hand-differentiated layers.

Every layer comes as a ``*_forward`` returning ``(output, cache)`` and a
``*_backward`` taking the upstream gradient and that cache. Vectors are rows:
a dense layer computes ``x @ w + b``. Leading axes are treated as batch axes.
"""
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..utils import constants

Params = Dict[str, np.ndarray]

ACTIVATIONS = ('sigmoid', 'tanh', 'relu', 'leaky_relu', 'linear')


def _rows(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# Activations ---------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    positive = flat >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-flat[positive]))
    e = np.exp(flat[~positive])
    out[~positive] = e / (1.0 + e)
    return out.reshape(x.shape)


def activation(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if name == 'sigmoid':
        return sigmoid(x)
    if name == 'tanh':
        return np.tanh(x)
    if name == 'relu':
        return np.maximum(x, 0.0)
    if name == 'leaky_relu':
        return np.where(x > 0, x, constants.LEAKY_RELU_SLOPE * x)
    if name == 'linear':
        return x
    raise ValueError(f"unknown activation {name!r}, choose from {ACTIVATIONS}")


def activation_backward(dy: np.ndarray, x: np.ndarray, y: np.ndarray, name: str) -> np.ndarray:
    if name == 'sigmoid':
        return dy * y * (1.0 - y)
    if name == 'tanh':
        return dy * (1.0 - y * y)
    if name == 'relu':
        return dy * (x > 0)
    if name == 'leaky_relu':
        return dy * np.where(x > 0, 1.0, constants.LEAKY_RELU_SLOPE)
    if name == 'linear':
        return dy
    raise ValueError(f"unknown activation {name!r}, choose from {ACTIVATIONS}")


# Softmax and loss ------------------------------------------------------------

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean of -log p[label], probabilities floored at 1e-12"""
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.ndim != 2 or p.shape[0] != labels.shape[0]:
        raise ValueError(f"probabilities of shape {p.shape} do not match {labels.shape[0]} labels")
    if p.shape[0] == 0:
        raise ValueError("cross entropy of an empty batch is undefined")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    picked = np.maximum(p[np.arange(p.shape[0]), labels], constants.PROBABILITY_FLOOR)
    return float(np.mean(-np.log(picked)))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Loss, probabilities and d loss / d logits for a [batch, classes] logit matrix"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch = logits.shape[0]
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    log_p = shifted - log_norm
    probs = np.exp(log_p)
    picked = np.maximum(log_p[np.arange(batch), labels], np.log(constants.PROBABILITY_FLOOR))
    loss = float(np.mean(-picked))
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    return loss, probs, dlogits / batch


# Dense -----------------------------------------------------------------------

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight rows {w.shape[0]}")
    return x @ w + b, (x, w)


def dense_backward(dy: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    dw = _rows(x).T @ _rows(dy)
    db = _rows(dy).sum(axis=0)
    return dy @ w.T, dw, db


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, act: str = 'linear') -> np.ndarray:
    """Affine layer followed by an activation"""
    return activation(dense_forward(x, w, b)[0], act)


# Layer normalisation ---------------------------------------------------------

def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                       eps: float = constants.LAYER_NORM_EPS) -> Tuple[np.ndarray, tuple]:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    return x_hat * gamma + beta, (x_hat, inv_std, gamma)


def layer_norm_backward(dy: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_hat, inv_std, gamma = cache
    dgamma = _rows(dy * x_hat).sum(axis=0)
    dbeta = _rows(dy).sum(axis=0)
    dx_hat = dy * gamma
    dx = inv_std * (dx_hat
                    - dx_hat.mean(axis=-1, keepdims=True)
                    - x_hat * np.mean(dx_hat * x_hat, axis=-1, keepdims=True))
    return dx, dgamma, dbeta


# Attention -------------------------------------------------------------------

def position_encoding(pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding: sin on even components, cos on odd ones"""
    if d_model <= 0 or d_model % 2:
        raise ValueError(f"d_model must be a positive even number, got {d_model}")
    if pos < 0:
        raise ValueError(f"position must be nonnegative, got {pos}")
    i = np.arange(d_model // 2, dtype=np.float64)
    angles = pos / np.power(10000.0, 2.0 * i / d_model)
    out = np.empty(d_model, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def position_encoding_matrix(length: int, d_model: int) -> np.ndarray:
    return np.stack([position_encoding(pos, d_model) for pos in range(length)])


def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, tuple]:
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} differs from key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2] or q.shape[-2] != k.shape[-2]:
        raise ValueError("query, key and value must have the same number of rows")
    scale = 1.0 / np.sqrt(q.shape[-1])
    weights = softmax((q @ _swap(k)) * scale)
    return weights @ v, (q, k, v, weights, scale)


def attention_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    q, k, v, weights, scale = cache
    dv = _swap(weights) @ dout
    dscores = softmax_backward(dout @ _swap(v), weights) * scale
    return dscores @ k, _swap(dscores) @ q, dv


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V"""
    return attention_forward(np.asarray(q, dtype=np.float64),
                             np.asarray(k, dtype=np.float64),
                             np.asarray(v, dtype=np.float64))[0]


def mha_forward(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                wo: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """Per-head projections [h, d_model, d_k|d_v], output projection [h*d_v, d_model]"""
    heads = wq.shape[0]
    if wk.shape[0] != heads or wv.shape[0] != heads:
        raise ValueError("every head needs its own query, key and value projection")
    if wo.shape[0] != heads * wv.shape[-1]:
        raise ValueError(f"output projection expects {wo.shape[0]} rows, heads provide {heads * wv.shape[-1]}")
    outputs, caches = [], []
    for i in range(heads):
        out, cache = attention_forward(x @ wq[i], x @ wk[i], x @ wv[i])
        outputs.append(out)
        caches.append(cache)
    concat = np.concatenate(outputs, axis=-1)
    return concat @ wo, (x, wq, wk, wv, wo, concat, caches)


def mha_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, Params]:
    x, wq, wk, wv, wo, concat, caches = cache
    d_v = wv.shape[-1]
    grads = {
        'wq': np.zeros_like(wq), 'wk': np.zeros_like(wk),
        'wv': np.zeros_like(wv), 'wo': _rows(concat).T @ _rows(dout),
    }
    dconcat = dout @ wo.T
    dx = np.zeros_like(x)
    x_rows = _rows(x)
    for i, head_cache in enumerate(caches):
        dq, dk, dv = attention_backward(dconcat[..., i * d_v:(i + 1) * d_v], head_cache)
        grads['wq'][i] = x_rows.T @ _rows(dq)
        grads['wk'][i] = x_rows.T @ _rows(dk)
        grads['wv'][i] = x_rows.T @ _rows(dv)
        dx += dq @ wq[i].T + dk @ wk[i].T + dv @ wv[i].T
    return dx, grads


def multi_head_attention(x: np.ndarray, weights: Params) -> np.ndarray:
    """Concat(head_1..head_h) W_O with head_i = Attention(X W_Q_i, X W_K_i, X W_V_i)"""
    x = np.asarray(x, dtype=np.float64)
    return mha_forward(x, weights['wq'], weights['wk'], weights['wv'], weights['wo'])[0]


ENCODER_KEYS = ('wq', 'wk', 'wv', 'wo', 'ln1_gamma', 'ln1_beta',
                'ffn_w1', 'ffn_b1', 'ffn_w2', 'ffn_b2', 'ln2_gamma', 'ln2_beta')


def encoder_block_forward(x: np.ndarray, p: Params, ffn_activation: str = 'relu') -> Tuple[np.ndarray, tuple]:
    """Y = LayerNorm(X + MHA(X)); Z = LayerNorm(Y + FFN(Y))"""
    attended, mha_cache = mha_forward(x, p['wq'], p['wk'], p['wv'], p['wo'])
    y, ln1_cache = layer_norm_forward(x + attended, p['ln1_gamma'], p['ln1_beta'])
    hidden_pre, d1_cache = dense_forward(y, p['ffn_w1'], p['ffn_b1'])
    hidden = activation(hidden_pre, ffn_activation)
    ffn_out, d2_cache = dense_forward(hidden, p['ffn_w2'], p['ffn_b2'])
    z, ln2_cache = layer_norm_forward(y + ffn_out, p['ln2_gamma'], p['ln2_beta'])
    return z, (mha_cache, ln1_cache, d1_cache, hidden_pre, hidden, d2_cache, ln2_cache, ffn_activation)


def encoder_block_backward(dz: np.ndarray, cache: tuple) -> Tuple[np.ndarray, Params]:
    mha_cache, ln1_cache, d1_cache, hidden_pre, hidden, d2_cache, ln2_cache, ffn_activation = cache
    grads: Params = {}
    dsum2, grads['ln2_gamma'], grads['ln2_beta'] = layer_norm_backward(dz, ln2_cache)
    dhidden, grads['ffn_w2'], grads['ffn_b2'] = dense_backward(dsum2, d2_cache)
    dhidden_pre = activation_backward(dhidden, hidden_pre, hidden, ffn_activation)
    dy, grads['ffn_w1'], grads['ffn_b1'] = dense_backward(dhidden_pre, d1_cache)
    dy = dy + dsum2
    dsum1, grads['ln1_gamma'], grads['ln1_beta'] = layer_norm_backward(dy, ln1_cache)
    dx, mha_grads = mha_backward(dsum1, mha_cache)
    grads.update(mha_grads)
    return dx + dsum1, grads


def transformer_encoder_block(x: np.ndarray, params: Params, ffn_activation: str = 'relu') -> np.ndarray:
    return encoder_block_forward(np.asarray(x, dtype=np.float64), params, ffn_activation)[0]


# Recurrent cells -------------------------------------------------------------

RNN_GATES = ('',)
LSTM_GATES = ('f', 'i', 'c', 'o')
GRU_GATES = ('r', 'z', 'h')


def _bias(gate: str) -> str:
    return f'b_{gate}' if gate else 'b'


def _gate_pre(h_prev: np.ndarray, x: np.ndarray, p: Params, gate: str) -> np.ndarray:
    return h_prev @ p[f'w_{gate}h'] + x @ p[f'w_{gate}x'] + p[_bias(gate)]


def _gate_backward(da: np.ndarray, h_in: np.ndarray, x: np.ndarray, p: Params, gate: str,
                   grads: Params) -> Tuple[np.ndarray, np.ndarray]:
    grads[f'w_{gate}h'] = h_in.T @ da
    grads[f'w_{gate}x'] = x.T @ da
    grads[_bias(gate)] = da.sum(axis=0)
    return da @ p[f'w_{gate}h'].T, da @ p[f'w_{gate}x'].T


def rnn_cell_forward(h_prev: np.ndarray, x: np.ndarray, p: Params) -> Tuple[np.ndarray, tuple]:
    """h_t = sigmoid(h_{t-1} W_h + x_t W_x + b)"""
    h = sigmoid(_gate_pre(h_prev, x, p, ''))
    return h, (h_prev, x, h, p)


def rnn_cell_backward(dh: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, Params]:
    h_prev, x, h, p = cache
    grads: Params = {}
    dh_prev, dx = _gate_backward(dh * h * (1.0 - h), h_prev, x, p, '', grads)
    return dh_prev, dx, grads


def rnn_cell(h_prev: np.ndarray, x_t: np.ndarray, weights: Params) -> np.ndarray:
    return rnn_cell_forward(np.asarray(h_prev, dtype=np.float64), np.asarray(x_t, dtype=np.float64), weights)[0]


def lstm_cell_forward(h_prev: np.ndarray, c_prev: np.ndarray, x: np.ndarray,
                      p: Params) -> Tuple[np.ndarray, np.ndarray, tuple]:
    f = sigmoid(_gate_pre(h_prev, x, p, 'f'))
    i = sigmoid(_gate_pre(h_prev, x, p, 'i'))
    g = np.tanh(_gate_pre(h_prev, x, p, 'c'))
    o = sigmoid(_gate_pre(h_prev, x, p, 'o'))
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, (h_prev, c_prev, x, f, i, g, o, tanh_c, p)


def lstm_cell_backward(dh: np.ndarray, dc_next: np.ndarray,
                       cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Params]:
    h_prev, c_prev, x, f, i, g, o, tanh_c, p = cache
    dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
    pre_grads = {
        'f': dc * c_prev * f * (1.0 - f),
        'i': dc * g * i * (1.0 - i),
        'c': dc * i * (1.0 - g * g),
        'o': dh * tanh_c * o * (1.0 - o),
    }
    grads: Params = {}
    dh_prev = np.zeros_like(h_prev)
    dx = np.zeros_like(x)
    for gate in LSTM_GATES:
        dh_part, dx_part = _gate_backward(pre_grads[gate], h_prev, x, p, gate, grads)
        dh_prev += dh_part
        dx += dx_part
    return dh_prev, dc * f, dx, grads


def lstm_cell(h_prev: np.ndarray, c_prev: np.ndarray, x_t: np.ndarray,
              weights: Params) -> Tuple[np.ndarray, np.ndarray]:
    h, c, _ = lstm_cell_forward(np.asarray(h_prev, dtype=np.float64), np.asarray(c_prev, dtype=np.float64),
                                np.asarray(x_t, dtype=np.float64), weights)
    return h, c


def gru_cell_forward(h_prev: np.ndarray, x: np.ndarray, p: Params) -> Tuple[np.ndarray, tuple]:
    r = sigmoid(_gate_pre(h_prev, x, p, 'r'))
    z = sigmoid(_gate_pre(h_prev, x, p, 'z'))
    gated = r * h_prev
    candidate = np.tanh(_gate_pre(gated, x, p, 'h'))
    h = (1.0 - z) * h_prev + z * candidate
    return h, (h_prev, x, r, z, gated, candidate, p)


def gru_cell_backward(dh: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, Params]:
    h_prev, x, r, z, gated, candidate, p = cache
    grads: Params = {}
    dh_prev = dh * (1.0 - z)
    da_h = dh * z * (1.0 - candidate * candidate)
    dgated, dx = _gate_backward(da_h, gated, x, p, 'h', grads)
    dh_prev = dh_prev + dgated * r
    da_r = dgated * h_prev * r * (1.0 - r)
    da_z = dh * (candidate - h_prev) * z * (1.0 - z)
    for gate, da in (('r', da_r), ('z', da_z)):
        dh_part, dx_part = _gate_backward(da, h_prev, x, p, gate, grads)
        dh_prev = dh_prev + dh_part
        dx = dx + dx_part
    return dh_prev, dx, grads


def gru_cell(h_prev: np.ndarray, x_t: np.ndarray, weights: Params) -> np.ndarray:
    return gru_cell_forward(np.asarray(h_prev, dtype=np.float64), np.asarray(x_t, dtype=np.float64), weights)[0]


def cell_shapes(kind: str, inputs: int, units: int) -> Sequence[Tuple[str, Tuple[int, ...]]]:
    """Parameter names and shapes of one recurrent cell"""
    gates = {'rnn': RNN_GATES, 'lstm': LSTM_GATES, 'gru': GRU_GATES}[kind]
    shapes = []
    for gate in gates:
        shapes += [(f'w_{gate}h', (units, units)), (f'w_{gate}x', (inputs, units)), (_bias(gate), (units,))]
    return shapes


def recurrent_forward(kind: str, xs: np.ndarray, p: Params, units: int,
                      reverse: bool = False) -> Tuple[np.ndarray, tuple]:
    """Unroll a cell over [batch, time, features]; reverse runs from the last frame backwards"""
    batch, steps, _ = xs.shape
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    hs = np.zeros((batch, steps, units))
    caches = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        if kind == 'lstm':
            h, c, caches[t] = lstm_cell_forward(h, c, xs[:, t], p)
        elif kind == 'gru':
            h, caches[t] = gru_cell_forward(h, xs[:, t], p)
        elif kind == 'rnn':
            h, caches[t] = rnn_cell_forward(h, xs[:, t], p)
        else:
            raise ValueError(f"unknown recurrent cell {kind!r}")
        hs[:, t] = h
    return hs, (kind, reverse, caches, xs.shape, units)


def recurrent_backward(dhs: np.ndarray, cache: tuple) -> Tuple[np.ndarray, Params]:
    kind, reverse, caches, shape, units = cache
    batch, steps, _ = shape
    dxs = np.zeros(shape)
    grads: Params = {}
    dh_next = np.zeros((batch, units))
    dc_next = np.zeros((batch, units))
    order = range(steps) if reverse else range(steps - 1, -1, -1)
    for t in order:
        dh = dhs[:, t] + dh_next
        if kind == 'lstm':
            dh_next, dc_next, dxs[:, t], step_grads = lstm_cell_backward(dh, dc_next, caches[t])
        elif kind == 'gru':
            dh_next, dxs[:, t], step_grads = gru_cell_backward(dh, caches[t])
        else:
            dh_next, dxs[:, t], step_grads = rnn_cell_backward(dh, caches[t])
        for name, value in step_grads.items():
            grads[name] = grads[name] + value if name in grads else value
    return dxs, grads


def bidirectional_logits_forward(h: np.ndarray, z: np.ndarray, p: Params) -> Tuple[np.ndarray, tuple]:
    """h_t W_yh + z_t W_yz + b_y for forward states h and backward states z"""
    return h @ p['w_yh'] + z @ p['w_yz'] + p['b_y'], (h, z, p)


def bidirectional_logits_backward(dlogits: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, Params]:
    h, z, p = cache
    rows = _rows(dlogits)
    grads = {
        'w_yh': _rows(h).T @ rows,
        'w_yz': _rows(z).T @ rows,
        'b_y': rows.sum(axis=0),
    }
    return dlogits @ p['w_yh'].T, dlogits @ p['w_yz'].T, grads


def bidirectional_combine(h: np.ndarray, z: np.ndarray, weights: Params) -> np.ndarray:
    """softmax(W_yh h_t + W_yz z_t + b_y)"""
    logits, _ = bidirectional_logits_forward(np.asarray(h, dtype=np.float64),
                                             np.asarray(z, dtype=np.float64), weights)
    return softmax(logits)


# Convolution and pooling ------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """Valid cross-correlation, stride 1: x [B, H, W, C], w [kh, kw, C, F], b [F]"""
    batch, height, width, channels = x.shape
    kh, kw, w_channels, filters = w.shape
    if w_channels != channels:
        raise ValueError(f"kernel expects {w_channels} channels, input has {channels}")
    out_h, out_w = height - kh + 1, width - kw + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {kh}x{kw} is larger than the {height}x{width} input")
    y = np.zeros((batch, out_h, out_w, filters)) + b
    for i in range(kh):
        for j in range(kw):
            y += x[:, i:i + out_h, j:j + out_w, :] @ w[i, j]
    return y, (x, w)


def conv2d_backward(dy: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    kh, kw = w.shape[:2]
    out_h, out_w = dy.shape[1:3]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    dy_rows = _rows(dy)
    for i in range(kh):
        for j in range(kw):
            window = x[:, i:i + out_h, j:j + out_w, :]
            dw[i, j] = _rows(window).T @ dy_rows
            dx[:, i:i + out_h, j:j + out_w, :] += dy @ w[i, j].T
    return dx, dw, dy_rows.sum(axis=0)


def conv2d(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if b is None:
        b = np.zeros(w.shape[-1])
    return conv2d_forward(np.asarray(x, dtype=np.float64), w, np.asarray(b, dtype=np.float64))[0]


def pool2d_forward(x: np.ndarray, window: Tuple[int, int], mode: str = 'max') -> Tuple[np.ndarray, tuple]:
    """Non-overlapping n x m max or average pooling over [B, H, W, C]"""
    batch, height, width, channels = x.shape
    n, m = window
    if height % n or width % m:
        raise ValueError(f"pool window {n}x{m} does not divide the {height}x{width} input")
    if mode not in ('max', 'avg'):
        raise ValueError(f"pool mode must be 'max' or 'avg', got {mode!r}")
    out_h, out_w = height // n, width // m
    blocks = (x.reshape(batch, out_h, n, out_w, m, channels)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(batch, out_h, out_w, channels, n * m))
    if mode == 'avg':
        return blocks.mean(axis=-1), (x.shape, window, mode, None)
    index = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, index[..., None], axis=-1)[..., 0]
    return y, (x.shape, window, mode, index)


def pool2d_backward(dy: np.ndarray, cache: tuple) -> np.ndarray:
    shape, (n, m), mode, index = cache
    batch, height, width, channels = shape
    out_h, out_w = height // n, width // m
    if mode == 'avg':
        dblocks = np.repeat(dy[..., None] / (n * m), n * m, axis=-1)
    else:
        dblocks = np.zeros((batch, out_h, out_w, channels, n * m))
        np.put_along_axis(dblocks, index[..., None], dy[..., None], axis=-1)
    return (dblocks.reshape(batch, out_h, out_w, channels, n, m)
                   .transpose(0, 1, 4, 2, 5, 3)
                   .reshape(shape))


def pool2d(x: np.ndarray, window: Tuple[int, int], mode: str = 'max') -> np.ndarray:
    return pool2d_forward(np.asarray(x, dtype=np.float64), window, mode)[0]


def global_average_pool(features: np.ndarray) -> np.ndarray:
    """Mean over the two spatial axes of [..., w, h, c]"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim < 3:
        raise ValueError(f"expected [..., w, h, c] features, got shape {features.shape}")
    return features.mean(axis=(-3, -2))


def global_average_pool_backward(dy: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    area = shape[-3] * shape[-2]
    return np.broadcast_to((dy / area)[..., None, None, :], shape).copy()


def temporal_max_pool_forward(h: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """Global max pooling over the time axis of [batch, time, features]"""
    index = h.argmax(axis=1)
    return np.take_along_axis(h, index[:, None, :], axis=1)[:, 0, :], (h.shape, index)


def temporal_max_pool_backward(dy: np.ndarray, cache: tuple) -> np.ndarray:
    shape, index = cache
    dh = np.zeros(shape)
    np.put_along_axis(dh, index[:, None, :], dy[:, None, :], axis=1)
    return dh


# Stochastic regularisers -------------------------------------------------------

def gaussian_noise_forward(x: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    return x + std * rng.standard_normal(x.shape)


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask
