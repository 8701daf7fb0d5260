"""Dense float64 kernels with hand-written backward passes, and Adam.

Every forward returns the values its backward needs; nothing is recorded on
a tape. Gate order inside the LSTM weights is (input, forget, candidate,
output), each a block of ``hidden`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ValidationError


def _check_cols(x, W):
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"input width {x.shape[-1]} does not match weight {W.shape}")


def affine(x, W, b):
    """y = x W^T + b, W shaped [out, in]."""
    _check_cols(x, W)
    if b.shape != (W.shape[0],):
        raise DimensionError(f"bias {b.shape} does not match weight {W.shape}")
    return x @ W.T + b


def affine_backward(dy, x, W):
    return dy @ W, dy.T @ x, dy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    # subgradient at 0 is 0
    return dy * (x > 0)


def concat(a, b):
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"row mismatch in concat: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def concat_backward(d, cols_a):
    return d[:, :cols_a], d[:, cols_a:]


def sigmoid(x, out=None):
    # tanh form is overflow-free and faster than exp here
    out = np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


@dataclass
class LSTMCache:
    x: np.ndarray
    h_prev: np.ndarray | None
    c_prev: np.ndarray | None
    i: np.ndarray
    f: np.ndarray | None
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


def _gate(x, h_prev, Wx, Wh, b, block, H):
    rows = slice(block * H, (block + 1) * H)
    z = x @ Wx[rows].T
    if h_prev is not None:
        z += h_prev @ Wh[rows].T
    z += b[rows]
    return z


def lstm_cell(x, h_prev, c_prev, Wx, Wh, b):
    """One LSTM step. ``h_prev``/``c_prev`` of None mean the zero state.

    The zero-state path skips the recurrent product and the forget gate,
    which contribute nothing there. Gates are kept as separate contiguous
    arrays; elementwise work on column slices of one wide array is several
    times slower.
    """
    H = Wh.shape[1]
    if Wx.shape[0] != 4 * H or Wh.shape[0] != 4 * H or b.shape != (4 * H,):
        raise DimensionError("LSTM weights must stack four gates of equal width")
    _check_cols(x, Wx)
    if h_prev is not None and (h_prev.shape != (x.shape[0], H) or c_prev.shape != h_prev.shape):
        raise DimensionError("LSTM state shape mismatch")
    i = _gate(x, h_prev, Wx, Wh, b, 0, H)
    sigmoid(i, out=i)
    g = _gate(x, h_prev, Wx, Wh, b, 2, H)
    np.tanh(g, out=g)
    o = _gate(x, h_prev, Wx, Wh, b, 3, H)
    sigmoid(o, out=o)
    c = i * g
    f = None
    if h_prev is not None:
        f = _gate(x, h_prev, Wx, Wh, b, 1, H)
        sigmoid(f, out=f)
        c += f * c_prev
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LSTMCache(x, h_prev, c_prev, i, f, g, o, tanh_c)


def lstm_cell_backward(dh, dc, cache: LSTMCache, Wx, Wh):
    """Returns (dx, dh_prev, dc_prev, dWx, dWh, db); state grads are None on the zero-state path."""
    H = Wh.shape[1]
    i, g, o, tanh_c = cache.i, cache.g, cache.o, cache.tanh_c
    zero_state = cache.h_prev is None

    # through c_t: dh * o * (1 - tanh_c^2) + dc
    dct = tanh_c * tanh_c
    np.subtract(1.0, dct, out=dct)
    dct *= o
    dct *= dh
    if dc is not None:
        dct += dc
    dzo = np.subtract(1.0, o)
    dzo *= o
    dzo *= tanh_c
    dzo *= dh
    dzi = np.subtract(1.0, i)
    dzi *= i
    dzi *= g
    dzi *= dct
    dzg = g * g
    np.subtract(1.0, dzg, out=dzg)
    dzg *= i
    dzg *= dct
    blocks = [(0, dzi), (2, dzg), (3, dzo)]
    if not zero_state:
        f = cache.f
        dzf = np.subtract(1.0, f)
        dzf *= f
        dzf *= cache.c_prev
        dzf *= dct
        blocks.append((1, dzf))

    dx = np.zeros_like(cache.x)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dh_prev = None if zero_state else np.zeros_like(cache.h_prev)
    for block, dz in blocks:
        rows = slice(block * H, (block + 1) * H)
        dx += dz @ Wx[rows]
        dWx[rows] = dz.T @ cache.x
        db[rows] = dz.sum(axis=0)
        if not zero_state:
            dh_prev += dz @ Wh[rows]
            dWh[rows] = dz.T @ cache.h_prev
    dc_prev = None if zero_state else dct * cache.f
    return dx, dh_prev, dc_prev, dWx, dWh, db


def dropout(x, p: float, mode: str, seed: int | None = None):
    """Inverted dropout. Returns (y, mask); mask is None in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x, None
    if mode != "train":
        raise ValidationError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood over the batch and its logit gradient."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= k):
        raise ValidationError("labels must be class ids in range, one per row")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n), labels] - logsum
    loss = -logp.mean()
    d = np.exp(z - logsum[:, None])
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n


@dataclass
class ParamStore:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))

    def __getitem__(self, name):
        return self.params[name]

    def copy(self) -> "ParamStore":
        return ParamStore({k: p.copy() for k, p in self.params.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()}, self.t)

    def num_scalars(self) -> int:
        return sum(p.size for p in self.params.values())


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float = 0.003,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place.

    The whole bundle is validated before anything moves, so a bad gradient
    aborts the step without touching parameters or moments.
    """
    for k, g in grads.items():
        if k not in store.params:
            raise DimensionError(f"gradient for unknown parameter {k!r}")
        if g.shape != store.params[k].shape:
            raise DimensionError(f"gradient {k!r} has shape {g.shape}, parameter {store.params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k!r}")
    store.t += 1
    bc1 = 1.0 - beta1 ** store.t
    bc2 = 1.0 - beta2 ** store.t
    for k, g in grads.items():
        m, v = store.m[k], store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        store.params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
