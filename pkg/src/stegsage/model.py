"""GraphSAGE steganalysis network.

K message-passing layers update every node from its own embedding and an
aggregate of its in-neighbours; each layer's node embeddings are pooled per
graph and the pooled vectors summed into one graph vector, which goes
through dropout and a linear head producing (cover, stego) logits.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .errors import (
    BadMagicError,
    ConfigMismatchError,
    DimensionError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
)
from .graph import GraphBatch
from .seeding import derive_seed, splitmix64_array

AGGREGATORS = ("lstm", "mean")
LAYER_KINDS = ("sage", "gcn")
READOUTS = ("hierarchical_mean", "hierarchical_max", "last_mean")


@dataclass(frozen=True)
class ModelConfig:
    K: int = 3
    hidden: int = 64
    input_dim: int = 3
    aggregator: str = "lstm"
    layer_kind: str = "sage"
    readout: str = "hierarchical_mean"
    dropout_p: float = 0.3
    classes: int = 2
    seed: int = 0
    undirected: bool = False
    normalization: str = "scaled"

    def __post_init__(self):
        if self.K < 1 or self.hidden < 1 or self.input_dim < 1:
            raise ValidationError("K, hidden and input_dim must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValidationError(f"aggregator must be one of {AGGREGATORS}")
        if self.layer_kind not in LAYER_KINDS:
            raise ValidationError(f"layer_kind must be one of {LAYER_KINDS}")
        if self.readout not in READOUTS:
            raise ValidationError(f"readout must be one of {READOUTS}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError("dropout_p must be in [0, 1)")
        if self.classes != 2:
            raise ValidationError("only binary cover/stego classification is supported")
        if self.normalization not in ("scaled", "raw"):
            raise ValidationError("normalization must be 'scaled' or 'raw'")

    @classmethod
    def variant(cls, index: int, **overrides) -> "ModelConfig":
        """Ablation rows: 1 full model, 2 last-layer pooling only, 3 mean
        aggregator, 4 max pooling, 5 GCN layers, 7 two layers, 8 four layers."""
        if index not in VARIANTS:
            raise ValidationError(f"unknown variant #{index}; known: {sorted(VARIANTS)}")
        return cls(**{**VARIANTS[index], **overrides})

    def encode(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in sorted(fields(self), key=lambda f: f.name))

    @classmethod
    def decode(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in kinds:
                raise ValidationError(f"unknown model config key {key!r}")
            values[key] = _parse_value(raw.strip(), kinds[key])
        return cls(**values)


def _parse_value(raw: str, kind: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw not in ("True", "False", "true", "false", "1", "0"):
            raise ValidationError(f"bad boolean {raw!r}")
        return raw in ("True", "true", "1")
    return raw


VARIANTS = {
    1: {},
    2: {"readout": "last_mean"},
    3: {"aggregator": "mean"},
    4: {"readout": "hierarchical_max"},
    5: {"layer_kind": "gcn"},
    7: {"K": 2},
    8: {"K": 4},
}


# -- parameters -------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H = config.hidden
    shapes = {}
    for k in range(1, config.K + 1):
        d_in = config.input_dim if k == 1 else H
        if config.layer_kind == "gcn":
            shapes[f"layer{k}.W"] = (H, d_in)
        elif config.aggregator == "lstm":
            shapes[f"layer{k}.lstm.Wx"] = (4 * H, d_in)
            shapes[f"layer{k}.lstm.Wh"] = (4 * H, H)
            shapes[f"layer{k}.lstm.b"] = (4 * H,)
            shapes[f"layer{k}.W"] = (H, d_in + H)
        else:
            shapes[f"layer{k}.W"] = (H, 2 * d_in)
        shapes[f"layer{k}.b"] = (H,)
    shapes["head.W"] = (config.classes, H)
    shapes["head.b"] = (config.classes,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def init_params(config: ModelConfig) -> nn.ParamStore:
    """Glorot-uniform dense weights, U(-1/sqrt(H), 1/sqrt(H)) LSTM weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif ".lstm." in name:
            bound = 1.0 / np.sqrt(config.hidden)
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, shape)
    return nn.ParamStore(params)


def zeros_like_params(config: ModelConfig) -> nn.ParamStore:
    return nn.ParamStore({k: np.zeros(s) for k, s in param_shapes(config).items()})


# -- aggregation ------------------------------------------------------------

def permute_neighbors(nbr: np.ndarray, deg: np.ndarray, local_index: np.ndarray, perm_seed: int) -> np.ndarray:
    """Shuffle each node's neighbour row with keys hashed from (seed, local node, slot).

    Keys depend on the node's position inside its own graph, so a graph gets
    the same permutation whether it is alone or inside a batch.
    """
    width = nbr.shape[1]
    if width < 2:
        return nbr
    slots = np.arange(width, dtype=np.uint64)
    raw = local_index.astype(np.uint64)[:, None] * np.uint64(width) + slots[None, :]
    keys = splitmix64_array(raw ^ np.uint64(perm_seed))
    keys[nbr < 0] = np.iinfo(np.uint64).max
    return np.take_along_axis(nbr, np.argsort(keys, axis=1, kind="stable"), axis=1)


def lstm_aggregate(neighbor_embeddings: np.ndarray, Wx, Wh, b, perm_seed: int = 0) -> np.ndarray:
    """Aggregate one node's neighbours: shuffle, run the LSTM from zero state, keep the last h.

    Reference single-node form of what :func:`_lstm_agg_forward` does for a
    whole batch. An empty neighbourhood aggregates to the zero vector.
    """
    H = Wh.shape[1]
    m = len(neighbor_embeddings)
    if m == 0:
        return np.zeros(H)
    nbr = np.arange(m)[None, :]
    order = permute_neighbors(nbr, np.array([m]), np.array([0]), perm_seed)[0]
    h = c = None
    for j in order:
        h, c, _ = nn.lstm_cell(neighbor_embeddings[j][None, :], h, c, Wx, Wh, b)
    return h[0]


def _lstm_agg_forward(Hprev, nbr, deg, Wx, Wh, b):
    n = Hprev.shape[0]
    H = Wh.shape[1]
    h_all = np.zeros((n, H))
    c_all = np.zeros((n, H))
    steps = []
    for s in range(nbr.shape[1]):
        rows = np.flatnonzero(deg > s)
        src = nbr[rows, s]
        if s == 0:
            h, c, cache = nn.lstm_cell(Hprev[src], None, None, Wx, Wh, b)
        else:
            h, c, cache = nn.lstm_cell(Hprev[src], h_all[rows], c_all[rows], Wx, Wh, b)
        h_all[rows] = h
        c_all[rows] = c
        steps.append((rows, src, cache))
    return h_all, steps


def _lstm_agg_backward(dagg, steps, n_nodes, Wx, Wh):
    dH = np.zeros((n_nodes, Wx.shape[1]))
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(Wx.shape[0])
    dh_all = dagg.copy()
    dc_all = np.zeros_like(dagg)
    for s in range(len(steps) - 1, -1, -1):
        rows, src, cache = steps[s]
        dx, dh_prev, dc_prev, gWx, gWh, gb = nn.lstm_cell_backward(
            dh_all[rows], dc_all[rows], cache, Wx, Wh)
        _scatter_add(dH, src, dx)
        dWx += gWx
        dWh += gWh
        db += gb
        if s:
            dh_all[rows] = dh_prev
            dc_all[rows] = dc_prev
    return dH, dWx, dWh, db


def _scatter_add(target, idx, values):
    if len(idx) and np.bincount(idx).max() > 1:
        np.add.at(target, idx, values)
    else:
        target[idx] += values


def _mean_agg_forward(Hprev, nbr, deg):
    agg = np.zeros_like(Hprev)
    for s in range(nbr.shape[1]):
        rows = np.flatnonzero(deg > s)
        agg[rows] += Hprev[nbr[rows, s]]
    has = deg > 0
    agg[has] /= deg[has, None]
    return agg


def _mean_agg_backward(dagg, nbr, deg):
    dH = np.zeros_like(dagg)
    scaled = dagg / np.maximum(deg, 1)[:, None]
    for s in range(nbr.shape[1]):
        rows = np.flatnonzero(deg > s)
        _scatter_add(dH, nbr[rows, s], scaled[rows])
    return dH


# -- readout ----------------------------------------------------------------

def _segment_pool(Hk, batch: GraphBatch, how: str):
    offs = batch.offsets
    sizes = batch.graph_sizes
    if how == "mean":
        if np.all(sizes == sizes[0]):
            return Hk.reshape(len(sizes), sizes[0], -1).mean(axis=1), None
        return np.add.reduceat(Hk, offs, axis=0) / sizes[:, None], None
    pooled = np.maximum.reduceat(Hk, offs, axis=0)
    # first node attaining each maximum receives the gradient
    hit = Hk == pooled[batch.graph_index]
    cand = np.where(hit, np.arange(Hk.shape[0])[:, None], Hk.shape[0])
    arg = np.minimum.reduceat(cand, offs, axis=0)
    return pooled, arg


def _segment_pool_backward(dpooled, arg, batch: GraphBatch, shape):
    if arg is None:
        return (dpooled / batch.graph_sizes[:, None])[batch.graph_index]
    dH = np.zeros(shape)
    cols = np.broadcast_to(np.arange(shape[1]), arg.shape)
    dH[arg, cols] += dpooled
    return dH


def readout(layer_embeddings: list[np.ndarray], mode: str, batch: GraphBatch) -> tuple[np.ndarray, list[np.ndarray]]:
    """Graph vectors plus the per-layer pooled vectors that were summed into them."""
    if np.any(batch.graph_sizes < 1):
        raise ValidationError("cannot pool an empty graph")
    if mode == "last_mean":
        pooled = [_segment_pool(layer_embeddings[-1], batch, "mean")[0]]
    else:
        how = "mean" if mode == "hierarchical_mean" else "max"
        pooled = [_segment_pool(Hk, batch, how)[0] for Hk in layer_embeddings]
    return sum(pooled[1:], pooled[0].copy()), pooled


# -- forward / backward -----------------------------------------------------

def sage_layer(batch: GraphBatch, h_prev: np.ndarray, W, b, lstm=None, perm_seed: int = 0):
    """ReLU(W [h_v || agg_v] + b) for every node; returns (h_next, cache).

    ``lstm`` is the (Wx, Wh, b) triple of the LSTM aggregator, or None for the
    neighbour mean. Nodes without in-neighbours aggregate the zero vector.
    """
    if h_prev.shape[0] != batch.num_nodes:
        raise DimensionError(f"{h_prev.shape[0]} embeddings for {batch.num_nodes} nodes")
    nbr, deg = batch.in_neighbors()
    order = permute_neighbors(nbr, deg, batch.local_index, perm_seed)
    if lstm is not None:
        agg, steps = _lstm_agg_forward(h_prev, order, deg, *lstm)
    else:
        agg, steps = _mean_agg_forward(h_prev, order, deg), None
    cat = nn.concat(h_prev, agg)
    return nn.relu(nn.affine(cat, W, b)), ("sage", cat, order, steps)


def gcn_layer(batch: GraphBatch, h_prev: np.ndarray, W, b):
    """ReLU(P h W^T + b) with P = D^-1/2 (A + I) D^-1/2 on the undirected chain."""
    if h_prev.shape[0] != batch.num_nodes:
        raise DimensionError(f"{h_prev.shape[0]} embeddings for {batch.num_nodes} nodes")
    mixed = batch.gcn_propagator() @ h_prev
    return nn.relu(nn.affine(mixed, W, b)), ("gcn", mixed)


@dataclass
class ForwardTrace:
    layer_embeddings: list[np.ndarray]
    pooled: list[np.ndarray]
    z_graph: np.ndarray
    z_dropped: np.ndarray
    logits: np.ndarray
    perm_seeds: list[int]
    _caches: list = field(default_factory=list, repr=False)
    _pool_args: list = field(default_factory=list, repr=False)
    _drop_mask: np.ndarray | None = None
    _batch: GraphBatch | None = None
    _config: ModelConfig | None = None

    def __post_init__(self):
        # the graph vector is exactly the sum of the per-layer pooled vectors
        total = self.pooled[0].copy()
        for p in self.pooled[1:]:
            total += p
        if not np.array_equal(total, self.z_graph):
            raise AssertionError("graph vector differs from the sum of pooled layer vectors")


def model_forward(batch: GraphBatch, store: nn.ParamStore, config: ModelConfig,
                  mode: str = "eval", seed: int = 0, epoch: int = 0) -> tuple[np.ndarray, ForwardTrace]:
    if batch.x.shape[1] != config.input_dim:
        raise DimensionError(f"node features have width {batch.x.shape[1]}, model expects {config.input_dim}")
    h = batch.x
    layers, caches, perm_seeds = [], [], []
    for k in range(1, config.K + 1):
        W, b = store[f"layer{k}.W"], store[f"layer{k}.b"]
        if config.layer_kind == "gcn":
            out, cache = gcn_layer(batch, h, W, b)
            perm_seeds.append(0)
        else:
            ps = derive_seed(seed, epoch, k)
            perm_seeds.append(ps)
            lstm = None
            if config.aggregator == "lstm":
                lstm = (store[f"layer{k}.lstm.Wx"], store[f"layer{k}.lstm.Wh"], store[f"layer{k}.lstm.b"])
            out, cache = sage_layer(batch, h, W, b, lstm, ps)
        caches.append(cache)
        layers.append(out)
        h = out

    pool_args = []
    if config.readout == "last_mean":
        p, a = _segment_pool(layers[-1], batch, "mean")
        pooled, pool_args = [p], [a]
    else:
        how = "mean" if config.readout == "hierarchical_mean" else "max"
        pooled = []
        for Hk in layers:
            p, a = _segment_pool(Hk, batch, how)
            pooled.append(p)
            pool_args.append(a)
    z = pooled[0].copy()
    for p in pooled[1:]:
        z += p

    zd, mask = nn.dropout(z, config.dropout_p, mode, derive_seed(seed, epoch, 0xD0))
    logits = nn.affine(zd, store["head.W"], store["head.b"])
    trace = ForwardTrace(layers, pooled, z, zd, logits, perm_seeds, caches, pool_args, mask, batch, config)
    return logits, trace


def model_backward(trace: ForwardTrace, dlogits: np.ndarray, store: nn.ParamStore) -> dict[str, np.ndarray]:
    config, batch = trace._config, trace._batch
    grads = {}
    dzd, grads["head.W"], grads["head.b"] = nn.affine_backward(dlogits, trace.z_dropped, store["head.W"])
    dz = nn.dropout_backward(dzd, trace._drop_mask)

    K = config.K
    dlayer = [None] * K
    if config.readout == "last_mean":
        dlayer[K - 1] = _segment_pool_backward(dz, None, batch, trace.layer_embeddings[-1].shape)
    else:
        for k in range(K):
            dlayer[k] = _segment_pool_backward(dz, trace._pool_args[k], batch, trace.layer_embeddings[k].shape)

    nbr, deg = batch.in_neighbors()
    for k in range(K, 0, -1):
        out = trace.layer_embeddings[k - 1]
        dout = dlayer[k - 1]
        if dout is None:
            dout = np.zeros_like(out)
        dpre = nn.relu_backward(dout, out)
        W = store[f"layer{k}.W"]
        cache = trace._caches[k - 1]
        if cache[0] == "gcn":
            mixed = cache[1]
            dmixed, grads[f"layer{k}.W"], grads[f"layer{k}.b"] = nn.affine_backward(dpre, mixed, W)
            dh = batch.gcn_propagator().T @ dmixed
        else:
            _, cat, order, steps = cache
            dcat, grads[f"layer{k}.W"], grads[f"layer{k}.b"] = nn.affine_backward(dpre, cat, W)
            d_in = cat.shape[1] - (config.hidden if config.aggregator == "lstm" else cat.shape[1] // 2)
            dh, dagg = nn.concat_backward(dcat, d_in)
            if config.aggregator == "lstm":
                dh_agg, dWx, dWh, db = _lstm_agg_backward(
                    dagg, steps, cat.shape[0], store[f"layer{k}.lstm.Wx"], store[f"layer{k}.lstm.Wh"])
                grads[f"layer{k}.lstm.Wx"], grads[f"layer{k}.lstm.Wh"], grads[f"layer{k}.lstm.b"] = dWx, dWh, db
            else:
                dh_agg = _mean_agg_backward(dagg, order, deg)
            dh = dh + dh_agg
        if k > 1:
            if dlayer[k - 2] is None:
                dlayer[k - 2] = dh
            else:
                dlayer[k - 2] = dlayer[k - 2] + dh
    return grads


def loss_and_grads(batch: GraphBatch, store: nn.ParamStore, config: ModelConfig,
                   mode: str = "train", seed: int = 0, epoch: int = 0):
    logits, trace = model_forward(batch, store, config, mode, seed, epoch)
    loss, dlogits = nn.softmax_cross_entropy(logits, batch.labels)
    return loss, model_backward(trace, dlogits, store), logits


def predict(logits: np.ndarray) -> np.ndarray:
    """Stego (1) only when its logit is strictly larger; ties go to cover."""
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"SAGE"
CKPT_VERSION = 1


def save_checkpoint(store: nn.ParamStore, config: ModelConfig, path) -> None:
    """Layout (little-endian): magic, u16 version, u32 config length, config
    text (sorted key=value lines), u32 tensor count, then per tensor u16 name
    length, name, u8 ndim, u32 dims, f64 values row-major."""
    cfg = config.encode().encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(cfg)), cfg,
             struct.pack("<I", len(store.params))]
    for name in sorted(store.params):
        arr = store.params[name]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[nn.ParamStore, ModelConfig]:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise BadMagicError("not a model checkpoint")
    try:
        version, cfg_len = struct.unpack_from("<HI", data, 4)
        if version != CKPT_VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, expected {CKPT_VERSION}")
        off = 10
        cfg_raw = data[off:off + cfg_len]
        if len(cfg_raw) != cfg_len:
            raise TruncatedFileError("checkpoint config truncated")
        off += cfg_len
        config = ModelConfig.decode(cfg_raw.decode("utf-8"))
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            n = int(np.prod(shape))
            if len(data) < off + 8 * n:
                raise TruncatedFileError(f"tensor {name!r} truncated")
            params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
    except struct.error as exc:
        raise TruncatedFileError(f"checkpoint truncated: {exc}") from exc
    if off != len(data):
        raise BadMagicError("trailing bytes after checkpoint tensors")
    want = param_shapes(config)
    got = {k: v.shape for k, v in params.items()}
    if got != want:
        raise ConfigMismatchError("checkpoint tensors disagree with its own config")
    if expected is not None and expected != config:
        diff = {k: (v, getattr(expected, k)) for k, v in asdict(config).items() if getattr(expected, k) != v}
        raise ConfigMismatchError(f"checkpoint config differs from requested: {diff}")
    return nn.ParamStore(params), config
