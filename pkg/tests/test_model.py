import numpy as np
import pytest

from stegsage import nn
from stegsage.errors import BadMagicError, ConfigMismatchError, TruncatedFileError, ValidationError, VersionMismatchError
from stegsage.gradcheck import numeric_grad, rel_error
from stegsage.graph import batch_graphs, build_graph
from stegsage.model import (
    VARIANTS,
    ForwardTrace,
    ModelConfig,
    gcn_layer,
    init_params,
    load_checkpoint,
    loss_and_grads,
    lstm_aggregate,
    model_forward,
    param_count,
    param_shapes,
    permute_neighbors,
    predict,
    readout,
    sage_layer,
    save_checkpoint,
    zeros_like_params,
)
from stegsage.streams import QisMatrix


def qis(T, seed=0, sizes=(8, 4, 4)):
    rng = np.random.default_rng(seed)
    return QisMatrix(np.stack([rng.integers(0, s, T) for s in sizes]), sizes)


def graphs(sizes, seed=0, undirected=False):
    return [build_graph(qis(T, seed + j), label=j % 2, undirected=undirected) for j, T in enumerate(sizes)]


def jitter_biases(store, seed=1):
    rng = np.random.default_rng(seed)
    for k in store.params:
        if k.endswith(".b"):
            store.params[k] = rng.normal(0, 0.3, store.params[k].shape)
    return store


# -- config ------------------------------------------------------------------------

def test_variants_match_ablation_rows():
    assert ModelConfig.variant(1) == ModelConfig()
    d = ModelConfig()
    assert (d.K, d.hidden, d.aggregator, d.layer_kind, d.readout, d.dropout_p) == (3, 64, "lstm", "sage",
                                                                                  "hierarchical_mean", 0.3)
    assert ModelConfig.variant(2).readout == "last_mean"
    assert ModelConfig.variant(3).aggregator == "mean"
    assert ModelConfig.variant(4).readout == "hierarchical_max"
    assert ModelConfig.variant(5).layer_kind == "gcn"
    assert ModelConfig.variant(7).K == 2 and ModelConfig.variant(8).K == 4
    with pytest.raises(ValidationError):
        ModelConfig.variant(6)


def test_config_validation_and_encoding():
    for bad in (dict(K=0), dict(hidden=0), dict(aggregator="max"), dict(readout="sum"), dict(dropout_p=1.0),
                dict(classes=3), dict(layer_kind="gat"), dict(normalization="z")):
        with pytest.raises(ValidationError):
            ModelConfig(**bad)
    cfg = ModelConfig(K=2, hidden=7, aggregator="mean", dropout_p=0.25, undirected=True, seed=9)
    assert ModelConfig.decode(cfg.encode()) == cfg
    with pytest.raises(ValidationError):
        ModelConfig.decode("nonsense=1\n")


def test_param_count():
    cfg = ModelConfig()
    shapes = param_shapes(cfg)
    assert np.prod(shapes["head.W"]) + np.prod(shapes["head.b"]) == 130
    assert param_count(ModelConfig.variant(7)) < param_count(ModelConfig.variant(1)) < param_count(
        ModelConfig.variant(8))
    # layer 1: LSTM(3 -> 64) + W(64 x 67); layers 2-3: LSTM(64 -> 64) + W(64 x 128)
    lstm1 = 4 * 64 * 3 + 4 * 64 * 64 + 4 * 64
    lstm2 = 4 * 64 * 64 * 2 + 4 * 64
    dense = 64 * 67 + 64 + 2 * (64 * 128 + 64)
    assert param_count(cfg) == lstm1 + 2 * lstm2 + dense + 130
    assert init_params(cfg).num_scalars() == param_count(cfg)


# -- aggregation --------------------------------------------------------------------

def test_lstm_aggregate_conventions():
    H, d = 4, 3
    rng = np.random.default_rng(0)
    Wx, Wh, b = rng.normal(size=(4 * H, d)), rng.normal(size=(4 * H, H)), rng.normal(size=4 * H)
    assert np.array_equal(lstm_aggregate(np.zeros((0, d)), Wx, Wh, b), np.zeros(H))
    x = rng.normal(size=(1, d))
    h, _, _ = nn.lstm_cell(x, None, None, Wx, Wh, b)
    assert np.array_equal(lstm_aggregate(x, Wx, Wh, b, perm_seed=123), h[0])


def test_lstm_aggregate_two_neighbours_hand_trace():
    H, d = 4, 3
    rng = np.random.default_rng(1)
    Wx, Wh, b = rng.normal(size=(4 * H, d)), rng.normal(size=(4 * H, H)), rng.normal(size=4 * H)
    nbrs = rng.normal(size=(2, d))
    seen = set()
    for seed in range(20):
        order = permute_neighbors(np.array([[0, 1]]), np.array([2]), np.array([0]), seed)[0]
        seen.add(tuple(order))
        h1, c1, _ = nn.lstm_cell(nbrs[order[0]][None], None, None, Wx, Wh, b)
        h2, _, _ = nn.lstm_cell(nbrs[order[1]][None], h1, c1, Wx, Wh, b)
        assert np.array_equal(lstm_aggregate(nbrs, Wx, Wh, b, seed), h2[0])
    assert seen == {(0, 1), (1, 0)}


def test_permutation_keeps_padding_last_and_is_a_permutation():
    nbr = np.array([[3, 5, -1], [7, -1, -1], [1, 2, 4]])
    deg = np.array([2, 1, 3])
    out = permute_neighbors(nbr, deg, np.array([0, 1, 2]), 99)
    for row_in, row_out, d in zip(nbr, out, deg):
        assert sorted(row_out[:d]) == sorted(row_in[:d])
        assert np.all(row_out[d:] == -1)


def test_sage_layer_conventions():
    cfg = ModelConfig(K=1, hidden=5, seed=2)
    store = jitter_biases(init_params(cfg))
    g = build_graph(qis(1))
    b = batch_graphs([g])
    W, bias = store["layer1.W"], store["layer1.b"]
    lstm = (store["layer1.lstm.Wx"], store["layer1.lstm.Wh"], store["layer1.lstm.b"])
    out, _ = sage_layer(b, b.x, W, bias, lstm)
    assert np.allclose(out, np.maximum(np.concatenate([b.x, np.zeros((1, 5))], 1) @ W.T + bias, 0), atol=1e-15)
    big = batch_graphs(graphs([3, 4]))
    out, _ = sage_layer(big, big.x, np.zeros_like(W), np.zeros_like(bias), lstm)
    assert np.all(out == 0)


def test_gcn_layer_oracles():
    H = 3
    W = np.random.default_rng(0).normal(size=(H, 3))
    one = batch_graphs([build_graph(qis(1))])
    out, _ = gcn_layer(one, one.x, W, np.zeros(H))
    assert np.allclose(out, np.maximum(one.x @ W.T, 0))
    two = batch_graphs([build_graph(qis(2))])
    out, _ = gcn_layer(two, two.x, np.eye(3), np.zeros(3))
    assert np.allclose(out, np.tile(two.x.mean(0), (2, 1)))  # both rows mix self + neighbour by 1/2
    five = batch_graphs([build_graph(qis(5, 3))])
    A = np.eye(5) + np.eye(5, k=1) + np.eye(5, k=-1)
    d = A.sum(1)
    out, _ = gcn_layer(five, five.x, np.eye(3), np.zeros(3))
    assert np.allclose(out, (A / np.sqrt(np.outer(d, d))) @ five.x)


# -- readout ------------------------------------------------------------------------

def test_readout_single_node_and_k1():
    b = batch_graphs([build_graph(qis(1))])
    layers = [np.array([[1.0, -2.0]]), np.array([[0.5, 3.0]])]
    z, pooled = readout(layers, "hierarchical_mean", b)
    assert z.tolist() == [[1.5, 1.0]]
    b2 = batch_graphs(graphs([3, 2]))
    H1 = np.random.default_rng(0).normal(size=(5, 4))
    assert np.array_equal(readout([H1], "hierarchical_mean", b2)[0], readout([H1], "last_mean", b2)[0])


def test_readout_max_and_relabeling_invariance():
    b = batch_graphs(graphs([4]))
    H = np.random.default_rng(2).normal(size=(4, 3))
    perm = np.array([2, 0, 3, 1])
    for mode in ("hierarchical_mean", "hierarchical_max", "last_mean"):
        assert np.allclose(readout([H], mode, b)[0], readout([H[perm]], mode, b)[0], atol=1e-15)
    assert np.array_equal(readout([H], "hierarchical_max", b)[0][0], H.max(0))


# -- forward ------------------------------------------------------------------------

@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_forward_shapes_and_hierarchical_identity(variant):
    cfg = ModelConfig.variant(variant, hidden=6, seed=1)
    b = batch_graphs(graphs([3, 5, 1]))
    logits, trace = model_forward(b, init_params(cfg), cfg)
    assert logits.shape == (3, 2)
    assert len(trace.layer_embeddings) == cfg.K
    assert np.array_equal(trace.z_graph, sum(trace.pooled[1:], trace.pooled[0]))
    if cfg.readout != "last_mean":
        assert len(trace.pooled) == cfg.K
    with pytest.raises(AssertionError):
        ForwardTrace(trace.layer_embeddings, trace.pooled, trace.z_graph + 1.0, trace.z_dropped, logits, [])


def test_eval_determinism_and_zero_params():
    cfg = ModelConfig(hidden=5)
    b = batch_graphs(graphs([4, 2]))
    store = init_params(cfg)
    assert np.array_equal(model_forward(b, store, cfg)[0], model_forward(b, store, cfg)[0])
    logits, _ = model_forward(b, zeros_like_params(cfg), cfg)
    assert np.all(logits == 0)
    assert np.allclose(nn.softmax(logits), 0.5)
    assert predict(logits).tolist() == [0, 0]


def test_predict_rule():
    logits = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [-1.0, -0.5]])
    assert predict(logits).tolist() == [1, 0, 0, 1]
    for c in (1e-3, 0.5, 7.0, 1e6):
        assert np.array_equal(predict(c * logits), predict(logits))


@pytest.mark.parametrize("variant", sorted(VARIANTS))
@pytest.mark.parametrize("undirected", [False, True])
def test_batched_equals_per_graph(variant, undirected):
    cfg = ModelConfig.variant(variant, hidden=5, seed=3, undirected=undirected)
    store = jitter_biases(init_params(cfg))
    gs = graphs([2, 3, 1, 4], seed=7, undirected=undirected)
    batched, _ = model_forward(batch_graphs(gs), store, cfg)
    single = np.concatenate([model_forward(batch_graphs([g]), store, cfg)[0] for g in gs])
    assert np.max(np.abs(batched - single)) <= 1e-9


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_end_to_end_gradients(variant):
    cfg = ModelConfig.variant(variant, hidden=4, seed=5)
    store = jitter_biases(init_params(cfg), seed=variant)
    b = batch_graphs(graphs([3, 4], seed=11))
    _, grads, _ = loss_and_grads(b, store, cfg, "train", seed=2)
    assert set(grads) == set(store.params)
    loss = lambda: loss_and_grads(b, store, cfg, "train", seed=2)[0]
    for name, p in store.params.items():
        assert rel_error(grads[name], numeric_grad(loss, p)) < 1e-4, name


def test_train_mode_dropout_changes_with_seed_only():
    cfg = ModelConfig(hidden=6, dropout_p=0.5)
    b = batch_graphs(graphs([3, 3]))
    store = jitter_biases(init_params(cfg))
    a, _ = model_forward(b, store, cfg, "train", seed=1)
    a2, _ = model_forward(b, store, cfg, "train", seed=1)
    c, _ = model_forward(b, store, cfg, "train", seed=2)
    assert np.array_equal(a, a2) and not np.array_equal(a, c)


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(hidden=5, K=2, seed=4)
    store = jitter_biases(init_params(cfg))
    path = tmp_path / "m.sage"
    save_checkpoint(store, cfg, path)
    back, cfg2 = load_checkpoint(path, expected=cfg)
    assert cfg2 == cfg
    b = batch_graphs(graphs([3, 2]))
    assert np.array_equal(model_forward(b, store, cfg)[0], model_forward(b, back, cfg2)[0])
    assert path.read_bytes()[:4] == b"SAGE"


def test_checkpoint_errors(tmp_path):
    cfg = ModelConfig(hidden=3)
    path = tmp_path / "m.sage"
    save_checkpoint(init_params(cfg), cfg, path)
    raw = path.read_bytes()
    for cut in (3, 8, 20, len(raw) - 1):
        (tmp_path / "t.sage").write_bytes(raw[:cut])
        with pytest.raises((TruncatedFileError, BadMagicError)):
            load_checkpoint(tmp_path / "t.sage")
    (tmp_path / "t.sage").write_bytes(raw[:len(raw) - 1])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(tmp_path / "t.sage")
    (tmp_path / "v.sage").write_bytes(raw[:4] + b"\x02\x00" + raw[6:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "v.sage")
    (tmp_path / "m.bad").write_bytes(b"EGAS" + raw[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(tmp_path / "m.bad")
    full = ModelConfig.variant(1)
    save_checkpoint(init_params(full), full, path)
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(path, expected=ModelConfig.variant(7))
