"""Training loop, evaluation metrics and embedding export."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .corpus import DatasetManifest, max_workers, parse_key_values
from .errors import NumericError, ValidationError
from .graph import StreamGraph, batch_graphs, build_graph
from .model import ModelConfig, _parse_value, init_params, loss_and_grads, model_forward, predict
from .seeding import derive_seed
from .streams import QisMatrix

log = logging.getLogger(__name__)

EVAL_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings. Defaults are the paper's Table 3.

    ``patience`` stops after that many epochs in which validation accuracy
    did not rise and validation loss did not fall by at least ``min_delta``;
    ``target_val_acc`` stops as soon as validation accuracy reaches it. Both
    are off by default.
    """

    lr: float = 0.003
    batch: int = 32
    epochs: int = 150
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    report_every: int = 1
    patience: int | None = None
    target_val_acc: float | None = None
    min_delta: float = 0.01

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 0 or self.report_every < 1:
            raise ValidationError("lr and batch must be positive, epochs >= 0, report_every >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValidationError("min_delta must be >= 0")
        if self.target_val_acc is not None and not 0.0 < self.target_val_acc <= 1.0:
            raise ValidationError("target_val_acc must be in (0, 1]")

    @property
    def dropout(self) -> float:
        return self.model.dropout_p


_TRAIN_KEYS = {"lr": float, "batch": int, "epochs": int, "seed": int, "report_every": int,
               "patience": int, "target_val_acc": float, "min_delta": float}


def parse_train_config(text: str) -> TrainConfig:
    """key=value text. Model keys (K, hidden, aggregator, ...) may be mixed in;
    ``dropout`` sets the model's dropout rate and ``variant`` picks an ablation row."""
    kv = parse_key_values(text)
    train, model = {}, {}
    variant = int(kv.pop("variant", 1))
    model_kinds = {f.name: f.type for f in fields(ModelConfig)}
    for key, raw in kv.items():
        if key in _TRAIN_KEYS:
            try:
                train[key] = None if raw.lower() == "none" else _TRAIN_KEYS[key](raw)
            except ValueError as exc:
                raise ValidationError(f"bad value for {key}: {raw!r}") from exc
        elif key == "dropout":
            model["dropout_p"] = float(raw)
        elif key in model_kinds:
            try:
                model[key] = _parse_value(raw, model_kinds[key])
            except ValueError as exc:
                raise ValidationError(f"bad value for {key}: {raw!r}") from exc
        else:
            raise ValidationError(f"unknown config key {key!r}")
    if "seed" in train and "seed" not in model:
        model["seed"] = train["seed"]
    return TrainConfig(model=ModelConfig.variant(variant, **model), **train)


def format_train_config(tc: TrainConfig) -> str:
    lines = [f"{k}={getattr(tc, k)}" for k in _TRAIN_KEYS]
    lines += [f"dropout={tc.model.dropout_p}"]
    lines += [line for line in tc.model.encode().splitlines() if not line.startswith("dropout_p=")]
    return "\n".join(lines) + "\n"


def to_graphs(items: Sequence[tuple[QisMatrix, int]], config: ModelConfig) -> list[StreamGraph]:
    return [build_graph(q, config.normalization, label, config.undirected) for q, label in items]


@dataclass
class TrainResult:
    final: nn.ParamStore
    best: nn.ParamStore
    best_epoch: int
    history: list[dict]
    config: TrainConfig


def _score(history_row):
    # higher validation accuracy wins; lower validation loss breaks ties
    return (history_row["val_acc"], -history_row["val_loss"])


def train(train_set: Sequence[StreamGraph], val_set: Sequence[StreamGraph], tc: TrainConfig) -> TrainResult:
    """Minibatch Adam on softmax cross-entropy.

    Epoch e shuffles with a seed derived from (seed, e); step s of that epoch
    draws its neighbour orders and dropout mask from (seed, e, s). The same
    inputs and config therefore give bit-identical parameters.
    """
    if not train_set or not val_set:
        raise ValidationError("training needs non-empty train and validation sets")
    for g in list(train_set) + list(val_set):
        if g.label is None:
            raise ValidationError("every training/validation graph needs a label")
    store = init_params(tc.model)
    best, best_epoch, history = store.copy(), 0, []
    best_row = None
    # patience tracks real progress separately from model selection, so a
    # loss that creeps down at saturated accuracy does not keep training alive
    stale, top_acc, low_loss = 0, -1.0, np.inf
    n = len(train_set)
    for epoch in range(1, tc.epochs + 1):
        order = np.random.default_rng(derive_seed(tc.seed, epoch, 0x5F)).permutation(n)
        losses, weights = [], []
        for step, start in enumerate(range(0, n, tc.batch)):
            chunk = [train_set[j] for j in order[start:start + tc.batch]]
            batch = batch_graphs(chunk)
            loss, grads, _ = loss_and_grads(batch, store, tc.model, "train",
                                            derive_seed(tc.seed, epoch), step)
            if not np.isfinite(loss):
                raise NumericError(f"loss became {loss} at epoch {epoch}, step {step}")
            nn.adam_step(store, grads, tc.lr)
            losses.append(loss)
            weights.append(len(chunk))
        val = evaluate(store, tc.model, val_set)
        row = {"epoch": epoch, "train_loss": float(np.average(losses, weights=weights)),
               "val_acc": val.accuracy, "val_loss": val.loss}
        history.append(row)
        if epoch % tc.report_every == 0:
            log.info("epoch %d  train_loss %.4f  val_acc %.4f  val_loss %.4f",
                     epoch, row["train_loss"], row["val_acc"], row["val_loss"])
        if best_row is None or _score(row) > _score(best_row):
            best, best_epoch, best_row = store.copy(), epoch, row
        if row["val_acc"] > top_acc or row["val_loss"] < low_loss - tc.min_delta:
            stale = 0
            top_acc = max(top_acc, row["val_acc"])
            low_loss = min(low_loss, row["val_loss"])
        else:
            stale += 1
        if tc.target_val_acc is not None and row["val_acc"] >= tc.target_val_acc:
            break
        if tc.patience is not None and stale >= tc.patience:
            break
    return TrainResult(store, best, best_epoch, history, tc)


# -- evaluation -------------------------------------------------------------

@dataclass
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()
    loss: float = float("nan")
    loss_history: list[float] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def format(self) -> str:
        lines = [f"TP={self.tp} TN={self.tn} FP={self.fp} FN={self.fn}",
                 f"accuracy={100 * self.accuracy:.2f}%  precision={100 * self.precision:.2f}%  "
                 f"recall={100 * self.recall:.2f}%  f1={100 * self.f1:.2f}%"]
        if self.degenerate:
            lines.append("degenerate (zero denominator, reported as 0): " + ", ".join(self.degenerate))
        return "\n".join(lines)


def metrics_from_counts(tp: int, tn: int, fp: int, fn: int, loss: float = float("nan"),
                        loss_history: Sequence[float] = ()) -> MetricsReport:
    """Confusion counts -> metrics. Zero denominators give 0 and are flagged."""
    if min(tp, tn, fp, fn) < 0:
        raise ValidationError("confusion counts must be non-negative")
    if tp + tn + fp + fn == 0:
        raise ValidationError("cannot compute metrics over an empty set")
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    acc = (tp + tn) / (tp + tn + fp + fn)
    prec = ratio(tp, tp + fp, "precision")
    rec = ratio(tp, tp + fn, "recall")
    f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1")
    return MetricsReport(tp, tn, fp, fn, acc, prec, rec, f1, tuple(degenerate), loss, list(loss_history))


def infer_logits(store: nn.ParamStore, config: ModelConfig, graphs: Sequence[StreamGraph],
                 batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode logits, batched; batches may run on worker threads."""
    chunks = [graphs[s:s + batch_size] for s in range(0, len(graphs), batch_size)]

    def run(chunk):
        return model_forward(batch_graphs(chunk), store, config, "eval")[0]

    workers = min(max_workers(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts)


def evaluate(store: nn.ParamStore, config: ModelConfig, graphs: Sequence[StreamGraph],
             loss_history: Sequence[float] = ()) -> MetricsReport:
    if not graphs:
        raise ValidationError("cannot evaluate an empty split")
    labels = np.array([g.label for g in graphs])
    if np.any(labels == None):  # noqa: E711
        raise ValidationError("evaluation graphs need labels")
    labels = labels.astype(np.int64)
    logits = infer_logits(store, config, graphs)
    loss, _ = nn.softmax_cross_entropy(logits, labels)
    pred = predict(logits)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    return metrics_from_counts(tp, tn, fp, fn, loss, loss_history)


def graph_embeddings(store: nn.ParamStore, config: ModelConfig, graphs: Sequence[StreamGraph]) -> np.ndarray:
    out = []
    for s in range(0, len(graphs), EVAL_BATCH):
        _, trace = model_forward(batch_graphs(graphs[s:s + EVAL_BATCH]), store, config, "eval")
        out.append(trace.z_graph)
    return np.concatenate(out) if out else np.zeros((0, config.hidden))


def export_embeddings(store: nn.ParamStore, config: ModelConfig, graphs: Sequence[StreamGraph], path) -> int:
    """One text row per graph: label then the graph vector. Returns row count."""
    z = graph_embeddings(store, config, graphs)
    labels = np.array([-1 if g.label is None else g.label for g in graphs], dtype=np.float64)
    rows = np.column_stack([labels, z]) if len(graphs) else np.zeros((0, config.hidden + 1))
    header = "label " + " ".join(f"z{j}" for j in range(config.hidden))
    fmt = ["%d"] + ["%.17g"] * config.hidden
    np.savetxt(Path(path), rows, fmt=fmt, header=header)
    return len(graphs)


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1:]


def manifest_graphs(manifest: DatasetManifest, split: str, config: ModelConfig) -> list[StreamGraph]:
    return to_graphs(manifest.load(split), config)


def train_manifest(manifest: DatasetManifest, tc: TrainConfig) -> TrainResult:
    return train(manifest_graphs(manifest, "train", tc.model), manifest_graphs(manifest, "val", tc.model), tc)


__all__ = [
    "TrainConfig", "TrainResult", "MetricsReport", "train", "train_manifest", "evaluate",
    "metrics_from_counts", "infer_logits", "graph_embeddings", "export_embeddings", "read_embeddings",
    "parse_train_config", "format_train_config", "to_graphs", "manifest_graphs",
]
