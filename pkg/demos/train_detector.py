"""Train a small detector on a synthetic corpus and look at what it learned.

Uses a reduced corpus and model so it finishes in a few minutes on one core;
the acceptance suite runs the full-size experiments.

Run: python3 demos/train_detector.py
"""

import logging

import numpy as np

from stegsage import DatasetManifest, ModelConfig, TrainConfig, assign_splits, evaluate, synth_corpus, to_graphs, train
from stegsage.training import graph_embeddings

logging.basicConfig(level=logging.INFO, format="%(message)s")

corpus = synth_corpus(n_cover=200, n_stego=200, T=100, rate=1.0, seed=1)
manifest = assign_splits(DatasetManifest(corpus.entries), split_seed=0)
items = {e.path: item for e, item in zip(corpus.entries, corpus.items)}

model = ModelConfig(hidden=32)
sets = {s: to_graphs([items[e.path] for e in manifest.split(s)], model) for s in ("train", "val", "test")}
print({s: len(g) for s, g in sets.items()})

result = train(sets["train"], sets["val"], TrainConfig(epochs=20, model=model, patience=5, target_val_acc=1.0))
print(f"best validation epoch: {result.best_epoch}")
print(evaluate(result.best, model, sets["test"]).format())

# graph-level vectors: stego and cover centroids drift apart as training proceeds
labels = np.array([g.label for g in sets["test"]])
for name, store in (("untrained", train(sets["train"], sets["val"], TrainConfig(epochs=0, model=model)).best),
                    ("trained", result.best)):
    z = graph_embeddings(store, model, sets["test"])
    gap = np.linalg.norm(z[labels == 1].mean(0) - z[labels == 0].mean(0))
    print(f"{name:9s} centroid distance {gap:.4f}")
