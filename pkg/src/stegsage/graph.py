"""QIS matrix -> chain graph, and disjoint-union batching of graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .streams import QisMatrix

COVER, STEGO = 0, 1


@dataclass
class StreamGraph:
    """One node per frame carrying its three codeword indices.

    ``edges`` holds zero-based (source, target) pairs. The default chain is
    directed, frame i -> frame i+1; ``undirected`` graphs list both
    directions of every link.
    """

    node_features: np.ndarray
    edges: np.ndarray
    label: int | None = None
    undirected: bool = False

    @property
    def T(self) -> int:
        return self.node_features.shape[0]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.T, self.T))
        if len(self.edges):
            A[self.edges[:, 0], self.edges[:, 1]] = 1.0
        return A


def chain_edges(T: int, undirected: bool = False) -> np.ndarray:
    src = np.arange(T - 1)
    fwd = np.stack([src, src + 1], axis=1)
    if undirected:
        return np.concatenate([fwd, fwd[:, ::-1]])
    return fwd


def build_graph(q: QisMatrix, normalization: str = "scaled", label: int | None = None,
                undirected: bool = False) -> StreamGraph:
    x = q.indices.T.astype(np.float64)
    if normalization == "scaled":
        denom = np.maximum(np.array(q.sizes, dtype=np.float64) - 1.0, 1.0)
        x = x / denom
    elif normalization != "raw":
        raise ValidationError(f"unknown normalization {normalization!r}")
    if label is not None and label not in (COVER, STEGO):
        raise ValidationError(f"label must be 0 (cover) or 1 (stego), got {label}")
    return StreamGraph(x, chain_edges(q.T, undirected), label, undirected)


@dataclass
class GraphBatch:
    x: np.ndarray
    edges: np.ndarray
    graph_sizes: np.ndarray
    labels: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.graph_sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.graph_sizes)[:-1]]).astype(np.int64)

    @property
    def graph_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_graphs), self.graph_sizes)

    @property
    def local_index(self) -> np.ndarray:
        return np.arange(self.num_nodes) - np.repeat(self.offsets, self.graph_sizes)

    def in_neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded in-neighbour table ``nbr[v, j]`` (-1 padding) and in-degrees."""
        if "nbr" not in self._cache:
            n = self.num_nodes
            src, dst = self.edges[:, 0], self.edges[:, 1]
            deg = np.bincount(dst, minlength=n)
            width = int(deg.max()) if len(deg) and deg.size else 0
            nbr = np.full((n, max(width, 0)), -1, dtype=np.int64)
            if len(dst):
                order = np.argsort(dst, kind="stable")
                d, s = dst[order], src[order]
                starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
                slot = np.arange(len(d)) - starts[d]
                nbr[d, slot] = s
            self._cache["nbr"] = (nbr, deg)
        return self._cache["nbr"]

    def gcn_propagator(self) -> sp.csr_matrix:
        """D^-1/2 (A + I) D^-1/2 on the undirected lift of the edge set."""
        if "gcn" not in self._cache:
            n = self.num_nodes
            A = sp.coo_matrix((np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])),
                              shape=(n, n)).tocsr()
            A = ((A + A.T) > 0).astype(np.float64) + sp.identity(n, format="csr")
            dinv = 1.0 / np.sqrt(np.asarray(A.sum(axis=1)).ravel())
            D = sp.diags(dinv)
            self._cache["gcn"] = (D @ A @ D).tocsr()
        return self._cache["gcn"]


def batch_graphs(graphs: Sequence[StreamGraph]) -> GraphBatch:
    if not graphs:
        raise ValidationError("cannot batch an empty list of graphs")
    sizes = np.array([g.T for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    x = np.concatenate([g.node_features for g in graphs])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)]).astype(np.int64)
    edges = edges.reshape(-1, 2)
    labels = np.array([-1 if g.label is None else g.label for g in graphs], dtype=np.int64)
    return GraphBatch(x, edges, sizes, labels)
