"""Quantization index modulation over the three LSF codebooks.

Each codebook is split into 2**n_bits disjoint sub-codebooks. Embedding a
group of n bits means quantizing against the sub-codebook those bits index;
the receiver reads the bits back from which sub-codebook the index falls in.

The split follows the complementary-neighbour rule: every codeword's nearest
neighbour sits in the other half, so a forced switch of halves costs roughly
one neighbour step of distortion.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .streams import N_CODEWORDS, CodebookSet, LatentSequence, QisMatrix, nearest_index, quantize_cover


class PartitionError(ValidationError):
    """No balanced split satisfies the complementary-neighbour constraint."""


@dataclass
class CodebookPartition:
    n_bits: int
    assignment: list[np.ndarray]

    @property
    def n_parts(self) -> int:
        return 1 << self.n_bits

    @property
    def parts(self) -> list[list[np.ndarray]]:
        return [[np.flatnonzero(a == p) for p in range(self.n_parts)] for a in self.assignment]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.assignment)


def nearest_neighbours(vectors: np.ndarray) -> np.ndarray:
    """Nearest other vector for each row; ties go to the lowest index."""
    d2 = np.sum((vectors[:, None, :] - vectors[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    return np.argmin(d2, axis=1)


def _bisect(vectors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Balanced 2-colouring where each vertex's nearest neighbour is opposite.

    The nearest-neighbour graph is a forest of components, each with one
    mutual pair, so its 2-colouring is forced up to a flip per component.
    Balance is then a subset-sum over the per-component colour counts.
    """
    m = len(vectors)
    nn = nearest_neighbours(vectors)
    adj = [[] for _ in range(m)]
    for v, u in enumerate(nn):
        adj[v].append(int(u))
        adj[int(u)].append(v)

    colour = np.full(m, -1)
    comps = []
    for start in range(m):
        if colour[start] >= 0:
            continue
        colour[start] = 0
        members = [start]
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if colour[u] < 0:
                    colour[u] = 1 - colour[v]
                    members.append(u)
                    queue.append(u)
                elif colour[u] == colour[v]:
                    raise PartitionError("nearest-neighbour graph has an odd cycle")
        comps.append(np.array(members))

    order = rng.permutation(len(comps))
    zeros = [int(np.sum(colour[comps[j]] == 0)) for j in order]
    sizes = [len(comps[j]) for j in order]

    # reach[j] maps achievable colour-0 totals after j components to the flip that got there
    reach = [{0: None}]
    for z, s in zip(zeros, sizes):
        nxt = {}
        for total in reach[-1]:
            nxt.setdefault(total + z, (total, False))
            nxt.setdefault(total + s - z, (total, True))
        reach.append(nxt)
    targets = [m // 2, (m + 1) // 2]
    if rng.random() < 0.5:
        targets.reverse()
    target = next((t for t in targets if t in reach[-1]), None)
    if target is None:
        best = min(reach[-1], key=lambda t: abs(2 * t - m))
        raise PartitionError(
            f"best balanced CNV split of {m} codewords is {best}/{m - best}; imbalance exceeds 1")

    total = target
    for j in range(len(order), 0, -1):
        prev, flip = reach[j][total]
        if flip:
            colour[comps[order[j - 1]]] ^= 1
        total = prev
    return colour


def _split(vectors: np.ndarray, idx: np.ndarray, depth: int, rng) -> np.ndarray:
    if depth == 0:
        return np.zeros(len(idx), dtype=np.int64)
    # a parent split can leave halves with no balanced split of their own;
    # redraw the parent (random component order) a bounded number of times
    for _ in range(10 * len(idx)):
        colour = _bisect(vectors[idx], rng)
        out = np.empty(len(idx), dtype=np.int64)
        try:
            for c in (0, 1):
                sel = colour == c
                out[sel] = (c << (depth - 1)) + _split(vectors, idx[sel], depth - 1, rng)
        except PartitionError:
            continue
        return out
    raise PartitionError(f"no {depth}-level split of {len(idx)} codewords found after bounded retries")


def cnv_partition(codebooks: CodebookSet, n_bits: int = 1, seed: int = 0) -> CodebookPartition:
    if n_bits < 1:
        raise ValidationError("n_bits must be >= 1")
    rng = np.random.default_rng(seed)
    assignment = []
    for i, book in enumerate(codebooks.books):
        if len(book) < (1 << n_bits):
            raise PartitionError(f"codebook {i} has {len(book)} vectors, need >= {1 << n_bits}")
        assignment.append(_split(book, np.arange(len(book)), n_bits, rng))
    return CodebookPartition(n_bits, assignment)


@dataclass
class EmbedPlan:
    rate: float
    n_bits: int
    selected: np.ndarray
    payload: np.ndarray
    seed: int

    @property
    def bits_per_frame(self) -> int:
        return N_CODEWORDS * self.n_bits

    def mask_digest(self) -> str:
        return hashlib.sha256(np.packbits(self.selected.astype(np.uint8)).tobytes()).hexdigest()


@dataclass
class StegoStream:
    qis: QisMatrix
    plan: EmbedPlan | None
    label: str = "stego"


def _check_partition(codebooks: CodebookSet, partition: CodebookPartition):
    if partition.sizes != codebooks.sizes:
        raise DimensionError(f"partition sizes {partition.sizes} != codebook sizes {codebooks.sizes}")


def qim_embed(latents: LatentSequence, codebooks: CodebookSet, partition: CodebookPartition,
              rate: float, payload_seed: int, payload: np.ndarray | None = None) -> StegoStream:
    """Quantize ``latents`` while hiding bits in a Bernoulli(rate) subset of frames.

    Selection and payload both come from ``payload_seed`` unless a payload is
    given explicitly (its length must then match the selection).
    """
    if not 0.0 < rate <= 1.0:
        raise ValidationError(f"embedding rate must be in (0, 1], got {rate}")
    _check_partition(codebooks, partition)
    rng = np.random.default_rng(payload_seed)
    selected = rng.random(latents.T) < rate
    n_sel = int(selected.sum())
    nb = partition.n_bits
    if payload is None:
        payload = rng.integers(0, 2, size=n_sel * N_CODEWORDS * nb, dtype=np.uint8)
    else:
        payload = np.asarray(payload, dtype=np.uint8)
        if payload.size != n_sel * N_CODEWORDS * nb:
            raise ValidationError(f"payload has {payload.size} bits, plan needs {n_sel * N_CODEWORDS * nb}")

    cover = quantize_cover(latents, codebooks)
    indices = cover.indices.copy()
    if n_sel:
        weights = 1 << np.arange(nb - 1, -1, -1)
        part_ids = payload.reshape(n_sel, N_CODEWORDS, nb) @ weights
        frames = np.flatnonzero(selected)
        for i, (track, book) in enumerate(zip(latents.vectors, codebooks.books)):
            parts = [np.flatnonzero(partition.assignment[i] == p) for p in range(partition.n_parts)]
            for p, members in enumerate(parts):
                rows = frames[part_ids[:, i] == p]
                if rows.size:
                    indices[i, rows] = nearest_index(track[rows], book, members)
    qis = QisMatrix(indices, codebooks.sizes, latents.frame_duration_ms)
    plan = EmbedPlan(float(rate), nb, selected, payload, int(payload_seed))
    return StegoStream(qis, plan, "stego")


def qim_extract(stream: StegoStream, partition: CodebookPartition) -> np.ndarray:
    plan = stream.plan
    if plan is None:
        raise ValidationError("extraction needs the embedding plan")
    frames = np.flatnonzero(plan.selected)
    nb = partition.n_bits
    if frames.size == 0:
        return np.zeros(0, dtype=np.uint8)
    ids = np.empty((frames.size, N_CODEWORDS), dtype=np.int64)
    for i in range(N_CODEWORDS):
        idx = stream.qis.indices[i, frames]
        if np.any(idx >= len(partition.assignment[i])):
            raise ValidationError(f"index not covered by partition of codebook {i}")
        ids[:, i] = partition.assignment[i][idx]
    shifts = np.arange(nb - 1, -1, -1)
    bits = (ids[:, :, None] >> shifts) & 1
    return bits.reshape(-1).astype(np.uint8)
