"""Synthetic cover streams and quantization index sequences (QIS).

A stream is modelled as three latent vectors per frame, one per LSF
codebook. Each latent follows a stationary AR(1) process around a per-stream
anchor; quantizing it against the codebooks gives the 3 x T index matrix that
every other module consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .seeding import derive_seed
from .errors import (
    BadMagicError,
    DimensionError,
    IndexRangeError,
    TruncatedFileError,
    ValidationError,
)

N_CODEWORDS = 3
DEFAULT_SIZES = (128, 32, 32)
DEFAULT_DIMS = (10, 5, 5)
FRAME_MS = 10.0

QIS_MAGIC = b"QIS1"
CBK_MAGIC = b"CBK1"
_QIS_HEADER = struct.Struct("<4sB3HIH")


@dataclass
class CodebookSet:
    books: list[np.ndarray]

    def __post_init__(self):
        self.books = [np.ascontiguousarray(b, dtype=np.float64) for b in self.books]
        if len(self.books) != N_CODEWORDS:
            raise ValidationError(f"expected {N_CODEWORDS} codebooks, got {len(self.books)}")
        for i, b in enumerate(self.books):
            if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
                raise ValidationError(f"codebook {i} must be a non-empty [size x dim] matrix")
            if not np.all(np.isfinite(b)):
                raise ValidationError(f"codebook {i} has non-finite entries")
            if len(np.unique(b, axis=0)) != len(b):
                raise ValidationError(f"codebook {i} contains duplicate vectors")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.books)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.books)


def make_codebooks(sizes: Sequence[int] = DEFAULT_SIZES, dims: Sequence[int] = DEFAULT_DIMS,
                   seed: int = 0, min_separation: float = 0.1,
                   partition_bits: int = 1, max_draws: int = 200) -> CodebookSet:
    """Draw codebooks uniformly in the unit hypercube.

    Candidates closer than ``min_separation`` to an accepted vector are
    rejected. With ``partition_bits`` > 0 a codebook is redrawn (from a seed
    derived from ``seed`` and the draw number) until a balanced
    complementary-neighbour split of that depth exists for it; arbitrary
    random point sets often admit none.
    """
    if len(sizes) != N_CODEWORDS or len(dims) != N_CODEWORDS:
        raise ValidationError("need three sizes and three dims")
    books = []
    for pos, (size, dim) in enumerate(zip(sizes, dims)):
        for draw in range(max_draws):
            rng = np.random.default_rng(seed if draw == 0 else derive_seed(seed, pos, draw))
            book = _draw_separated(rng, size, dim, min_separation)
            if partition_bits <= 0 or _splittable(book, partition_bits):
                break
        else:
            raise ValidationError(
                f"no {partition_bits}-bit partitionable codebook of size {size} in {max_draws} draws")
        books.append(book)
    return CodebookSet(books)


def _draw_separated(rng, size, dim, min_separation):
    accepted = np.empty((size, dim))
    n = 0
    attempts = 0
    while n < size:
        attempts += 1
        if attempts > 1000 * size:
            raise ValidationError(
                f"cannot place {size} vectors in [0,1]^{dim} with separation {min_separation}")
        cand = rng.random(dim)
        if n and np.min(np.sum((accepted[:n] - cand) ** 2, axis=1)) < min_separation ** 2:
            continue
        accepted[n] = cand
        n += 1
    return accepted


def _splittable(book, n_bits):
    from .qim import PartitionError, _split

    if len(book) < (1 << n_bits):
        return False
    try:
        _split(book, np.arange(len(book)), n_bits, np.random.default_rng(0))
    except PartitionError:
        return False
    return True


@dataclass
class CoverSourceConfig:
    ar_coefficient: tuple[float, float, float] = (0.9, 0.9, 0.9)
    noise_scale: tuple[float, float, float] = (0.05, 0.05, 0.05)
    anchor_spread: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.ar_coefficient = _triple(self.ar_coefficient, "ar_coefficient")
        self.noise_scale = _triple(self.noise_scale, "noise_scale")
        for a in self.ar_coefficient:
            if not 0.0 <= a < 1.0:
                raise ValidationError(f"ar_coefficient must lie in [0, 1), got {a}")
        for s in self.noise_scale:
            if not (s > 0 and np.isfinite(s)):
                raise ValidationError(f"noise_scale must be positive, got {s}")
        if not (self.anchor_spread > 0 and np.isfinite(self.anchor_spread)):
            raise ValidationError(f"anchor_spread must be positive, got {self.anchor_spread}")
        if self.seed < 0:
            raise ValidationError("seed must be unsigned")


def _triple(v, name):
    if np.isscalar(v):
        return (float(v),) * N_CODEWORDS
    v = tuple(float(x) for x in v)
    if len(v) != N_CODEWORDS:
        raise ValidationError(f"{name} needs {N_CODEWORDS} entries")
    return v


@dataclass
class LatentSequence:
    """Per-frame latent vectors: ``vectors[i]`` is a [T x dim_i] matrix."""

    vectors: list[np.ndarray]
    frame_duration_ms: float = FRAME_MS

    def __post_init__(self):
        if len(self.vectors) != N_CODEWORDS:
            raise ValidationError("latent sequence needs three vector tracks")
        lengths = {v.shape[0] for v in self.vectors}
        if len(lengths) != 1 or lengths.pop() < 1:
            raise ValidationError("tracks must share a positive length")
        if not all(np.all(np.isfinite(v)) for v in self.vectors):
            raise ValidationError("latent vectors must be finite")

    @property
    def T(self) -> int:
        return self.vectors[0].shape[0]


def gen_latent_sequence(config: CoverSourceConfig, codebooks: CodebookSet, T: int) -> LatentSequence:
    """AR(1) latents x_t = mu + a (x_{t-1} - mu) + eps_t, started in stationarity."""
    if T < 1:
        raise ValidationError("T must be >= 1")
    rng = np.random.default_rng(config.seed)
    tracks = []
    for book, a, scale in zip(codebooks.books, config.ar_coefficient, config.noise_scale):
        size, dim = book.shape
        mu = book[rng.integers(size)] + config.anchor_spread * rng.standard_normal(dim)
        eps = scale * rng.standard_normal((T, dim))
        eps[0] /= np.sqrt(1.0 - a * a)
        dev = lfilter([1.0], [1.0, -a], eps, axis=0) if a else eps
        tracks.append(mu + dev)
    return LatentSequence(tracks)


@dataclass
class QisMatrix:
    indices: np.ndarray
    sizes: tuple[int, int, int] = DEFAULT_SIZES
    frame_duration_ms: float = FRAME_MS

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 2 or idx.shape[0] != N_CODEWORDS or idx.shape[1] < 1:
            raise ValidationError(f"QIS must be 3 x T with T >= 1, got shape {idx.shape}")
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) != N_CODEWORDS or min(self.sizes) < 1 or max(self.sizes) > 0xFFFF:
            raise ValidationError(f"bad codebook sizes {self.sizes}")
        if np.any(idx < 0) or np.any(idx >= np.array(self.sizes)[:, None]):
            raise ValidationError("QIS index out of range for codebook sizes")
        self.indices = idx.astype(np.int64)

    @property
    def T(self) -> int:
        return self.indices.shape[1]

    @property
    def sample_length_s(self) -> float:
        return self.T * self.frame_duration_ms / 1000.0

    def __eq__(self, other):
        if not isinstance(other, QisMatrix):
            return NotImplemented
        return (self.sizes == other.sizes and self.frame_duration_ms == other.frame_duration_ms
                and np.array_equal(self.indices, other.indices))


def nearest_index(x: np.ndarray, vectors: np.ndarray, candidates: np.ndarray | None = None) -> np.ndarray:
    """Index of the closest vector to each row of ``x`` (ties -> lowest index).

    With ``candidates`` the search is restricted to those (sorted) indices.
    Distances are summed differences, not the expanded dot-product form, so
    exact midpoints tie exactly.
    """
    x = np.atleast_2d(x)
    pool = vectors if candidates is None else vectors[candidates]
    if x.shape[1] != pool.shape[1]:
        raise DimensionError(f"latent dim {x.shape[1]} != codebook dim {pool.shape[1]}")
    d2 = np.sum((x[:, None, :] - pool[None, :, :]) ** 2, axis=2)
    best = np.argmin(d2, axis=1)
    return best if candidates is None else np.asarray(candidates)[best]


def _check_dims(latents: LatentSequence, codebooks: CodebookSet):
    for i, (v, b) in enumerate(zip(latents.vectors, codebooks.books)):
        if v.shape[1] != b.shape[1]:
            raise DimensionError(f"position {i}: latent dim {v.shape[1]} != codebook dim {b.shape[1]}")


def quantize_cover(latents: LatentSequence, codebooks: CodebookSet) -> QisMatrix:
    _check_dims(latents, codebooks)
    rows = [nearest_index(v, b) for v, b in zip(latents.vectors, codebooks.books)]
    return QisMatrix(np.stack(rows), codebooks.sizes, latents.frame_duration_ms)


# -- file formats -----------------------------------------------------------

def write_qis(q: QisMatrix, path) -> None:
    header = _QIS_HEADER.pack(QIS_MAGIC, N_CODEWORDS, *q.sizes, q.T,
                              int(round(q.frame_duration_ms * 10)))
    payload = q.indices.astype("<u2").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_qis(path) -> QisMatrix:
    return decode_qis(Path(path).read_bytes())


def decode_qis(data: bytes) -> QisMatrix:
    if data[:4] != QIS_MAGIC:
        raise BadMagicError(f"bad QIS magic {data[:4]!r}")
    if len(data) < _QIS_HEADER.size:
        raise TruncatedFileError("QIS header truncated")
    _, count, s1, s2, s3, T, dur10 = _QIS_HEADER.unpack_from(data)
    if count != N_CODEWORDS:
        raise BadMagicError(f"QIS codeword count {count} != {N_CODEWORDS}")
    if T < 1 or min(s1, s2, s3) < 1 or dur10 == 0:
        raise BadMagicError("QIS header declares an empty stream")
    need = _QIS_HEADER.size + 2 * N_CODEWORDS * T
    if len(data) < need:
        raise TruncatedFileError(f"QIS payload truncated: {len(data)} of {need} bytes")
    if len(data) > need:
        raise BadMagicError(f"{len(data) - need} trailing bytes after QIS payload")
    idx = np.frombuffer(data, dtype="<u2", count=N_CODEWORDS * T, offset=_QIS_HEADER.size)
    idx = idx.reshape(N_CODEWORDS, T).astype(np.int64)
    sizes = (s1, s2, s3)
    bad = idx >= np.array(sizes)[:, None]
    if bad.any():
        i, t = map(int, np.argwhere(bad)[0])
        raise IndexRangeError(f"index {idx[i, t]} at codeword {i + 1}, frame {t} exceeds size {sizes[i]}")
    return QisMatrix(idx, sizes, dur10 / 10.0)


def write_codebooks(cb: CodebookSet, path) -> None:
    parts = [CBK_MAGIC, struct.pack("<B", len(cb.books))]
    for b in cb.books:
        parts.append(struct.pack("<HH", *b.shape))
        parts.append(b.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_codebooks(path) -> CodebookSet:
    data = Path(path).read_bytes()
    if data[:4] != CBK_MAGIC:
        raise BadMagicError("bad codebook magic")
    if len(data) < 5:
        raise TruncatedFileError("codebook header truncated")
    count = data[4]
    off = 5
    books = []
    for _ in range(count):
        if len(data) < off + 4:
            raise TruncatedFileError("codebook entry header truncated")
        size, dim = struct.unpack_from("<HH", data, off)
        off += 4
        n = size * dim * 8
        if len(data) < off + n:
            raise TruncatedFileError("codebook vectors truncated")
        books.append(np.frombuffer(data, dtype="<f8", count=size * dim, offset=off)
                     .reshape(size, dim).astype(np.float64))
        off += n
    if off != len(data):
        raise BadMagicError("trailing bytes after codebooks")
    try:
        return CodebookSet(books)
    except ValidationError as exc:
        raise BadMagicError(f"invalid codebook content: {exc}") from exc


# -- correlation diagnostic ------------------------------------------------

@dataclass
class PairCorrelation:
    joint: np.ndarray
    product: np.ndarray
    divergence: float


@dataclass
class CorrelationReport:
    """Keyed by (i, k, lag) with zero-based codeword positions."""

    pairs: dict[tuple[int, int, int], PairCorrelation] = field(default_factory=dict)

    def divergence(self, i: int, k: int, lag: int) -> float:
        return self.pairs[(i, k, lag)].divergence


def correlation_diagnostic(q: QisMatrix, lags: Sequence[int],
                           pairs: Sequence[tuple[int, int]] | None = None) -> CorrelationReport:
    """Joint vs product-of-marginals tables for (c_i[t], c_k[t + lag]).

    Default pairs are all ordered position pairs, except that a position is
    only paired with itself at positive lags (at lag 0 it is trivially
    dependent); pass ``pairs`` explicitly to include those.
    """
    lags = [int(l) for l in lags]
    if not lags or min(lags) < 0:
        raise ValidationError("lags must be non-negative")
    if q.T <= max(lags):
        raise ValidationError(f"T={q.T} too short for lag {max(lags)}")
    report = CorrelationReport()
    for lag in lags:
        if pairs is None:
            todo = [(i, k) for i in range(N_CODEWORDS) for k in range(N_CODEWORDS) if lag or i != k]
        else:
            todo = list(pairs)
        for i, k in todo:
            a = q.indices[i, : q.T - lag]
            b = q.indices[k, lag:]
            ni, nk = q.sizes[i], q.sizes[k]
            joint = np.bincount(a * nk + b, minlength=ni * nk).reshape(ni, nk) / a.size
            product = np.outer(joint.sum(axis=1), joint.sum(axis=0))
            tv = 0.5 * float(np.abs(joint - product).sum())
            report.pairs[(i, k, lag)] = PairCorrelation(joint, product, tv)
    return report
