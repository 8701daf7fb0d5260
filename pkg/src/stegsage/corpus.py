"""Labelled cover/stego corpora, their on-disk manifests, and stratified splits.

Manifest files are tab-separated text, one stream per line:

    path  label  rate  sample_length_s  lineage  mask_sha256  split

``lineage`` records the seeds a stream was generated from, ``mask_sha256``
is the digest of the frame-selection mask ("-" for covers), and ``split`` is
train/val/test or "-" before splitting. Lines starting with '#' are comments.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FileFormatError, StegSageError, ValidationError
from .qim import CodebookPartition, cnv_partition, qim_embed
from .seeding import derive_seed
from .streams import (
    CodebookSet,
    CoverSourceConfig,
    QisMatrix,
    gen_latent_sequence,
    make_codebooks,
    quantize_cover,
    read_codebooks,
    read_qis,
    write_codebooks,
    write_qis,
)

LABELS = {"cover": 0, "stego": 1}
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
MANIFEST_NAME = "manifest.tsv"
CODEBOOK_NAME = "codebooks.cbk"
SOURCE_NAME = "source.cfg"

# seed lineage purposes
_COVER, _STEGO_LATENT, _PAYLOAD = 0, 1, 2


def max_workers() -> int:
    """Parallelism cap from STEGSAGE_THREADS (default: all cores)."""
    raw = os.environ.get("STEGSAGE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError(f"STEGSAGE_THREADS must be an integer, got {raw!r}")
    return os.cpu_count() or 1


@dataclass
class ManifestEntry:
    path: str
    label: str
    rate: float
    sample_length_s: float
    lineage: str
    mask_sha256: str = "-"
    split: str = "-"

    @property
    def label_id(self) -> int:
        return LABELS[self.label]


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load(self, name: str | None = None) -> list[tuple[QisMatrix, int]]:
        todo = self.entries if name is None else self.split(name)
        out = []
        for e in todo:
            try:
                out.append((read_qis(self.resolve(e)), e.label_id))
            except OSError as exc:
                raise FileFormatError(f"cannot read {e.path}: {exc}") from exc
        return out


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["# path\tlabel\trate\tsample_length_s\tlineage\tmask_sha256\tsplit"]
    for e in manifest.entries:
        lines.append("\t".join([e.path, e.label, repr(e.rate), repr(e.sample_length_s),
                                e.lineage, e.mask_sha256, e.split]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    entries = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 7:
            raise FileFormatError(f"{path}:{n}: expected 7 tab-separated fields, got {len(cols)}")
        p, label, rate, length, lineage, digest, split = cols
        if label not in LABELS:
            raise FileFormatError(f"{path}:{n}: unknown label {label!r}")
        if split not in SPLITS + ("-",):
            raise FileFormatError(f"{path}:{n}: unknown split {split!r}")
        try:
            entries.append(ManifestEntry(p, label, float(rate), float(length), lineage, digest, split))
        except ValueError as exc:
            raise FileFormatError(f"{path}:{n}: {exc}") from exc
    seen = set()
    for e in entries:
        if e.path in seen:
            raise FileFormatError(f"{path}: {e.path} listed twice")
        seen.add(e.path)
    return DatasetManifest(entries, path.parent)


# -- generation -------------------------------------------------------------

@dataclass
class SyntheticCorpus:
    """In-memory corpus; ``items`` pairs each QIS matrix with its label id."""

    items: list[tuple[QisMatrix, int]]
    entries: list[ManifestEntry]
    codebooks: CodebookSet
    partition: CodebookPartition | None


def _cover_item(j, seed, source, codebooks, T):
    s = derive_seed(seed, _COVER, j)
    q = quantize_cover(gen_latent_sequence(replace(source, seed=s % 2**63), codebooks, T), codebooks)
    entry = ManifestEntry(f"cover_{j:05d}.qis", "cover", 0.0, q.sample_length_s, f"master={seed};latent={s}")
    return q, entry


def _stego_item(j, seed, source, codebooks, partition, T, rate):
    s = derive_seed(seed, _STEGO_LATENT, j)
    ps = derive_seed(seed, _PAYLOAD, j)
    latents = gen_latent_sequence(replace(source, seed=s % 2**63), codebooks, T)
    st = qim_embed(latents, codebooks, partition, rate, ps)
    entry = ManifestEntry(f"stego_{j:05d}.qis", "stego", float(rate), st.qis.sample_length_s,
                          f"master={seed};latent={s};payload={ps}", st.plan.mask_digest())
    return st.qis, entry


def synth_corpus(n_cover: int, n_stego: int, T: int, rate: float, seed: int = 0,
                 source: CoverSourceConfig | None = None, codebooks: CodebookSet | None = None,
                 n_bits: int = 1) -> SyntheticCorpus:
    """Cover streams and QIM stego streams from independent latent draws.

    Stream j of each kind uses seeds derived from (seed, kind, j), so corpora
    of different sizes share their leading streams.
    """
    source = source or CoverSourceConfig()
    codebooks = codebooks or make_codebooks(seed=derive_seed(seed, 0xC0DE) % 2**63, partition_bits=n_bits)
    partition = cnv_partition(codebooks, n_bits, seed=derive_seed(seed, 0xBA11) % 2**63) if n_stego else None
    with ThreadPoolExecutor(max_workers()) as pool:
        covers = list(pool.map(lambda j: _cover_item(j, seed, source, codebooks, T), range(n_cover)))
        stegos = list(pool.map(lambda j: _stego_item(j, seed, source, codebooks, partition, T, rate),
                               range(n_stego)))
    items = [(q, 0) for q, _ in covers] + [(q, 1) for q, _ in stegos]
    entries = [e for _, e in covers] + [e for _, e in stegos]
    return SyntheticCorpus(items, entries, codebooks, partition)


def save_corpus(corpus: SyntheticCorpus, out_dir, append: bool = False) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_codebooks(corpus.codebooks, out / CODEBOOK_NAME)
    for (q, _), e in zip(corpus.items, corpus.entries):
        write_qis(q, out / e.path)
    manifest = DatasetManifest(list(corpus.entries), out)
    mpath = out / MANIFEST_NAME
    if append and mpath.exists():
        old = read_manifest(mpath)
        fresh = {e.path for e in corpus.entries}
        manifest.entries = [e for e in old.entries if e.path not in fresh] + manifest.entries
    write_manifest(manifest, mpath)
    return manifest


def write_source_config(source: CoverSourceConfig, T: int, seed: int, path) -> None:
    lines = [f"ar_coefficient={','.join(map(repr, source.ar_coefficient))}",
             f"noise_scale={','.join(map(repr, source.noise_scale))}",
             f"anchor_spread={source.anchor_spread!r}", f"frames={T}", f"seed={seed}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_source_config(path) -> tuple[CoverSourceConfig, int, int]:
    kv = parse_key_values(Path(path).read_text())
    try:
        src = CoverSourceConfig(tuple(float(x) for x in kv["ar_coefficient"].split(",")),
                                tuple(float(x) for x in kv["noise_scale"].split(",")),
                                float(kv["anchor_spread"]))
        return src, int(kv["frames"]), int(kv["seed"])
    except KeyError as exc:
        raise FileFormatError(f"{path}: missing key {exc}") from exc


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_corpus_codebooks(corpus_dir) -> CodebookSet:
    return read_codebooks(Path(corpus_dir) / CODEBOOK_NAME)


# -- rate sweep summaries ---------------------------------------------------

@dataclass
class RateSummary:
    """Per-track index distribution of a corpus embedded at one rate.

    ``quartiles[i]`` is the five-number summary (min, q1, median, q3, max) of
    codeword i's indices; ``changed[i]`` is the fraction of frames whose index
    differs from the cover quantization of the same latents.
    """

    rate: float
    quartiles: np.ndarray
    changed: np.ndarray


def rate_report(rates, n_streams: int, T: int, seed: int = 0, source: CoverSourceConfig | None = None,
                n_bits: int = 1) -> list[RateSummary]:
    """Index statistics per embedding rate; rate 0 means the covers themselves.

    Every rate reuses the same latent draws, so differences between rows come
    from embedding alone.
    """
    if n_streams < 1 or T < 1:
        raise ValidationError("need at least one stream of at least one frame")
    source = source or CoverSourceConfig()
    codebooks = make_codebooks(seed=derive_seed(seed, 0xC0DE) % 2**63, partition_bits=n_bits)
    partition = cnv_partition(codebooks, n_bits, seed=derive_seed(seed, 0xBA11) % 2**63)
    latents = [gen_latent_sequence(replace(source, seed=derive_seed(seed, _STEGO_LATENT, j) % 2**63),
                                   codebooks, T) for j in range(n_streams)]
    covers = np.concatenate([quantize_cover(lat, codebooks).indices for lat in latents], axis=1)
    out = []
    for rate in rates:
        if not 0.0 <= rate <= 1.0:
            raise ValidationError(f"rate must be in [0, 1], got {rate}")
        if rate == 0:
            idx = covers
        else:
            idx = np.concatenate([qim_embed(lat, codebooks, partition, rate, derive_seed(seed, _PAYLOAD, j)).qis.indices
                                  for j, lat in enumerate(latents)], axis=1)
        q = np.percentile(idx, [0, 25, 50, 75, 100], axis=1).T
        out.append(RateSummary(float(rate), q, (idx != covers).mean(axis=1)))
    return out


def format_rate_report(rows: list[RateSummary]) -> str:
    lines = ["rate  track  min     q1      median  q3      max     changed"]
    for r in rows:
        for i, (q, c) in enumerate(zip(r.quartiles, r.changed)):
            lines.append(f"{r.rate:4.2f}  c{i + 1}     " + "  ".join(f"{v:6.1f}" for v in q) + f"  {c:.4f}")
    return "\n".join(lines)


# -- splitting --------------------------------------------------------------

def _split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def assign_splits(manifest: DatasetManifest, split_seed: int) -> DatasetManifest:
    """Stratified 70/15/15 split, shuffled within each label.

    Each label is split on its own, so the cover:stego balance inside every
    split is only as good as the corpus balance; anything off by more than
    one stream in some split is rejected rather than silently skewed.
    """
    by_label = {lab: [e for e in manifest.entries if e.label == lab] for lab in LABELS}
    counts = {lab: _split_counts(len(v)) for lab, v in by_label.items()}
    for s, name in enumerate(SPLITS):
        c, st = counts["cover"][s], counts["stego"][s]
        if abs(c - st) > 1:
            raise ValidationError(
                f"{name} split would hold {c} cover vs {st} stego streams; corpus is too unbalanced "
                f"({len(by_label['cover'])} cover, {len(by_label['stego'])} stego)")
    rng = np.random.default_rng(split_seed)
    out = []
    for lab in LABELS:
        entries = by_label[lab]
        order = rng.permutation(len(entries))
        n_train, n_val, _ = counts[lab]
        for rank, j in enumerate(order):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            out.append(replace(entries[j], split=split))
    # keep the manifest's own order so diffs stay readable
    pos = {e.path: i for i, e in enumerate(manifest.entries)}
    out.sort(key=lambda e: pos[e.path])
    return DatasetManifest(out, manifest.root)


def build_manifest(corpus_dir, split_seed: int) -> DatasetManifest:
    corpus_dir = Path(corpus_dir)
    try:
        manifest = read_manifest(corpus_dir / MANIFEST_NAME)
    except OSError as exc:
        raise FileFormatError(f"cannot read corpus manifest: {exc}") from exc
    for e in manifest.entries:
        path = manifest.resolve(e)
        try:
            read_qis(path)
        except (OSError, StegSageError) as exc:
            raise FileFormatError(f"unreadable stream {e.path}: {exc}") from exc
    return assign_splits(manifest, split_seed)
