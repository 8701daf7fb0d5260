"""Command-line entry point: ``stegsage <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or config, 3 unreadable or malformed
files, 4 numeric failure (e.g. training divergence).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, corpus
from .errors import FileFormatError, StegSageError, ValidationError
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .streams import CoverSourceConfig, read_qis
from .training import (
    TrainConfig,
    evaluate,
    export_embeddings,
    format_train_config,
    manifest_graphs,
    parse_train_config,
    train_manifest,
)

log = logging.getLogger("stegsage")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _per_track(text: str) -> tuple[float, ...]:
    vals = _floats(text)
    return vals * 3 if len(vals) == 1 else vals


def _source(args) -> CoverSourceConfig:
    return CoverSourceConfig(_per_track(args.ar), _per_track(args.noise), args.anchor_spread)


def cmd_gen_data(args) -> int:
    source = _source(args)
    n_stego = args.streams if args.rate > 0 else 0
    synth = corpus.synth_corpus(args.streams, n_stego, args.frames, args.rate or 1.0, args.seed,
                                source, None, args.n_bits)
    manifest = corpus.save_corpus(synth, args.out)
    corpus.write_source_config(source, args.frames, args.seed, Path(args.out) / corpus.SOURCE_NAME)
    print(f"wrote {len(manifest.entries)} streams ({args.streams} cover, {n_stego} stego) to {args.out}")
    return 0


def cmd_embed(args) -> int:
    """Add stego streams to a corpus, re-deriving latents from its source config."""
    root = Path(args.corpus)
    try:
        source, T, seed = corpus.read_source_config(root / corpus.SOURCE_NAME)
        codebooks = corpus.load_corpus_codebooks(root)
        manifest = corpus.read_manifest(root / corpus.MANIFEST_NAME)
    except OSError as exc:
        raise FileFormatError(f"corpus at {root} is incomplete: {exc}") from exc
    n = args.streams or sum(e.label == "cover" for e in manifest.entries)
    if n < 1:
        raise ValidationError("nothing to embed: corpus has no cover streams and --streams not given")
    # same seed lineage as gen-data, so stream j pairs with the latent draw gen-data would use
    synth = corpus.synth_corpus(0, n, T, args.rate, seed, source, codebooks, args.n_bits)
    corpus.save_corpus(synth, root, append=True)
    print(f"embedded {n} stego streams at rate {args.rate} into {root}")
    return 0


def cmd_split(args) -> int:
    manifest = corpus.build_manifest(args.corpus, args.split_seed)
    out = Path(args.out) if args.out else Path(args.corpus) / "splits.tsv"
    corpus.write_manifest(manifest, out)
    counts = {s: len(manifest.split(s)) for s in corpus.SPLITS}
    print(f"wrote {out}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return 0


def _load_manifest(path, split_seed: int):
    p = Path(path)
    if p.is_dir():
        return corpus.build_manifest(p, split_seed)
    try:
        manifest = corpus.read_manifest(p)
    except OSError as exc:
        raise FileFormatError(f"cannot read manifest {p}: {exc}") from exc
    if all(e.split == "-" for e in manifest.entries):
        manifest = corpus.assign_splits(manifest, split_seed)
    return manifest


def _train_config(args) -> TrainConfig:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise FileFormatError(f"cannot read config {args.config}: {exc}") from exc
    return parse_train_config(text)


def cmd_train(args) -> int:
    tc = _train_config(args)
    manifest = _load_manifest(args.manifest, args.split_seed)
    result = train_manifest(manifest, tc)
    out = Path(args.out_checkpoint)
    save_checkpoint(result.best, tc.model, out)
    save_checkpoint(result.final, tc.model, out.with_name(out.name + ".final"))
    print("epoch\ttrain_loss\tval_acc\tval_loss")
    for row in result.history:
        print(f"{row['epoch']}\t{row['train_loss']:.6f}\t{row['val_acc']:.4f}\t{row['val_loss']:.6f}")
    print(f"best-val checkpoint (epoch {result.best_epoch}) -> {out}; final -> {out}.final")
    return 0


def cmd_eval(args) -> int:
    store, config = load_checkpoint(args.checkpoint)
    manifest = _load_manifest(args.manifest, args.split_seed)
    report = evaluate(store, config, manifest_graphs(manifest, args.split, config))
    print(report.format())
    return 0


def cmd_detect(args) -> int:
    store, config = load_checkpoint(args.checkpoint)
    try:
        q = read_qis(args.qis)
    except OSError as exc:
        raise FileFormatError(f"cannot read {args.qis}: {exc}") from exc
    label, prob = bench.detect(q, store, config)
    print(f"{'stego' if label else 'cover'}\t{prob:.6f}")
    return 0


def cmd_bench(args) -> int:
    if args.checkpoint:
        store, config = load_checkpoint(args.checkpoint)
    else:
        config = ModelConfig()
        store = init_params(config)
    report = bench.bench_detection(store, config, _ints(args.lengths), args.runs, args.seed)
    print(report.format())
    return 0


def cmd_export(args) -> int:
    store, config = load_checkpoint(args.checkpoint)
    manifest = _load_manifest(args.manifest, args.split_seed)
    try:
        n = export_embeddings(store, config, manifest_graphs(manifest, args.split, config), args.out)
    except OSError as exc:
        raise FileFormatError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {n} rows of width {config.hidden} to {args.out}")
    return 0


def cmd_rate_report(args) -> int:
    rows = corpus.rate_report(_floats(args.rates), args.streams, args.frames, args.seed, _source(args), args.n_bits)
    print(corpus.format_rate_report(rows))
    return 0


def cmd_show_config(args) -> int:
    print(format_train_config(_train_config(args)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stegsage", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def source_args(sp):
        sp.add_argument("--ar", default="0.9", help="AR(1) coefficient(s), one or three comma-separated")
        sp.add_argument("--noise", default="0.05", help="innovation scale(s)")
        sp.add_argument("--anchor-spread", type=float, default=0.1)

    def manifest_args(sp, split=True):
        sp.add_argument("--manifest", required=True, help="manifest file or corpus directory")
        sp.add_argument("--split-seed", type=int, default=0, help="used when the manifest is not yet split")
        if split:
            sp.add_argument("--split", default="test", choices=corpus.SPLITS)

    sp = sub.add_parser("gen-data", help="generate a cover (+ stego) corpus")
    sp.add_argument("--streams", type=int, required=True, help="streams per class")
    sp.add_argument("--frames", type=int, default=100)
    sp.add_argument("--rate", type=float, default=1.0, help="embedding rate; 0 writes covers only")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-bits", type=int, default=1)
    sp.add_argument("--out", required=True)
    source_args(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("embed", help="add stego streams to a corpus made by gen-data")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--rate", type=float, required=True)
    sp.add_argument("--streams", type=int, default=0, help="default: one per cover stream")
    sp.add_argument("--n-bits", type=int, default=1)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("split", help="write a 70/15/15 stratified split manifest")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split-seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", help="train a detector")
    manifest_args(sp, split=False)
    sp.add_argument("--config", help="key=value file; omitted keys take the paper defaults")
    sp.add_argument("--out-checkpoint", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="confusion matrix and metrics on a split")
    sp.add_argument("--checkpoint", required=True)
    manifest_args(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("detect", help="classify one QIS file")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--qis", required=True)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("bench", help="detection latency vs sample length")
    sp.add_argument("--checkpoint", help="default: untrained default-config model (same cost)")
    sp.add_argument("--lengths", default="50,500,1000")
    sp.add_argument("--runs", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("export-embeddings", help="write label + graph vector rows")
    sp.add_argument("--checkpoint", required=True)
    manifest_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("rate-report", help="index distribution summaries per embedding rate")
    sp.add_argument("--rates", default="0,0.2,0.4,0.6,0.8,1.0", help="0 means cover")
    sp.add_argument("--streams", type=int, default=100)
    sp.add_argument("--frames", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-bits", type=int, default=1)
    source_args(sp)
    sp.set_defaults(func=cmd_rate_report)

    sp = sub.add_parser("show-config", help="print the effective training config")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StegSageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
