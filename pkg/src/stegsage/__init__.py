"""GraphSAGE steganalysis of QIM-embedded codec index streams.

Synthetic LSF-like index streams, CNV-QIM embedding, chain graphs, a
from-scratch numpy GraphSAGE detector, and the training/evaluation harness.
"""

import os as _os

# STEGSAGE_THREADS caps BLAS threads too; this only takes effect if numpy
# has not been imported yet.
_threads = _os.environ.get("STEGSAGE_THREADS")
if _threads and _threads.isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .bench import LatencyReport, bench_detection, detect  # noqa: E402
from .corpus import (  # noqa: E402
    DatasetManifest,
    ManifestEntry,
    assign_splits,
    build_manifest,
    read_manifest,
    save_corpus,
    synth_corpus,
    write_manifest,
)
from .errors import (  # noqa: E402
    ConfigMismatchError,
    DimensionError,
    FileFormatError,
    NumericError,
    StegSageError,
    ValidationError,
)
from .graph import GraphBatch, StreamGraph, batch_graphs, build_graph  # noqa: E402
from .model import ModelConfig, init_params, load_checkpoint, model_forward, predict, save_checkpoint  # noqa: E402
from .qim import CodebookPartition, cnv_partition, qim_embed, qim_extract  # noqa: E402
from .training import (  # noqa: E402
    MetricsReport,
    TrainConfig,
    TrainResult,
    evaluate,
    export_embeddings,
    metrics_from_counts,
    to_graphs,
    train,
)
from .streams import (  # noqa: E402
    CodebookSet,
    CoverSourceConfig,
    QisMatrix,
    gen_latent_sequence,
    make_codebooks,
    quantize_cover,
    read_qis,
    write_qis,
)

__version__ = "0.1.0"

__all__ = [
    "StegSageError", "ValidationError", "DimensionError", "ConfigMismatchError", "FileFormatError",
    "NumericError", "CodebookSet", "CoverSourceConfig", "QisMatrix", "make_codebooks",
    "gen_latent_sequence", "quantize_cover", "read_qis", "write_qis", "CodebookPartition",
    "cnv_partition", "qim_embed", "qim_extract", "StreamGraph", "GraphBatch", "build_graph",
    "batch_graphs", "ModelConfig", "init_params", "model_forward", "predict", "save_checkpoint",
    "load_checkpoint", "DatasetManifest", "ManifestEntry", "synth_corpus", "save_corpus", "assign_splits",
    "build_manifest", "read_manifest", "write_manifest", "TrainConfig", "TrainResult", "MetricsReport",
    "train", "evaluate", "export_embeddings", "metrics_from_counts", "to_graphs", "LatencyReport",
    "bench_detection", "detect",
]
