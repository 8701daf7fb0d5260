"""Detection-latency benchmark: QIS matrix in, cover/stego decision out."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import ValidationError
from .graph import batch_graphs, build_graph
from .model import ModelConfig, model_forward, predict
from .streams import DEFAULT_SIZES, QisMatrix

# the paper's fitted detection-time line, seconds vs sample length in seconds
PAPER_DT_SLOPE = 0.003
PAPER_DT_INTERCEPT = 0.0145
MIN_RUNS = 30


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float


def fit_line(x: Sequence[float], y: Sequence[float]) -> LinearFit:
    """Ordinary least squares y ~ slope*x + intercept, with R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValidationError("need at least two (x, y) points of matching shape")
    if np.ptp(x) == 0:
        raise ValidationError("x values must not all be equal")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return LinearFit(float(slope), float(intercept), r2)


@dataclass
class LatencyReport:
    lengths: list[int]
    sample_seconds: list[float]
    mean_s: list[float]
    std_s: list[float]
    runs: int
    fit: LinearFit
    timer_resolution_s: float
    resolution_ok: bool

    def format(self) -> str:
        lines = ["frames  sample_s  mean_ms   std_ms"]
        for T, L, m, s in zip(self.lengths, self.sample_seconds, self.mean_s, self.std_s):
            lines.append(f"{T:6d}  {L:8.3f}  {1e3 * m:7.3f}  {1e3 * s:7.3f}")
        lines.append(f"fit: DT = {self.fit.slope:.6g} * L_s + {self.fit.intercept:.6g}  (R^2 = {self.fit.r2:.4f}, "
                     f"{self.runs} runs per length)")
        lines.append(f"paper reference (real codec, different hardware): DT = {PAPER_DT_SLOPE} * L_s + "
                     f"{PAPER_DT_INTERCEPT}")
        if not self.resolution_ok:
            lines.append(f"warning: timer resolution {self.timer_resolution_s:.3g} s is too coarse "
                         "for the shortest timings")
        return "\n".join(lines)


def detect(q: QisMatrix, store: nn.ParamStore, config: ModelConfig) -> tuple[int, float]:
    """Label (0 cover / 1 stego) and stego probability for one stream."""
    g = build_graph(q, config.normalization, None, config.undirected)
    logits, _ = model_forward(batch_graphs([g]), store, config, "eval")
    return int(predict(logits)[0]), float(nn.softmax(logits)[0, 1])


def bench_detection(store: nn.ParamStore, config: ModelConfig, lengths: Sequence[int], runs: int = 200,
                    seed: int = 0, sizes: Sequence[int] = DEFAULT_SIZES, warmup: int = 3) -> LatencyReport:
    """Wall-clock per-stream detection time for each length.

    Timing covers graph construction, the forward pass and the decision;
    the QIS matrices are generated beforehand so no I/O is measured. Runs
    are sequential on the calling thread.
    """
    if runs < MIN_RUNS:
        raise ValidationError(f"need at least {MIN_RUNS} runs per length, got {runs}")
    lengths = [int(T) for T in lengths]
    if len(lengths) < 2 or min(lengths) < 1:
        raise ValidationError("need at least two positive lengths")
    rng = np.random.default_rng(seed)
    res = time.get_clock_info("perf_counter").resolution
    means, stds = [], []
    for T in lengths:
        streams = [QisMatrix(np.stack([rng.integers(0, s, T) for s in sizes]), tuple(sizes))
                   for _ in range(runs)]
        for q in streams[:warmup]:
            detect(q, store, config)
        times = np.empty(runs)
        for j, q in enumerate(streams):
            t0 = time.perf_counter()
            detect(q, store, config)
            times[j] = time.perf_counter() - t0
        means.append(float(times.mean()))
        stds.append(float(times.std(ddof=1)))
    sample_s = [T * streams[0].frame_duration_ms / 1000.0 for T in lengths]
    fit = fit_line(sample_s, means)
    return LatencyReport(lengths, sample_s, means, stds, runs, fit, res, res * 100 <= min(means))
