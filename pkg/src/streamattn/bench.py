"""Decode throughput and operation-count comparison across paradigms.

Workloads are synthetic and length-pinned: the session ignores the end
symbol and emits exactly source_len tokens, so every configuration does
the same amount of schedule work and op counts are deterministic. Wall
times are medians over repetitions after one discarded warmup; op counts
are exact integers from the stream module's counters and are the primary
assertion target. Timed runs should not be co-scheduled.
"""

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import FIRST_CONTENT_ID
from .model import ModelConfig, Parameters
from .paradigm import Paradigm
from .stream import DecodeSession, decode


@dataclass(frozen=True)
class BenchRow:
    backend: str
    paradigm: Paradigm
    k: int
    source_len: int
    seconds: float
    tokens_per_s: float
    attention_ops: int
    recompute_ops: int
    total_ops: int
    speedup_vs_allre: float | None
    trained_mismatch: bool


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def find(self, backend: str, paradigm: Paradigm, k: int, source_len: int) -> BenchRow:
        for r in self.rows:
            if (r.backend, r.paradigm, r.k, r.source_len) == (backend, paradigm, k, source_len):
                return r
        raise KeyError(f"no bench row for {backend}/{paradigm.value}/k={k}/n={source_len}")


def bench_source(source_len: int, vocab_size: int) -> np.ndarray:
    """Deterministic content tokens cycling through the vocabulary."""
    return FIRST_CONTENT_ID + (np.arange(source_len) % (vocab_size - FIRST_CONTENT_ID))


def _one_decode(cfg, params, paradigm, k, phi, source):
    session = DecodeSession(
        cfg, params, paradigm, k, phi, source,
        max_tokens=len(source), ignore_eos=True,
    )
    t0 = time.perf_counter()
    decode(session)
    return time.perf_counter() - t0, session.counters


def run_bench(cfg: ModelConfig, params: Parameters, paradigms, k_list, source_lengths,
              repetitions: int = 5, phi: float = 0.0, backends=None,
              trained_meta: dict | None = None) -> BenchReport:
    """Measure every (backend, paradigm, k, source_len) combination.

    trained_meta, when given (a checkpoint's meta record), flags rows whose
    paradigm or k differ from what the model was trained for; the numbers
    stay valid because the workload never looks at output quality.
    """
    if repetitions < 3:
        raise ValueError(f"repetitions must be >= 3, got {repetitions}")
    if backends is None:
        backends = (kernels.get_backend(),)
    report = BenchReport()
    previous = kernels.get_backend()
    try:
        for backend in backends:
            kernels.set_backend(backend)
            for n in source_lengths:
                source = bench_source(n, cfg.vocab_size)
                for k in k_list:
                    timings = {}
                    for paradigm in paradigms:
                        _one_decode(cfg, params, paradigm, k, phi, source)  # warmup
                        times = []
                        counters = None
                        for _ in range(repetitions):
                            dt, counters = _one_decode(cfg, params, paradigm, k, phi, source)
                            times.append(dt)
                        timings[paradigm] = statistics.median(times)
                        mismatch = False
                        if trained_meta:
                            mismatch = (trained_meta.get("paradigm") != paradigm.value
                                        or trained_meta.get("k") != k)
                        report.rows.append(BenchRow(
                            backend=backend, paradigm=paradigm, k=k, source_len=n,
                            seconds=timings[paradigm],
                            tokens_per_s=n / timings[paradigm],
                            attention_ops=counters.attention_pairs,
                            recompute_ops=counters.recompute_ops,
                            total_ops=counters.total,
                            speedup_vs_allre=None,
                            trained_mismatch=mismatch,
                        ))
                    if Paradigm.BATCH_ALL_RE in timings:
                        base = timings[Paradigm.BATCH_ALL_RE]
                        for i, row in enumerate(report.rows):
                            if (row.backend == backend and row.k == k
                                    and row.source_len == n and row.speedup_vs_allre is None):
                                report.rows[i] = BenchRow(
                                    **{**row.__dict__, "speedup_vs_allre": base / row.seconds}
                                )
    finally:
        kernels.set_backend(previous)
    return report


CSV_COLUMNS = ("backend", "paradigm", "k", "source_len", "seconds", "tokens_per_s",
               "attention_ops", "recompute_ops", "total_ops", "speedup_vs_allre",
               "trained_mismatch")


def report_csv(report: BenchReport, path):
    """One row per measured configuration, fixed column order."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(CSV_COLUMNS) + "\n")
        for r in report.rows:
            speedup = "" if r.speedup_vs_allre is None else f"{r.speedup_vs_allre:.4f}"
            f.write(",".join([
                r.backend, r.paradigm.value, str(r.k), str(r.source_len),
                f"{r.seconds:.6f}", f"{r.tokens_per_s:.2f}",
                str(r.attention_ops), str(r.recompute_ops), str(r.total_ops),
                speedup, str(int(r.trained_mismatch)),
            ]) + "\n")
