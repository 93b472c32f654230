"""Inference latency harness.

Only the generator forward pass is inside the timed window. Each timed
iteration runs under an op counter, so the report can show that exactly
one forward pass happened per inference and that no I/O or metric code
ran while the clock was running.
"""
from __future__ import annotations

import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .generator import GeneratorParams, generator_forward
from .parallel import thread_limit
from .tensor import OpCounter, Rng, ShapeError, Tensor

FORMATS = ("text", "csv", "jsonl")
# op names that must never appear inside the timed window
UNTIMED_OPS = ("io_read", "io_write", "metric")


@dataclass
class LatencyReport:
    """Per-iteration seconds, rounded to the microsecond at construction."""

    seconds: list[float]
    resolution: tuple[int, int]
    warmup: int = 0
    threads: int = 1
    forward_pass_counts: list[int] = field(default_factory=list)
    untimed_op_ticks: int = 0

    def __post_init__(self):
        if not self.seconds:
            raise ValueError("a latency report needs at least one timed iteration")
        self.seconds = [round(float(s), 6) for s in self.seconds]
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))
        if not self.forward_pass_counts:
            self.forward_pass_counts = [1] * len(self.seconds)
        if len(self.forward_pass_counts) != len(self.seconds):
            raise ValueError("forward_pass_counts must have one entry per iteration")

    @property
    def iters(self) -> int:
        return len(self.seconds)

    @property
    def mean(self) -> float:
        return math.fsum(self.seconds) / len(self.seconds)

    @property
    def median(self) -> float:
        return statistics.median(self.seconds)

    @property
    def p95(self) -> float:
        return float(np.percentile(np.asarray(self.seconds, dtype=np.float64), 95))

    @property
    def forward_pass_count(self) -> int:
        """Forward passes per inference (the maximum over iterations)."""
        return max(self.forward_pass_counts)


def _check_resolution(params: GeneratorParams, resolution) -> tuple[int, int]:
    h, w = (int(v) for v in resolution)
    need = 2 * params.config.stride_requirement
    if h <= 0 or w <= 0 or h % need or w % need:
        raise ShapeError(
            f"resolution {h}x{w} must be a positive multiple of {need} for a {params.config.levels}-level "
            f"generator; pad the image up to the next multiple of {need}"
        )
    return h, w


def time_inference(
    params: GeneratorParams,
    resolution,
    warmup: int = 1,
    iters: int = 5,
    threads: int = 1,
    seed: int = 0,
) -> LatencyReport:
    """Time ``generator_forward`` on a random packed input of the given output size."""
    h, w = _check_resolution(params, resolution)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    x = Tensor(Rng(seed).uniform(0, 1, (1, 4, h // 2, w // 2)).astype(np.float32))
    seconds, counts, stray = [], [], 0
    with thread_limit(threads) as n_threads:
        for _ in range(warmup):
            generator_forward(params, x)
        for _ in range(iters):
            with OpCounter() as ops:
                t0 = time.perf_counter()
                generator_forward(params, x)
                t1 = time.perf_counter()
            seconds.append(t1 - t0)
            counts.append(ops["generator_forward"])
            stray += sum(ops[name] for name in UNTIMED_OPS)
    return LatencyReport(seconds, (h, w), warmup, n_threads, counts, stray)


# ------------------------------------------------------------------ output

def format_report(report: LatencyReport, fmt: str = "text") -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    h, w = report.resolution
    if fmt == "csv":
        rows = ["iter,seconds"] + [f"{i},{s:.6f}" for i, s in enumerate(report.seconds)]
        return "\n".join(rows) + "\n"
    if fmt == "jsonl":
        # hand-built so that seconds keep exactly six decimals as JSON numbers
        lines = [
            "{"
            f'"type": "summary", "resolution": [{h}, {w}], "warmup": {report.warmup}, '
            f'"threads": {report.threads}, "iters": {report.iters}, '
            f'"forward_pass_count": {report.forward_pass_count}, '
            f'"mean": {report.mean:.6f}, "median": {report.median:.6f}, "p95": {report.p95:.6f}'
            "}"
        ]
        for i, (s, c) in enumerate(zip(report.seconds, report.forward_pass_counts)):
            lines.append(f'{{"type": "iter", "iter": {i}, "seconds": {s:.6f}, "forward_passes": {c}}}')
        return "\n".join(lines) + "\n"
    return (
        f"resolution {h}x{w}  threads {report.threads}  warmup {report.warmup}  iters {report.iters}\n"
        f"mean   {report.mean:.6f} s\n"
        f"median {report.median:.6f} s\n"
        f"p95    {report.p95:.6f} s\n"
        f"forward passes per inference: {report.forward_pass_count}\n"
    )


def parse_jsonl(text: str) -> LatencyReport:
    head, seconds, counts = None, [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") == "summary":
            head = rec
        elif rec.get("type") == "iter":
            seconds.append(float(rec["seconds"]))
            counts.append(int(rec["forward_passes"]))
    if head is None:
        raise ValueError("json-lines report has no summary record")
    return LatencyReport(seconds, tuple(head["resolution"]), head["warmup"], head["threads"], counts)


def emit_report(report: LatencyReport, fmt: str = "text", out=None) -> str:
    """Format the report and write it to ``out`` (path or text stream) if given."""
    text = format_report(report, fmt)
    if out is None:
        return text
    if isinstance(out, (str, Path)):
        try:
            Path(out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"{out}: could not write benchmark report: {exc}") from exc
    elif isinstance(out, io.TextIOBase) or hasattr(out, "write"):
        out.write(text)
    return text
