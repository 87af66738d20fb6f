"""Single-threaded wall-clock microbenchmark of the two attention mechanisms."""

from __future__ import annotations

import csv
import gc
import io
import statistics
import time
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import MECHANISMS, factor_att, flop_count, merge_heads, softmax_attention, split_heads
from .errors import ConfigError
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    N: int
    C: int
    heads: int
    trials: int
    mean_ns: float
    std_ns: float
    flops: int


CSV_COLUMNS = tuple(f.name for f in fields(BenchRecord))


def attention_forward(mechanism: str, q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    parts = []
    for qh, kh, vh in zip(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)):
        if mechanism == "dot_product":
            parts.append(softmax_attention(qh, kh, vh))
        else:
            parts.append(factor_att(qh, kh, vh)[0])
    return merge_heads(parts)


def _inputs(seed: int, n: int, c: int) -> tuple[Tensor, Tensor, Tensor]:
    rng = np.random.default_rng([seed, n, c])
    return tuple(Tensor(rng.standard_normal((n, c))) for _ in range(3))


def time_interleaved(
    mechanism: str, ns: Sequence[int], c: int, heads: int, trials: int, warmup: int, seed: int = 0
) -> list[BenchRecord]:
    """Time several token counts in round-robin order, one record per N.

    Alternating sizes trial by trial exposes every N to the same scheduler
    and cache conditions, which keeps ratios between records stable.
    """
    if mechanism not in MECHANISMS:
        raise ConfigError(f"unknown mechanism {mechanism!r}")
    if trials < 3 or warmup < 1:
        raise ConfigError(f"need trials >= 3 and warmup >= 1, got {trials} and {warmup}")
    flops = [flop_count(mechanism, n, c, heads) for n in ns]
    inputs = [_inputs(seed, n, c) for n in ns]
    samples: list[list[int]] = [[] for _ in ns]
    with no_grad(), threadpool_limits(limits=1):
        for qkv in inputs:
            for _ in range(warmup):
                attention_forward(mechanism, *qkv, heads)
        gc.collect()
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            for _ in range(trials):
                for qkv, out in zip(inputs, samples):
                    t0 = time.perf_counter_ns()
                    attention_forward(mechanism, *qkv, heads)
                    out.append(time.perf_counter_ns() - t0)
        finally:
            if gc_was_enabled:
                gc.enable()
    return [
        BenchRecord(mechanism, n, c, heads, trials, statistics.fmean(s), statistics.pstdev(s), f)
        for n, s, f in zip(ns, samples, flops)
    ]


def time_mechanism(mechanism: str, n: int, c: int, heads: int, trials: int, warmup: int, seed: int = 0) -> BenchRecord:
    return time_interleaved(mechanism, [n], c, heads, trials, warmup, seed)[0]


def run_bench(
    mechanisms: Sequence[str],
    ns: Iterable[int],
    cs: Iterable[int],
    heads: int = 1,
    trials: int = 10,
    warmup: int = 3,
    seed: int = 0,
) -> list[BenchRecord]:
    ns, cs = list(ns), list(cs)
    if not mechanisms or not ns or not cs:
        raise ConfigError("benchmark grid is empty")
    for m in mechanisms:
        if m not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {m!r}; expected one of {MECHANISMS}")
    for n in ns:
        for c in cs:
            if n < 1 or c < 1 or c % heads:
                raise ConfigError(f"invalid grid point N={n}, C={c}, heads={heads}")
    return [time_mechanism(m, n, c, heads, trials, warmup, seed) for m in mechanisms for n in ns for c in cs]


def records_to_csv(records: Sequence[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(astuple(r))
    return buf.getvalue()
