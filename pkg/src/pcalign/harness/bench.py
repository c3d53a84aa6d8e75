"""Timing harness: per-transform cost from mean batch processing time."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..icp import IcpConfig, icp_p2p
from .sampling import sample_points

BATCH_SIZES = (8, 16, 32, 64)


def thread_cap() -> Optional[int]:
    """Worker-thread limit from PCALIGN_THREADS, if set."""
    raw = os.environ.get("PCALIGN_THREADS")
    if raw is None or not raw.strip():
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"PCALIGN_THREADS must be >= 1, got {raw!r}")
    return n


@dataclass
class BenchReport:
    method: str
    n_points: int
    per_batch: dict  # batch size -> {batches, mean_batch_ms, per_transform_ms}
    threads: Optional[int] = field(default_factory=thread_cap)

    def per_transform_ms(self) -> dict:
        return {b: row["per_transform_ms"] for b, row in self.per_batch.items()}

    def to_dict(self) -> dict:
        return {"method": self.method, "n_points": self.n_points,
                "threads": self.threads,
                "per_batch": {str(b): dict(row) for b, row in self.per_batch.items()}}


def _prepared_clouds(samples, n_points: int, seed: int):
    rng = np.random.default_rng(seed)
    c1 = np.empty((len(samples), n_points, 3))
    c2 = np.empty_like(c1)
    for i, s in enumerate(samples):
        c1[i] = sample_points(s.cloud1, n_points, rng)
        c2[i] = sample_points(s.cloud2, n_points, rng)
    return c1, c2


def bench(method, samples, batch_sizes=BATCH_SIZES, n_points: int = 512,
          seed: int = 0, warmup: int = 1, label: str = "") -> BenchReport:
    """Time `method(clouds1, clouds2)` over the dataset per batch size.

    Cloud preparation happens before the clock starts; the first `warmup`
    batches run untimed.  Needs enough samples for at least one timed
    batch at every requested size.
    """
    if not len(samples):
        raise ValueError("empty dataset")
    c1, c2 = _prepared_clouds(samples, n_points, seed)
    per_batch = {}
    for b in batch_sizes:
        starts = range(0, (len(samples) // b) * b, b)
        if len(starts) <= warmup:
            raise ValueError(
                f"need more than {warmup * b} samples for batch size {b}, "
                f"got {len(samples)}")
        times = []
        for k, lo in enumerate(starts):
            t0 = time.perf_counter()
            method(c1[lo:lo + b], c2[lo:lo + b])
            elapsed = time.perf_counter() - t0
            if k >= warmup:
                times.append(elapsed)
        mean_ms = 1e3 * float(np.mean(times))
        per_batch[b] = {"batches": len(times), "mean_batch_ms": mean_ms,
                        "per_transform_ms": mean_ms / b}
    return BenchReport(method=label, n_points=n_points, per_batch=per_batch)


def bench_icp(samples, n_points: int = 512, config: Optional[IcpConfig] = None,
              seed: int = 0, warmup: int = 1) -> dict:
    """Mean per-pair time of the point-to-point baseline."""
    if not len(samples):
        raise ValueError("empty dataset")
    if len(samples) <= warmup:
        raise ValueError(f"need more than {warmup} samples, got {len(samples)}")
    c1, c2 = _prepared_clouds(samples, n_points, seed)
    times = []
    for i in range(len(samples)):
        t0 = time.perf_counter()
        icp_p2p(c1[i], c2[i], config)
        elapsed = time.perf_counter() - t0
        if i >= warmup:
            times.append(elapsed)
    return {"pairs": len(times), "mean_pair_ms": 1e3 * float(np.mean(times)),
            "n_points": n_points, "threads": thread_cap()}
