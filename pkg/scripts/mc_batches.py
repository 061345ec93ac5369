#!/usr/bin/env python3
"""
mc_batches module - Reproducible batched Monte Carlo

Draws are split into fixed-size batches; batch b uses its own Philox stream
keyed by SeedSequence([seed, b]). Batches may run on worker threads, and their
partial sums are reduced in batch order, so a result depends only on
(seed, n_samples, batch_size).
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mvgamma_errors import InvalidArgumentError

logger = logging.getLogger(__name__)

BATCH_SIZE = 4096
THREADS_ENV = "MVGAMMA_THREADS"

# fn(rng, count) -> per-draw values, shape (count,) or (count, k)
BatchFunc = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class MonteCarloResult:
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    seed: int

    def scalar(self):
        return float(self.mean), float(self.stderr)


def worker_count(threads: Optional[int] = None) -> int:
    """Thread count: explicit argument, else MVGAMMA_THREADS, else the CPU count"""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise InvalidArgumentError(f"{THREADS_ENV} must be an integer, got '{env}'")
        else:
            threads = os.cpu_count() or 1
    return max(1, int(threads))


def batch_generator(seed: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(batch)])))


def run_batches(fn: BatchFunc, n_samples: int, seed: int, batch_size: int = BATCH_SIZE,
                threads: Optional[int] = None) -> MonteCarloResult:
    """
    Sample mean and standard error of fn's per-draw values.

    Args:
        fn: Batch evaluator fn(rng, count)
        n_samples: Total number of draws (>= 2)
        seed: Base seed of the counter-based streams
        batch_size: Draws per stream
        threads: Worker threads (see worker_count)
    """
    if n_samples < 2:
        raise InvalidArgumentError(f"need at least 2 samples, got {n_samples}")
    if seed < 0:
        raise InvalidArgumentError(f"seed must be non-negative, got {seed}")
    counts = [batch_size] * (n_samples // batch_size)
    if n_samples % batch_size:
        counts.append(n_samples % batch_size)

    def one(batch: int):
        values = np.asarray(fn(batch_generator(seed, batch), counts[batch]), dtype=float)
        return values.sum(axis=0), (values ** 2).sum(axis=0)

    workers = min(worker_count(threads), len(counts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(one, range(len(counts))))
    else:
        partials = [one(b) for b in range(len(counts))]

    total = sum(p[0] for p in partials)
    total_sq = sum(p[1] for p in partials)
    mean = total / n_samples
    var = np.maximum(total_sq / n_samples - mean ** 2, 0.0) * n_samples / (n_samples - 1)
    stderr = np.sqrt(var / n_samples)
    logger.debug("%d draws in %d batches on %d threads", n_samples, len(counts), workers)
    return MonteCarloResult(mean, stderr, n_samples, seed)
