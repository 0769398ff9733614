"""Merkle construction timing over (token count, embedding dimension)."""
from __future__ import annotations

import csv
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from ..merkle import build_tree_from_embeddings

FIELDS = ("n", "d", "backend", "min_s", "median_s", "max_s", "repeats")


def _inputs(n: int, d: int, block_size: int, rng: np.random.Generator):
    alpha = -(-n // block_size)
    blocks = rng.standard_normal((alpha, d), dtype=np.float32)
    tokens = rng.standard_normal((n, d), dtype=np.float32)
    return blocks, tokens


def bench_merkle(token_counts: Sequence[int] = (1000, 2000, 4000, 8000),
                 dimensions: Sequence[int] = (384,), repeats: int = 5,
                 backend: str | None = None, block_size: int = 256, seed: int = 0) -> list[dict]:
    """Wall-clock of fingerprinting plus tree building; embeddings are precomputed.

    Runs in the calling thread only.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for d in dimensions:
        for n in token_counts:
            blocks, tokens = _inputs(n, d, block_size, rng)
            times = []
            tree = None
            for _ in range(repeats):
                t0 = time.perf_counter()
                tree = build_tree_from_embeddings(blocks, tokens, block_size, backend)
                times.append(time.perf_counter() - t0)
            rows.append({"n": n, "d": d, "backend": backend or "auto",
                         "min_s": min(times), "median_s": float(np.median(times)),
                         "max_s": max(times), "repeats": repeats, "root": tree.root.hex()})
    return rows


def linear_fit_r2(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = np.asarray(xs, float), np.asarray(ys, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    return 1.0 if total == 0 else float(1 - np.sum(resid ** 2) / total)


def write_csv(rows: Sequence[dict], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
