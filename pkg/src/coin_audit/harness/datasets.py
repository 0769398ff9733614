"""Training sets for the matching heads and the DeepSets verifier."""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from ..core import AuditParams, ServiceRecord, block_count
from ..embedding import EmbeddingProvider
from ..inflation import InflationConfig, InflationContext, collect_pool, inflate
from ..matching import build_features_batch
from ..protocol import answer_embedding
from ..verifier import MatchScorePair

BLOCK_SIZES = (256, 512, 1024)
SAMPLE_FRACTION = (1 / 32, 1 / 8)
TB_KINDS = ("naive", "ada1", "ada3")
BA_KINDS = ("naive", "ada3", "ada4")
TAIL_SHARE = 0.2  # fraction of pairs cut to remainder-block length
MIN_TAIL = 4


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _block_emb(provider, tokens):
    return _f32(provider.embed_block(tokens))


def _sample_mean(provider, tokens, rng, frac=None):
    lo, hi = SAMPLE_FRACTION if frac is None else frac
    k = max(1, int(round(len(tokens) * rng.uniform(lo, hi))))
    pick = rng.choice(len(tokens), min(k, len(tokens)), replace=False)
    return _f32(provider.embed_tokens(tokens[pick])).mean(axis=0)


def _inflated_block(record, beta, ctx, kinds, rng, length=None, min_fraction=0.2, max_tries=8):
    """A block of an inflated copy of ``record`` that holds injected tokens.

    Half the time the block is made only of injected tokens ("simple"),
    otherwise it is cut from a spliced sequence ("hard"). ``length`` cuts a
    short window instead, the way a remainder block looks.
    """
    length = beta if length is None else length
    kind = kinds[rng.integers(len(kinds))]
    cfg = InflationConfig(kind=kind, seed=int(rng.integers(2**31)))
    if rng.random() < 0.5:
        return collect_pool(length, record, ctx, cfg, rng).tokens[:length]
    for _ in range(max_tries):
        ir = float(rng.choice([0.5, 1.0, 2.0, 3.0]))
        item = inflate(record, ir, ctx, cfg)
        seq = item.record.reasoning
        mask = np.zeros(len(seq), dtype=bool)
        mask[item.injected_positions] = True
        alpha = block_count(len(seq), beta)
        for j in rng.permutation(alpha):
            blk = mask[j * beta:j * beta + length]
            if len(blk) >= min(8, length) and blk.mean() >= min_fraction:
                return seq[j * beta:j * beta + length]
    return collect_pool(length, record, ctx, cfg, rng).tokens[:length]


def _window(rng, beta) -> int | None:
    """Length of a short remainder-like window, or None for a full block."""
    if rng.random() >= TAIL_SHARE:
        return None
    return int(rng.integers(MIN_TAIL, beta))


def _pair_tokens(i, records, ctx, kinds, block_sizes, rng):
    rec = records[rng.integers(len(records))]
    beta = int(rng.choice(block_sizes))
    length = _window(rng, beta)
    if i % 2 == 0:
        alpha = block_count(len(rec.reasoning), beta)
        j = int(rng.integers(alpha))
        end = j * beta + (beta if length is None else length)
        return rec, rec.reasoning[j * beta:end], 0
    return rec, _inflated_block(rec, beta, ctx, kinds, rng, length), 1


def token_block_pairs(records: Sequence[ServiceRecord], ctx: InflationContext,
                      provider: EmbeddingProvider, n_pairs: int, seed: int = 0,
                      kinds=TB_KINDS, block_sizes=BLOCK_SIZES):
    """Balanced (features, labels) for token-to-block; 1 = inflated block."""
    rng = np.random.default_rng([seed, 11])
    A, B, y = [], [], []
    for i in range(n_pairs):
        _, tokens, label = _pair_tokens(i, records, ctx, kinds, block_sizes, rng)
        A.append(_sample_mean(provider, tokens, rng))
        B.append(_block_emb(provider, tokens))
        y.append(label)
    return build_features_batch(np.stack(A), np.stack(B)), np.asarray(y, dtype=np.float64)


def block_answer_pairs(records: Sequence[ServiceRecord], ctx: InflationContext,
                       provider: EmbeddingProvider, n_pairs: int, seed: int = 0,
                       kinds=BA_KINDS, block_sizes=BLOCK_SIZES):
    """Balanced (features, labels) for block-to-answer; 1 = inflated block."""
    rng = np.random.default_rng([seed, 12])
    A, B, y = [], [], []
    for i in range(n_pairs):
        rec, tokens, label = _pair_tokens(i, records, ctx, kinds, block_sizes, rng)
        A.append(_block_emb(provider, tokens))
        B.append(answer_embedding(provider, rec.answer))
        y.append(label)
    return build_features_batch(np.stack(A), np.stack(B)), np.asarray(y, dtype=np.float64)


def score_sets(items, heads, provider: EmbeddingProvider, params: AuditParams,
               n_sets_per_item: int = 2, seed: int = 0):
    """Per-round evidence sets for DeepSets training, scored without Merkle traffic.

    ``items`` are ``(record, label)`` with label 1 = benign, 0 = inflated.
    Sets take the sizes a real audit produces: the initial batch or one block.
    """
    rng = np.random.default_rng([seed, 13])
    tb, ba = heads
    beta = params.block_size
    sets, labels = [], []
    for record, label in items:
        seq = record.reasoning
        alpha = block_count(len(seq), beta)
        if alpha == 0:
            continue
        block_embs = _f32(provider.embed_blocks(seq, beta))
        ans = answer_embedding(provider, record.answer)
        for s in range(n_sets_per_item):
            size = params.initial_blocks(alpha) if s % 2 == 0 else 1
            chosen = rng.choice(alpha, size, replace=False)
            avgs = []
            for j in chosen:
                blk = seq[j * beta:(j + 1) * beta]
                k = params.sample_size(len(blk))
                avgs.append(_f32(provider.embed_tokens(blk[rng.choice(len(blk), k, replace=False)]))
                            .mean(axis=0))
            be = block_embs[chosen]
            s_tb = tb.scores(build_features_batch(np.stack(avgs), be))
            s_ba = ba.scores(build_features_batch(be, np.repeat(ans[None], len(be), axis=0)))
            sets.append([MatchScorePair(float(a), float(b), int(j))
                         for a, b, j in zip(s_tb, s_ba, chosen)])
            labels.append(label)
    return sets, np.asarray(labels, dtype=np.float64)
