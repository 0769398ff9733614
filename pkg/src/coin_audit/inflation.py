"""Adversary simulation: token-count inflation attacks on service records.

Token-level strategies (naive, ada1, ada2) hit the injection budget
``floor(IR * |R|)`` exactly. Sequence-level strategies (ada3, ada4) inject
whole segments and may overshoot by less than one segment.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import InvalidInput, ServiceRecord, inflation_rate
from .embedding import EmbeddingProvider

KINDS = ("naive", "ada1", "ada2", "ada3", "ada4", "misreport")
TOKEN_LEVEL = ("naive", "ada1", "ada2")
DEFAULT_IRS = (0.1, 0.3, 0.5, 1.0, 2.0, 3.0)


@dataclass(frozen=True)
class InflationConfig:
    kind: str = "naive"
    ratios: tuple = DEFAULT_IRS
    anchor_source: str = "R"
    strategy_weights: dict | None = None
    segment_length: tuple = (16, 64)
    insertion_mode: str = "block_interleave"
    block_range: tuple = (8, 64)
    neighbor_pool: int = 10
    multiplier: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS and self.kind != "mix":
            raise InvalidInput(f"unknown inflation kind {self.kind!r}")
        if self.anchor_source not in ("P", "R", "A"):
            raise InvalidInput("anchor_source must be one of P, R, A")
        if self.insertion_mode not in ("append", "block_interleave"):
            raise InvalidInput(f"unknown insertion mode {self.insertion_mode!r}")
        if any(r <= 0 for r in self.ratios):
            raise InvalidInput("inflation ratios must be positive")
        if self.strategy_weights:
            total = sum(self.strategy_weights.values())
            if abs(total - 1.0) > 1e-9:
                raise InvalidInput("strategy weights must sum to 1")
            unknown = set(self.strategy_weights) - set(KINDS[:5])
            if unknown:
                raise InvalidInput(f"unknown strategies {sorted(unknown)}")

    def weights(self) -> dict:
        return dict(self.strategy_weights or {self.kind: 1.0})


@dataclass
class InflationContext:
    """Resources the strategies draw on."""

    vocab_size: int
    provider: EmbeddingProvider | None = None
    donors: Sequence[ServiceRecord] = ()
    index: "RetrievalIndex | None" = None


@dataclass(frozen=True, eq=False)
class InflatedRecord:
    record: ServiceRecord  # as billed by the provider
    original: ServiceRecord
    injected_positions: np.ndarray
    kind: str
    ir: float

    @property
    def injected_token_count(self) -> int:
        return len(self.injected_positions)

    @property
    def achieved_ir(self) -> float:
        extra = self.record.m - len(self.original.reasoning)
        return inflation_rate(len(self.original.reasoning), extra)

    def restore(self) -> np.ndarray:
        keep = np.ones(len(self.record.reasoning), dtype=bool)
        keep[self.injected_positions] = False
        return self.record.reasoning[keep]


def record_seed(record: ServiceRecord, seed: int, salt: int = 0) -> list[int]:
    return [int(seed), int(salt), zlib.crc32(record.record_id.encode())]


def anchor_tokens(record: ServiceRecord, source: str) -> np.ndarray:
    return {"P": record.prompt, "R": record.reasoning, "A": record.answer}[source]


# -- strategies: each returns a Pool covering >= budget tokens --------------

class Pool:
    """Injected tokens grouped into chunks (single tokens or verbatim segments)."""

    def __init__(self, tokens, ends):
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.ends = np.asarray(ends, dtype=np.int64)

    @classmethod
    def of_tokens(cls, tokens) -> "Pool":
        tokens = np.asarray(tokens, dtype=np.int64)
        return cls(tokens, np.arange(1, len(tokens) + 1))

    @classmethod
    def of_chunks(cls, chunks) -> "Pool":
        if not chunks:
            return cls(np.zeros(0), np.zeros(0))
        return cls(np.concatenate(chunks), np.cumsum([len(c) for c in chunks]))

    @classmethod
    def concat(cls, pools) -> "Pool":
        tokens, ends, offset = [], [], 0
        for p in pools:
            tokens.append(p.tokens)
            ends.append(p.ends + offset)
            offset += len(p.tokens)
        if not tokens:
            return cls(np.zeros(0), np.zeros(0))
        return cls(np.concatenate(tokens), np.concatenate(ends))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def chunk_lengths(self) -> np.ndarray:
        return np.diff(self.ends, prepend=0)

    def chunks(self) -> list[np.ndarray]:
        starts = self.ends - self.chunk_lengths
        return [self.tokens[a:b] for a, b in zip(starts, self.ends)]

    def shuffled(self, rng: np.random.Generator) -> "Pool":
        lengths = self.chunk_lengths
        order = rng.permutation(len(lengths))
        starts = (self.ends - lengths)[order]
        new_lengths = lengths[order]
        offsets = np.repeat(starts - np.cumsum(new_lengths) + new_lengths, new_lengths)
        idx = np.arange(len(self.tokens)) + offsets
        return Pool(self.tokens[idx], np.cumsum(new_lengths))

    def take(self, n: int) -> np.ndarray:
        """Leading chunks until ``n`` tokens are covered."""
        if n <= 0:
            return np.zeros(0, dtype=np.int64)
        cut = int(np.searchsorted(self.ends, n))
        end = self.ends[min(cut, len(self.ends) - 1)] if len(self.ends) else 0
        return self.tokens[:end].copy()


def _naive_pool(budget, record, ctx, cfg, rng):
    if ctx.vocab_size <= 1:
        raise InvalidInput("empty vocabulary")
    return Pool.of_tokens(rng.integers(1, ctx.vocab_size, budget))


_NEIGHBOR_CACHE: dict = {}


def nearest_neighbors(provider: EmbeddingProvider, vocab_size: int, token_ids, n: int) -> np.ndarray:
    """Top-``n`` most cosine-similar vocabulary ids for each token, excluding itself.

    Id 0 (unknown) is never proposed. Rows are sorted by decreasing similarity.
    """
    key = (id(provider), getattr(provider, "name", ""), vocab_size, n)
    table = _NEIGHBOR_CACHE.get(key)
    if table is None:
        emb = provider.embed_tokens(np.arange(vocab_size))
        emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        sims = emb @ emb[1:].T
        sims[np.arange(1, vocab_size), np.arange(vocab_size - 1)] = -np.inf
        n_eff = min(n, vocab_size - 2)
        top = np.argpartition(-sims, n_eff - 1, axis=1)[:, :n_eff]
        order = np.argsort(-np.take_along_axis(sims, top, axis=1), axis=1, kind="stable")
        table = np.take_along_axis(top, order, axis=1) + 1
        _NEIGHBOR_CACHE.clear()
        _NEIGHBOR_CACHE[key] = table
    return table[np.asarray(token_ids)]


def _ada1_pool(budget, record, ctx, cfg, rng):
    anchor = anchor_tokens(record, cfg.anchor_source)
    if len(anchor) == 0:
        raise InvalidInput("empty anchor source")
    if ctx.provider is None:
        raise InvalidInput("ada1 needs an embedding provider")
    neigh = nearest_neighbors(ctx.provider, ctx.vocab_size, anchor, cfg.neighbor_pool)
    which = rng.integers(0, len(anchor), budget)
    col = rng.integers(0, neigh.shape[1], budget)
    return Pool.of_tokens(neigh[which, col])


def _ada2_pool(budget, record, ctx, cfg, rng):
    anchor = anchor_tokens(record, cfg.anchor_source)
    if len(anchor) == 0:
        raise InvalidInput("empty anchor source")
    return Pool.of_tokens(rng.choice(anchor, budget, replace=True))


def _ada3_pool(budget, record, ctx, cfg, rng):
    donors = [d for d in ctx.donors
              if d.record_id != record.record_id and len(d.reasoning)]
    if not donors:
        raise InvalidInput("empty donor corpus")
    lo, hi = cfg.segment_length
    chunks, total = [], 0
    while total < budget:
        donor = donors[rng.integers(len(donors))].reasoning
        length = min(int(rng.integers(lo, hi + 1)), len(donor))
        start = int(rng.integers(0, len(donor) - length + 1))
        chunks.append(donor[start:start + length])
        total += length
    return Pool.of_chunks(chunks)


class RetrievalIndex:
    """Passages (token-id arrays) with unit embeddings for cosine top-k lookup."""

    def __init__(self, passages: Sequence[np.ndarray], owners: Sequence[str],
                 provider: EmbeddingProvider):
        keep = [i for i, p in enumerate(passages) if len(p)]
        if not keep:
            raise InvalidInput("empty retrieval index")
        self.passages = [np.asarray(passages[i]) for i in keep]
        self.owners = [owners[i] for i in keep]
        self.provider = provider
        embs = np.stack([provider.embed_sequence(p) for p in self.passages])
        self.embeddings = embs / np.linalg.norm(embs, axis=1, keepdims=True)

    @classmethod
    def from_prompts(cls, corpus: Sequence[ServiceRecord], provider) -> "RetrievalIndex":
        return cls([r.prompt for r in corpus], [r.record_id for r in corpus], provider)

    def __len__(self) -> int:
        return len(self.passages)

    def search(self, query_emb, exclude_owner: str = "") -> list[int]:
        q = np.asarray(query_emb, dtype=np.float64)
        sims = self.embeddings @ (q / np.linalg.norm(q))
        order = np.argsort(-sims, kind="stable")
        return [int(i) for i in order if self.owners[i] != exclude_owner]


def _ada4_pool(budget, record, ctx, cfg, rng):
    if ctx.index is None or len(ctx.index) == 0:
        raise InvalidInput("empty retrieval index")
    anchor = anchor_tokens(record, cfg.anchor_source)
    if len(anchor) == 0:
        raise InvalidInput("empty anchor source")
    ranked = ctx.index.search(ctx.index.provider.embed_sequence(anchor), record.record_id)
    if not ranked:
        raise InvalidInput("retrieval index holds only the record itself")
    max_len = cfg.segment_length[1]
    chunks, total, i = [], 0, 0
    while total < budget:
        passage = ctx.index.passages[ranked[i % len(ranked)]]
        for lo in range(0, len(passage), max_len):
            piece = passage[lo:lo + max_len]
            chunks.append(piece)
            total += len(piece)
            if total >= budget:
                break
        i += 1
    return Pool.of_chunks(chunks)


_STRATEGIES = {"naive": _naive_pool, "ada1": _ada1_pool, "ada2": _ada2_pool,
               "ada3": _ada3_pool, "ada4": _ada4_pool}


def collect_pool(budget: int, record: ServiceRecord, ctx: InflationContext,
                 cfg: InflationConfig, rng: np.random.Generator) -> Pool:
    """Chunks from the weighted strategies, shuffled, covering at least ``budget`` tokens."""
    weights = cfg.weights()
    names = sorted(weights)
    alloc = [math.floor(weights[k] * budget) for k in names]
    short = budget - sum(alloc)
    for i in np.argsort([-(weights[k] * budget - a) for k, a in zip(names, alloc)],
                        kind="stable")[:short]:
        alloc[i] += 1
    pool = Pool.concat([_STRATEGIES[name](count, record, ctx, cfg, rng)
                        for name, count in zip(names, alloc) if count])
    return pool.shuffled(rng) if len(names) > 1 else pool


def subsample(pool: Pool, n: int) -> np.ndarray:
    return pool.take(n)


def insert(original: np.ndarray, injected: np.ndarray, mode: str, block_range: tuple,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Splice ``injected`` into ``original``; returns (sequence, injected positions)."""
    n, k = len(original), len(injected)
    if mode == "append":
        return np.concatenate([original, injected]), np.arange(n, n + k)
    run_lengths = []
    left = k
    while left > 0:
        run = min(left, int(rng.integers(block_range[0], block_range[1] + 1)))
        run_lengths.append(run)
        left -= run
    gaps = np.sort(rng.integers(0, n + 1, len(run_lengths)))
    primary = np.concatenate([np.arange(n), np.repeat(gaps, run_lengths)])
    secondary = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(k, dtype=np.int64)])
    tertiary = np.concatenate([np.zeros(n, dtype=np.int64), np.arange(k)])
    order = np.lexsort((tertiary, secondary, primary))
    seq = np.concatenate([original, injected])[order]
    positions = np.flatnonzero(secondary[order] == 0)
    return seq, positions


def _finish(record: ServiceRecord, injected: np.ndarray, kind: str, ir: float,
            cfg: InflationConfig, rng) -> InflatedRecord:
    seq, positions = insert(record.reasoning, injected, cfg.insertion_mode, cfg.block_range, rng)
    billed = record.with_reasoning(seq, label=f"inflated:{kind}", kind=kind, ir=ir)
    return InflatedRecord(billed, record, positions, kind, ir)


def inflate(record: ServiceRecord, ir: float, ctx: InflationContext,
            cfg: InflationConfig, seed: int | None = None) -> InflatedRecord:
    """Inflate one record at one ratio with ``cfg``'s strategy (or strategy mix)."""
    if ir <= 0:
        raise InvalidInput("inflation ratio must be positive")
    if cfg.kind == "misreport":
        return misreport(record, cfg.multiplier)
    rng = np.random.default_rng(record_seed(record, cfg.seed if seed is None else seed))
    budget = math.floor(ir * len(record.reasoning))
    pool = collect_pool(budget, record, ctx, cfg, rng)
    kind = cfg.kind if not cfg.strategy_weights or len(cfg.strategy_weights) == 1 else "mix"
    return _finish(record, subsample(pool, budget), kind, ir, cfg, rng)


def inflate_naive(record, ir, vocab_size, seed=0, cfg: InflationConfig | None = None):
    cfg = replace(cfg or InflationConfig(), kind="naive", strategy_weights=None)
    return inflate(record, ir, InflationContext(vocab_size), cfg, seed)


def inflate_ada1(record, ir, vocab_size, provider, seed=0, cfg: InflationConfig | None = None):
    cfg = replace(cfg or InflationConfig(), kind="ada1", strategy_weights=None)
    return inflate(record, ir, InflationContext(vocab_size, provider), cfg, seed)


def inflate_ada2(record, ir, seed=0, cfg: InflationConfig | None = None):
    cfg = replace(cfg or InflationConfig(), kind="ada2", strategy_weights=None)
    return inflate(record, ir, InflationContext(0), cfg, seed)


def inflate_ada3(record, ir, donors, seed=0, cfg: InflationConfig | None = None):
    cfg = replace(cfg or InflationConfig(), kind="ada3", strategy_weights=None)
    return inflate(record, ir, InflationContext(0, donors=donors), cfg, seed)


def inflate_ada4(record, ir, index: RetrievalIndex, seed=0, cfg: InflationConfig | None = None):
    cfg = replace(cfg or InflationConfig(), kind="ada4", strategy_weights=None)
    return inflate(record, ir, InflationContext(0, index=index), cfg, seed)


def misreport(record: ServiceRecord, multiplier: float) -> InflatedRecord:
    """Leave the tokens alone and bill ``floor(multiplier * |R|)`` of them."""
    if multiplier <= 1:
        raise InvalidInput("misreport multiplier must exceed 1")
    m = math.floor(multiplier * len(record.reasoning))
    billed = record.with_reasoning(record.reasoning, m=m, label="inflated:misreport",
                                   kind="misreport", ir=multiplier - 1)
    return InflatedRecord(billed, record, np.zeros(0, dtype=np.int64), "misreport", multiplier - 1)


def inflate_dataset(corpus: Sequence[ServiceRecord], cfg: InflationConfig,
                    ctx: InflationContext) -> list[InflatedRecord]:
    """One inflated record per (input record, ratio).

    A single pool sized for the largest ratio is drawn per record; each
    ratio takes a prefix of it, so smaller ratios inject subsets of larger ones.
    """
    if not corpus:
        raise InvalidInput("empty corpus")
    out = []
    top = max(cfg.ratios)
    for record in corpus:
        n = len(record.reasoning)
        if n == 0:
            continue
        if cfg.kind == "misreport":
            out.append(misreport(record, cfg.multiplier))
            continue
        rng = np.random.default_rng(record_seed(record, cfg.seed))
        pool = collect_pool(math.floor(n * top), record, ctx, cfg, rng)
        kind = cfg.kind if not cfg.strategy_weights or len(cfg.strategy_weights) == 1 else "mix"
        for k in cfg.ratios:
            injected = subsample(pool, math.floor(n * k))
            out.append(_finish(record, injected, kind, k, cfg, rng))
    return out


def inflated_to_json(item: InflatedRecord, tokenizer) -> dict:
    row = item.record.to_json(tokenizer)
    row.update(kind=item.kind, ir=item.ir,
               injected_positions=[int(p) for p in item.injected_positions])
    return row


def mix_balanced(benign: Sequence, inflated: Sequence, rng: np.random.Generator) -> list:
    """Interleave equal numbers of benign (label 0) and inflated (label 1) items."""
    n = min(len(benign), len(inflated))
    items = [(b, 0) for b in benign[:n]] + [(x, 1) for x in inflated[:n]]
    return [items[i] for i in rng.permutation(len(items))]
