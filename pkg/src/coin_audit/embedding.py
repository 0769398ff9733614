"""Embedding providers and the small amount of vector arithmetic built on them.

The auditor designates one provider; both parties must use it so that
fingerprints hashed by the provider are reproducible by the auditor.
"""
from __future__ import annotations

import json
import subprocess
import threading
import warnings
from typing import Sequence

import numpy as np

from .core import InvalidInput

DEFAULT_DIM = 384


class ProviderUnavailable(RuntimeError):
    pass


class DegenerateInputWarning(RuntimeWarning):
    pass


class EmbeddingProvider:
    """Base contract: deterministic token and sequence embeddings of fixed width."""

    name = "base"
    dimension = DEFAULT_DIM

    def embed_tokens(self, token_ids) -> np.ndarray:
        raise NotImplementedError

    def embed_sequence(self, token_ids) -> np.ndarray:
        raise NotImplementedError

    def embed_token(self, token_id: int) -> np.ndarray:
        return self.embed_tokens([token_id])[0]

    def embed_tokens_f32(self, token_ids) -> np.ndarray:
        """Token embeddings as little-endian float32, the fingerprint encoding."""
        return np.asarray(self.embed_tokens(token_ids)).astype("<f4")

    def embed_block(self, token_ids) -> np.ndarray:
        if len(token_ids) == 0:
            raise InvalidInput("cannot embed an empty block")
        return self.embed_sequence(token_ids)

    def embed_blocks(self, token_ids, block_size: int) -> np.ndarray:
        ids = np.asarray(token_ids)
        return np.stack([self.embed_block(ids[i:i + block_size])
                         for i in range(0, len(ids), block_size)]) if len(ids) else \
            np.zeros((0, self.dimension))


class SyntheticProvider(EmbeddingProvider):
    """Seeded random unit vectors per token id; blocks embed as normalized means.

    Each token vector comes from a Philox stream keyed by ``(seed, token_id)``
    so the value never depends on call order or cache state.
    """

    def __init__(self, seed: int = 0, dimension: int = DEFAULT_DIM):
        self.seed = int(seed)
        self.dimension = int(dimension)
        self.name = f"synthetic-{self.seed}-{self.dimension}"
        self._table = np.zeros((0, self.dimension))
        self._table32 = np.zeros((0, self.dimension), dtype="<f4")
        self._lock = threading.Lock()

    def _draw(self, token_id: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=[self.seed, int(token_id)]))
        v = gen.standard_normal(self.dimension)
        return v / np.linalg.norm(v)

    def table(self, vocab_size: int) -> np.ndarray:
        """Embedding matrix for ids ``0..vocab_size-1`` (grown lazily, cached)."""
        if vocab_size > len(self._table):
            with self._lock:
                start = len(self._table)
                if vocab_size > start:
                    grown = np.empty((vocab_size, self.dimension))
                    grown[:start] = self._table
                    for i in range(start, vocab_size):
                        grown[i] = self._draw(i)
                    grown.setflags(write=False)
                    self._table = grown
        return self._table

    def embed_tokens(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and ids.min() < 0:
            raise InvalidInput("token ids must be non-negative")
        top = int(ids.max()) + 1 if ids.size else 0
        return self.table(top)[ids]

    def embed_tokens_f32(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        table = self.table(int(ids.max()) + 1 if ids.size else 0)
        if len(self._table32) != len(table):
            self._table32 = table.astype("<f4")
        return self._table32[ids]

    def embed_sequence(self, token_ids) -> np.ndarray:
        mean = self.embed_tokens(token_ids).mean(axis=0)
        return mean / np.linalg.norm(mean)

    def embed_blocks(self, token_ids, block_size: int) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if not len(ids):
            return np.zeros((0, self.dimension))
        if ids.min() < 0:
            raise InvalidInput("token ids must be non-negative")
        n = len(ids)
        alpha = -(-n // block_size)
        table = self.table(int(ids.max()) + 1)
        vocab = len(table)
        if alpha * vocab <= 1 << 24:
            # per-block token counts times the table: far cheaper than gathering rows
            key = (np.arange(n) // block_size) * vocab + ids
            counts = np.bincount(key, minlength=alpha * vocab).reshape(alpha, vocab)
            sums = counts.astype(np.float64) @ table
        else:
            full = n - n % block_size
            sums = table[ids[:full]].reshape(-1, block_size, self.dimension).sum(axis=1)
            if full < n:
                sums = np.vstack([sums, table[ids[full:]].sum(axis=0)])
        return sums / np.linalg.norm(sums, axis=1, keepdims=True)


class ExternalProvider(EmbeddingProvider):
    """Talks line-delimited JSON to a subprocess.

    Request ``{"texts": [...]}``, response ``{"vectors": [[...], ...]}``. The
    dimension is taken from the first response to an empty-probe request. Calls
    are serialized on an internal lock so the provider is safe to share.
    Sequence embeddings are whatever the endpoint returns for the joined text,
    so order-invariance is not guaranteed here.
    """

    def __init__(self, command: Sequence[str], decode, name: str = "external"):
        self.command = list(command)
        self.decode = decode
        self.name = name
        self._lock = threading.Lock()
        self._cache: dict[int, np.ndarray] = {}
        try:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE, text=True, bufsize=1)
        except OSError as exc:
            raise ProviderUnavailable(str(exc)) from exc
        self.dimension = len(self._request(["probe"])[0])

    def _request(self, texts: list[str]) -> np.ndarray:
        with self._lock:
            try:
                self._proc.stdin.write(json.dumps({"texts": texts}) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ProviderUnavailable(str(exc)) from exc
        if not line:
            raise ProviderUnavailable(f"{self.name}: endpoint closed the stream")
        try:
            vectors = np.asarray(json.loads(line)["vectors"], dtype=np.float64)
        except (ValueError, KeyError) as exc:
            raise ProviderUnavailable(f"{self.name}: malformed response") from exc
        if vectors.shape[0] != len(texts):
            raise ProviderUnavailable(f"{self.name}: expected {len(texts)} vectors")
        return vectors

    def embed_tokens(self, token_ids) -> np.ndarray:
        ids = [int(i) for i in token_ids]
        missing = sorted({i for i in ids if i not in self._cache})
        if missing:
            for i, v in zip(missing, self._request([self.decode([i]) for i in missing])):
                self._cache[i] = v
        if not ids:
            return np.zeros((0, self.dimension))
        return np.stack([self._cache[i] for i in ids])

    def embed_sequence(self, token_ids) -> np.ndarray:
        return self._request([self.decode(list(token_ids))])[0]

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)


def average_embeddings(vectors) -> np.ndarray:
    """Component-wise mean, deliberately not re-normalized."""
    if isinstance(vectors, np.ndarray):
        arr = vectors
    else:
        if len(vectors) == 0:
            raise InvalidInput("cannot average an empty list")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise InvalidInput(f"dimension mismatch: {sorted(dims)}")
        arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidInput("expected a non-empty 2-D stack of embeddings")
    return arr.mean(axis=0)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0.0 (with a warning) if either is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity of a zero vector", DegenerateInputWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine for stacked pairs; zero rows give 0."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    out = np.zeros(len(a))
    ok = denom > 0
    out[ok] = np.einsum("ij,ij->i", a[ok], b[ok]) / denom[ok]
    return np.clip(out, -1.0, 1.0)


def to_f32_bytes(vec) -> bytes:
    return np.asarray(vec, dtype="<f4").tobytes()


def from_f32_bytes(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<f4").astype(np.float64)
