"""Token sequences, tokenization, block partitioning and billing arithmetic."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

UNK = "<unk>"
BLOCK_SIZE_PRESETS = (256, 512, 1024)

_TOKEN_RE = re.compile(r"<unk>|\w+|[^\w\s]")


class InvalidInput(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class Token(NamedTuple):
    id: int
    surface: str


class Vocabulary:
    """Bidirectional surface <-> id map. Id 0 is always the unknown token."""

    def __init__(self, surfaces: Iterable[str] = ()):
        self._surfaces: list[str] = [UNK]
        self._ids: dict[str, int] = {UNK: 0}
        for s in surfaces:
            if s not in self._ids:
                self._ids[s] = len(self._surfaces)
                self._surfaces.append(s)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(split_surfaces(text))
        seen.discard(UNK)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self._surfaces)

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def id_of(self, surface: str) -> int:
        return self._ids.get(surface, 0)

    def surface_of(self, token_id: int) -> str:
        return self._surfaces[token_id]

    @property
    def surfaces(self) -> list[str]:
        return list(self._surfaces)

    def to_json(self) -> list[str]:
        return self._surfaces[1:]

    @classmethod
    def from_json(cls, surfaces: Sequence[str]) -> "Vocabulary":
        return cls(surfaces)


def split_surfaces(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Tokenizer:
    """Rule-based default tokenizer.

    Splits on whitespace and punctuation boundaries, lowercases and maps each
    piece to an id of ``vocab``. Any object exposing ``encode``, ``decode``
    and ``vocab`` can stand in for it (e.g. a wrapper around a model tokenizer).
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def tokenize(self, text: str) -> list[Token]:
        return [Token(self.vocab.id_of(s), s if s in self.vocab else UNK)
                for s in split_surfaces(text)]

    def encode(self, text: str) -> np.ndarray:
        ids = [self.vocab.id_of(s) for s in split_surfaces(text)]
        return np.asarray(ids, dtype=np.int64)

    def detokenize(self, tokens: Iterable[Token]) -> str:
        return " ".join(t.surface for t in tokens)

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.vocab.surface_of(int(i)) for i in ids)


def tokenize(text: str, tokenizer: Tokenizer) -> list[Token]:
    return tokenizer.tokenize(text)


def detokenize(tokens: Iterable[Token], tokenizer: Tokenizer) -> str:
    return tokenizer.detokenize(tokens)


def _ids(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ServiceRecord:
    """One billed interaction: prompt, hidden reasoning, answer and reported counts.

    Token sequences are stored as read-only id arrays.
    """

    prompt: np.ndarray
    reasoning: np.ndarray
    answer: np.ndarray
    m: int
    n: int
    label: str = "benign"
    record_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("prompt", "reasoning", "answer"):
            object.__setattr__(self, name, _ids(getattr(self, name)))

    @classmethod
    def benign(cls, prompt, reasoning, answer, record_id: str = "") -> "ServiceRecord":
        r, a = _ids(reasoning), _ids(answer)
        return cls(prompt, r, a, m=len(r), n=len(a), label="benign", record_id=record_id)

    @property
    def is_benign(self) -> bool:
        return self.label == "benign"

    @property
    def billed_tokens(self) -> int:
        return self.m + self.n

    def with_reasoning(self, reasoning, m: int | None = None, label: str | None = None,
                       **meta) -> "ServiceRecord":
        reasoning = _ids(reasoning)
        return replace(self, reasoning=reasoning, m=len(reasoning) if m is None else m,
                       label=self.label if label is None else label,
                       meta={**self.meta, **meta})

    def to_json(self, tokenizer: Tokenizer) -> dict:
        out = {
            "id": self.record_id,
            "prompt": tokenizer.decode(self.prompt),
            "reasoning": tokenizer.decode(self.reasoning),
            "answer": tokenizer.decode(self.answer),
            "m": self.m,
            "n": self.n,
            "label": self.label,
        }
        out.update(self.meta)
        return out

    @classmethod
    def from_json(cls, obj: dict, tokenizer: Tokenizer) -> "ServiceRecord":
        known = {"id", "prompt", "reasoning", "answer", "m", "n", "label"}
        reasoning = tokenizer.encode(obj["reasoning"])
        answer = tokenizer.encode(obj["answer"])
        return cls(
            prompt=tokenizer.encode(obj["prompt"]),
            reasoning=reasoning,
            answer=answer,
            m=int(obj.get("m", len(reasoning))),
            n=int(obj.get("n", len(answer))),
            label=obj.get("label", "benign"),
            record_id=str(obj.get("id", "")),
            meta={k: v for k, v in obj.items() if k not in known},
        )


@dataclass(frozen=True, eq=False)
class Block:
    index: int
    tokens: np.ndarray
    start: int = 0

    def __len__(self) -> int:
        return len(self.tokens)


def block_count(n_tokens: int, block_size: int) -> int:
    if block_size < 1:
        raise InvalidInput("block size must be >= 1")
    return -(-n_tokens // block_size)


def partition_trace(reasoning, block_size: int) -> list[Block]:
    """Split ``reasoning`` into consecutive blocks of ``block_size`` tokens.

    The last block holds the remainder. Empty input yields no blocks.
    """
    ids = np.asarray(reasoning)
    alpha = block_count(len(ids), block_size)
    return [Block(j, ids[j * block_size:(j + 1) * block_size], j * block_size)
            for j in range(alpha)]


def tokens_per_block(block_len: int) -> int:
    """Per-block sample size k = max(1, floor(0.1 * block length))."""
    return max(1, math.floor(0.1 * block_len))


def inflation_rate(original_count: int, injected_count: int) -> float:
    if original_count <= 0:
        raise InvalidInput("inflation rate is undefined for an empty original sequence")
    return injected_count / original_count


@dataclass(frozen=True)
class AuditParams:
    block_size: int = 256
    initial_ratio: float = 0.3
    per_block_sample: int | None = None
    threshold: float | None = None
    verifier_kind: str = "rule"
    cumulative: bool = False

    def __post_init__(self):
        if self.block_size < 1:
            raise InvalidInput("block_size must be >= 1")
        if not 0 < self.initial_ratio <= 1:
            raise InvalidInput("initial_ratio must lie in (0, 1]")
        if self.verifier_kind not in ("rule", "learned"):
            raise InvalidInput(f"unknown verifier kind {self.verifier_kind!r}")
        if self.per_block_sample is None:
            object.__setattr__(self, "per_block_sample", tokens_per_block(self.block_size))
        if self.threshold is None:
            object.__setattr__(self, "threshold", 0.6 if self.verifier_kind == "rule" else 0.5)
        if not 0 < self.threshold < 1:
            raise InvalidInput("threshold must lie in (0, 1)")

    @property
    def k(self) -> int:
        return self.per_block_sample

    @property
    def tau(self) -> float:
        return self.threshold

    def sample_size(self, block_len: int) -> int:
        """Tokens to challenge in a block of ``block_len`` tokens."""
        if block_len >= self.block_size:
            return min(self.per_block_sample, block_len)
        return min(tokens_per_block(block_len), block_len)

    def initial_blocks(self, alpha: int) -> int:
        if alpha <= 0:
            return 0
        return max(1, math.ceil(self.initial_ratio * alpha - 1e-9))


# -- JSON-lines corpus IO ---------------------------------------------------

def iter_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
            n += 1
    return n


def load_corpus(path, tokenizer: Tokenizer | None = None) -> tuple[list[ServiceRecord], Tokenizer]:
    """Load a JSON-lines corpus. Without a tokenizer, one is built from the file."""
    rows = list(iter_jsonl(path))
    if tokenizer is None:
        tokenizer = Tokenizer(Vocabulary.from_texts(
            t for r in rows for t in (r["prompt"], r["reasoning"], r["answer"])))
    return [ServiceRecord.from_json(r, tokenizer) for r in rows], tokenizer


def save_corpus(path, records: Iterable[ServiceRecord], tokenizer: Tokenizer) -> int:
    return write_jsonl(path, (r.to_json(tokenizer) for r in records))
