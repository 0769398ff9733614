"""Desk-scale synthetic corpus of benign service records.

Each record mixes a shared pool of function words with words from a few
topics, so tokens of one record co-occur far more than random vocabulary
draws do. Topics only draw from a small lexicon (fewer words than embedding
dimensions), the way fluent text keeps to a narrow slice of a large
tokenizer vocabulary; most of the vocabulary is never used by benign text.
The answer is a subset of the record's reasoning tokens.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..core import ServiceRecord, Tokenizer, Vocabulary

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "kl", "pr", "st", "tr", "sh", "ch", "gr", "fl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]
_SYMBOLS = [".", ",", "=", "+", "-", "(", ")", ":", "?"] + [str(i) for i in range(10)]


@dataclass(frozen=True)
class CorpusConfig:
    n_records: int = 1000
    length_range: tuple = (512, 8192)
    content_words: int = 4000
    lexicon_size: int | None = 200
    common_words: int = 40
    n_topics: int = 60
    topic_size: int = 20
    topics_per_record: int = 3
    main_topic_share: float = 0.7
    common_share: float = 0.45
    zipf_exponent: float = 1.1
    prompt_range: tuple = (16, 64)
    answer_range: tuple = (8, 48)
    seed: int = 0


# log-uniform lengths with mean ceil(L/256) close to 16.8
MATCHED_LENGTHS = (1200, 10000)


def _words(count: int, syllables: tuple, rng: np.random.Generator, taken: set) -> list[str]:
    out = []
    sylls = [o + v for o, v in itertools.product(_ONSETS, _VOWELS)]
    while len(out) < count:
        n = rng.integers(syllables[0], syllables[1] + 1)
        w = "".join(sylls[i] for i in rng.integers(0, len(sylls), n))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _zipf(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


class SyntheticCorpus:
    """Generator of benign records plus the vocabulary/tokenizer they use."""

    def __init__(self, config: CorpusConfig = CorpusConfig()):
        self.config = c = config
        rng = np.random.default_rng([c.seed, 1])
        taken: set[str] = set(_SYMBOLS)
        common = _SYMBOLS + _words(c.common_words - len(_SYMBOLS), (1, 2), rng, taken)
        content = _words(c.content_words, (2, 4), rng, taken)
        self.vocab = Vocabulary(sorted(common + content))
        self.tokenizer = Tokenizer(self.vocab)
        self.common_ids = np.array([self.vocab.id_of(w) for w in common])
        content_ids = np.array([self.vocab.id_of(w) for w in content])
        self.lexicon = content_ids if c.lexicon_size is None else content_ids[:c.lexicon_size]
        self.topics = np.stack([rng.choice(self.lexicon, c.topic_size, replace=False)
                                for _ in range(c.n_topics)])
        self.common_p = _zipf(len(self.common_ids), c.zipf_exponent)
        self.topic_p = _zipf(c.topic_size, c.zipf_exponent)

    def _draw(self, rng, topics: np.ndarray, n: int) -> np.ndarray:
        c = self.config
        out = np.empty(n, dtype=np.int64)
        is_common = rng.random(n) < c.common_share
        out[is_common] = rng.choice(self.common_ids, is_common.sum(), p=self.common_p)
        rest = ~is_common
        k = int(rest.sum())
        side = len(topics) - 1
        pick = np.where(rng.random(k) < c.main_topic_share, 0,
                        1 + rng.integers(0, max(side, 1), k)) if side else np.zeros(k, int)
        word = rng.choice(c.topic_size, k, p=self.topic_p)
        out[rest] = topics[pick, word]
        return out

    def record(self, index: int) -> ServiceRecord:
        c = self.config
        rng = np.random.default_rng([c.seed, 2, index])
        topics = self.topics[rng.choice(c.n_topics, c.topics_per_record, replace=False)]
        lo, hi = c.length_range
        length = int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))
        reasoning = self._draw(rng, topics, length)
        prompt = self._draw(rng, topics, int(rng.integers(c.prompt_range[0], c.prompt_range[1] + 1)))
        n_ans = int(rng.integers(c.answer_range[0], c.answer_range[1] + 1))
        answer = reasoning[np.sort(rng.choice(length, min(n_ans, length), replace=False))]
        return ServiceRecord.benign(prompt, reasoning, answer, record_id=f"rec-{c.seed}-{index:06d}")

    def records(self, count: int | None = None, offset: int = 0) -> list[ServiceRecord]:
        count = self.config.n_records if count is None else count
        return [self.record(offset + i) for i in range(count)]

    def text(self, ids) -> str:
        return self.tokenizer.decode(ids)
