"""Matching heads: pairwise relevance scorers over ``[a; b; a-b; a*b; cos]``.

The classifier is trained on inflated=1 / benign=0 labels. The match score
exposed to the audit is ``S = 1 - p(inflated)``, so higher means "aligned"
and verifiers accept when scores exceed the threshold.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _nn
from ._nn import MATCHING_DEFAULTS, TrainConfig
from .core import InvalidInput
from .embedding import average_embeddings, cosine_rows

log = logging.getLogger(__name__)

TOKEN_TO_BLOCK = "token_to_block"
BLOCK_TO_ANSWER = "block_to_answer"
HEAD_KINDS = (TOKEN_TO_BLOCK, BLOCK_TO_ANSWER)


def feature_width(d: int) -> int:
    return 4 * d + 1


def build_features(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInput(f"dimension mismatch: {a.shape} vs {b.shape}")
    return build_features_batch(a[None, :], b[None, :])[0]


def build_features_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2:
        raise InvalidInput(f"dimension mismatch: {A.shape} vs {B.shape}")
    cos = cosine_rows(A, B)
    return np.concatenate([A, B, A - B, A * B, cos[:, None]], axis=1)


def focal_loss(p, y, gamma_f: float = 2.0, alpha_f: float = 0.25):
    """Focal loss on probabilities; ``p`` is clamped into ``[1e-7, 1 - 1e-7]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), _nn.EPS, 1.0 - _nn.EPS)
    y = np.asarray(y)
    pt = np.where(y == 1, p, 1.0 - p)
    alpha_t = np.where(y == 1, alpha_f, 1.0 - alpha_f)
    out = -alpha_t * (1.0 - pt) ** gamma_f * np.log(pt)
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class MatchingHead:
    kind: str
    w1: np.ndarray  # (4d+1, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float
    train_meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, kind: str, d: int = 384, hidden: int | None = None, seed: int = 42,
             zero_output: bool = False) -> "MatchingHead":
        if kind not in HEAD_KINDS:
            raise InvalidInput(f"unknown head kind {kind!r}")
        hidden = d if hidden is None else hidden
        rng = np.random.default_rng(seed)
        fan_in = feature_width(d)
        w1 = _nn.init_uniform(rng, fan_in, (fan_in, hidden))
        w2 = np.zeros(hidden) if zero_output else _nn.init_uniform(rng, hidden, hidden)
        return cls(kind, w1, np.zeros(hidden), w2, 0.0)

    @property
    def d(self) -> int:
        return (self.w1.shape[0] - 1) // 4

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": np.atleast_1d(self.b2)}

    def freeze(self) -> "MatchingHead":
        """Make the weights read-only and score through a float32 copy.

        Trained and loaded heads are frozen; their weights are already
        float32-representable, so only activations lose precision.
        """
        for w in (self.w1, self.b1, self.w2):
            w.setflags(write=False)
        self._f32 = (self.w1.astype(np.float32), self.b1.astype(np.float32),
                     self.w2.astype(np.float32), np.float32(self.b2))
        return self

    @property
    def frozen(self) -> bool:
        return getattr(self, "_f32", None) is not None and not self.w1.flags.writeable

    def _fast_logits(self, X: np.ndarray) -> np.ndarray:
        if not self.frozen:
            return self._logits(X)[0]
        w1, b1, w2, b2 = self._f32
        h = np.maximum(X.astype(np.float32) @ w1 + b1, 0.0)
        return (h @ w2 + b2).astype(np.float64)

    def _logits(self, X: np.ndarray):
        z1 = X @ self.w1 + self.b1
        h = np.maximum(z1, 0.0)
        return h @ self.w2 + self.b2, h

    def inflated_prob(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.w1.shape[0]:
            raise InvalidInput(f"feature width {X.shape[1]} != head input {self.w1.shape[0]}")
        return _nn.sigmoid(self._fast_logits(X))

    def scores(self, X) -> np.ndarray:
        """Match scores ``S = 1 - p(inflated)`` for stacked features."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.w1.shape[0]:
            raise InvalidInput(f"feature width {X.shape[1]} != head input {self.w1.shape[0]}")
        return _nn.sigmoid(-self._fast_logits(X))

    def forward(self, feature) -> float:
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 1:
            raise InvalidInput("forward expects a single feature vector")
        return float(self.scores(feature[None, :])[0])

    def score_pair(self, a, b) -> float:
        return float(self.scores(build_features_batch(np.atleast_2d(a), np.atleast_2d(b)))[0])

    def loss_and_grads(self, X, y, config: TrainConfig = MATCHING_DEFAULTS):
        """Mean training loss on ``p(inflated)`` and its gradients."""
        z, h = self._logits(X)
        if config.loss == "focal":
            losses, dz = _nn.focal_loss_from_logits(z, y, config.focal_gamma, config.focal_alpha)
        else:
            losses, dz = _nn.bce_from_logits(z, y)
        n = len(X)
        dz = dz / n
        dh = np.outer(dz, self.w2) * (h > 0)
        grads = {
            "w1": X.T @ dh,
            "b1": dh.sum(axis=0),
            "w2": h.T @ dz,
            "b2": np.atleast_1d(dz.sum()),
        }
        return float(losses.mean()), grads

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "H": self.hidden,
            "layer1": _nn.f32_list(self.w1),
            "bias1": _nn.f32_list(self.b1),
            "layer2": _nn.f32_list(self.w2),
            "bias2": _nn.f32_list(self.b2),
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MatchingHead":
        if obj.get("kind") not in HEAD_KINDS:
            raise InvalidInput(f"not a matching head envelope: kind={obj.get('kind')!r}")
        return cls(obj["kind"], _nn.as_weights(obj["layer1"]), _nn.as_weights(obj["bias1"]),
                   _nn.as_weights(obj["layer2"]), float(_nn.as_weights(obj["bias2"])),
                   obj.get("train_meta", {})).freeze()

    def save(self, path):
        _nn.save_envelope(path, self.to_json())

    @classmethod
    def load(cls, path) -> "MatchingHead":
        return cls.from_json(_nn.load_envelope(path))


def score_token_to_block(head: MatchingHead, sampled_token_embs, block_emb) -> float:
    """S_tb: head over (mean of sampled token embeddings, block embedding)."""
    return head.score_pair(average_embeddings(np.atleast_2d(sampled_token_embs)), block_emb)


def score_block_to_answer(head: MatchingHead, block_emb, answer_emb) -> float:
    return head.score_pair(block_emb, answer_emb)


def train_matching_head(X, y, config: TrainConfig = MATCHING_DEFAULTS,
                        kind: str = TOKEN_TO_BLOCK, hidden: int | None = None) -> MatchingHead:
    """Mini-batch Adam on the focal (or BCE) loss; returns the final-epoch head.

    ``y`` follows the dataset convention: 1 = inflated, 0 = benign.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise InvalidInput("empty training set")
    if len(np.unique(y)) < 2:
        raise InvalidInput("training set needs both labels")
    d = (X.shape[1] - 1) // 4
    head = MatchingHead.init(kind, d, hidden, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = _nn.Adam(head.params(), config.learning_rate)
    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for lo in range(0, len(X), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, grads = head.loss_and_grads(X[idx], y[idx], config)
            opt.step(grads)
            head.b2 = float(opt.params["b2"][0])
            total += loss * len(idx)
        epoch_losses.append(total / len(X))
        log.info("%s epoch %d loss %.5f", kind, epoch + 1, epoch_losses[-1])
    head.train_meta = {"config": config.to_json(), "epoch_losses": epoch_losses, "n": len(X)}
    head.w1, head.b1, head.w2 = (_nn.as_weights(w) for w in (head.w1, head.b1, head.w2))
    head.b2 = float(np.float32(head.b2))
    return head.freeze()
