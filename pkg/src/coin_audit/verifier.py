"""Round verdicts over unordered sets of (S_tb, S_ba) score pairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _nn
from ._nn import DEEPSETS_DEFAULTS, TrainConfig
from .core import InvalidInput

log = logging.getLogger(__name__)

ACCEPT, REJECT = "Accept", "Reject"


class MatchScorePair(NamedTuple):
    s_tb: float
    s_ba: float
    block_index: int = -1


def _as_array(scores) -> np.ndarray:
    if len(scores) == 0:
        return np.zeros((0, 2))
    return np.asarray([(s[0], s[1]) for s in scores], dtype=np.float64)


def rule_verdict(scores: Sequence, tau: float = 0.6) -> str:
    """Accept iff both the mean S_tb and the mean S_ba exceed ``tau``."""
    arr = _as_array(scores)
    if len(arr) == 0:
        return REJECT
    tb, ba = arr.mean(axis=0)
    return ACCEPT if tb > tau and ba > tau else REJECT


class RuleVerifier:
    kind = "rule"
    default_tau = 0.6

    def confidence(self, scores) -> float:
        """The smaller of the two means; ``> tau`` exactly when ``rule_verdict`` accepts."""
        arr = _as_array(scores)
        return float(arr.mean(axis=0).min()) if len(arr) else 0.0

    def decide(self, scores, tau: float | None = None) -> str:
        return rule_verdict(scores, self.default_tau if tau is None else tau)

    def assess(self, scores, tau: float | None = None) -> tuple[float, str]:
        """``(confidence, decision)`` in one pass."""
        return self.confidence(scores), self.decide(scores, tau)


@dataclass(eq=False)
class DeepSetsModel:
    """phi: 2 -> H -> H (ReLU), sum pooling, rho: H -> H (ReLU) -> 1 (logistic).

    Output is the probability that the evidence comes from a benign record.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    train_meta: dict = field(default_factory=dict)

    kind = "learned"
    default_tau = 0.5
    NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")

    @classmethod
    def init(cls, hidden: int = 256, seed: int = 42) -> "DeepSetsModel":
        rng = np.random.default_rng(seed)
        u = _nn.init_uniform
        return cls(u(rng, 2, (2, hidden)), np.zeros(hidden),
                   u(rng, hidden, (hidden, hidden)), np.zeros(hidden),
                   u(rng, hidden, (hidden, hidden)), np.zeros(hidden),
                   u(rng, hidden, (hidden,)), np.zeros(1))

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def params(self) -> dict:
        return {k: getattr(self, k) for k in self.NAMES}

    def _forward(self, X: np.ndarray, mask: np.ndarray):
        z1 = X @ self.w1 + self.b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ self.w2 + self.b2
        h2 = np.maximum(z2, 0.0) * mask[..., None]
        pooled = h2.sum(axis=1)
        z3 = pooled @ self.w3 + self.b3
        h3 = np.maximum(z3, 0.0)
        logit = h3 @ self.w4 + self.b4[0]
        return logit, (X, mask, h1, z2, pooled, h3)

    def confidence(self, scores) -> float:
        arr = _as_array(scores)
        if len(arr) == 0:
            return 0.0
        arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]  # canonical order: exact invariance
        logit, _ = self._forward(arr[None], np.ones((1, len(arr))))
        return float(_nn.sigmoid(logit)[0])

    def decide(self, scores, tau: float | None = None) -> str:
        if len(scores) == 0:
            return REJECT
        tau = self.default_tau if tau is None else tau
        return ACCEPT if self.confidence(scores) > tau else REJECT

    def assess(self, scores, tau: float | None = None) -> tuple[float, str]:
        conf = self.confidence(scores)
        if len(scores) == 0:
            return conf, REJECT
        tau = self.default_tau if tau is None else tau
        return conf, ACCEPT if conf > tau else REJECT

    def loss_and_grads(self, X, mask, y):
        logit, (X, mask, h1, z2, pooled, h3) = self._forward(X, mask)
        losses, dlogit = _nn.bce_from_logits(logit, y)
        n = len(X)
        dlogit = dlogit / n
        g = {"w4": h3.T @ dlogit, "b4": np.atleast_1d(dlogit.sum())}
        dz3 = np.outer(dlogit, self.w4) * (h3 > 0)
        g["w3"] = pooled.T @ dz3
        g["b3"] = dz3.sum(axis=0)
        dpooled = dz3 @ self.w3.T
        dz2 = dpooled[:, None, :] * ((z2 > 0) * mask[..., None])
        g["w2"] = np.einsum("bnh,bnk->hk", h1, dz2)
        g["b2"] = dz2.sum(axis=(0, 1))
        dz1 = (dz2 @ self.w2.T) * (h1 > 0)
        g["w1"] = np.einsum("bni,bnk->ik", X, dz1)
        g["b1"] = dz1.sum(axis=(0, 1))
        return float(losses.mean()), g

    def to_json(self) -> dict:
        return {
            "kind": "deepsets",
            "d": 2,
            "H": self.hidden,
            "layer1": _nn.f32_list(self.w1), "bias1": _nn.f32_list(self.b1),
            "layer2": _nn.f32_list(self.w2), "bias2": _nn.f32_list(self.b2),
            "layer3": _nn.f32_list(self.w3), "bias3": _nn.f32_list(self.b3),
            "layer4": _nn.f32_list(self.w4), "bias4": _nn.f32_list(self.b4),
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DeepSetsModel":
        if obj.get("kind") != "deepsets":
            raise InvalidInput(f"not a deepsets envelope: kind={obj.get('kind')!r}")
        w = _nn.as_weights
        return cls(w(obj["layer1"]), w(obj["bias1"]), w(obj["layer2"]), w(obj["bias2"]),
                   w(obj["layer3"]), w(obj["bias3"]), w(obj["layer4"]),
                   np.atleast_1d(w(obj["bias4"])), obj.get("train_meta", {}))

    def save(self, path):
        _nn.save_envelope(path, self.to_json())

    @classmethod
    def load(cls, path) -> "DeepSetsModel":
        return cls.from_json(_nn.load_envelope(path))


def deepsets_forward(model: DeepSetsModel, scores) -> float:
    return model.confidence(scores)


def pad_sets(sets: Sequence) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in sets)
    X = np.zeros((len(sets), width, 2))
    mask = np.zeros((len(sets), width))
    for i, s in enumerate(sets):
        arr = _as_array(s)
        X[i, :len(arr)] = arr
        mask[i, :len(arr)] = 1.0
    return X, mask


def train_deepsets(score_sets: Sequence, labels, config: TrainConfig = DEEPSETS_DEFAULTS,
                   hidden: int = 256) -> DeepSetsModel:
    """Adam on BCE; label 1 = benign evidence, 0 = inflated."""
    y = np.asarray(labels, dtype=np.float64)
    if len(score_sets) == 0:
        raise InvalidInput("empty training set")
    if len(np.unique(y)) < 2:
        raise InvalidInput("training set needs both labels")
    if any(len(s) == 0 for s in score_sets):
        raise InvalidInput("score sets must be non-empty")
    model = DeepSetsModel.init(hidden, seed=config.seed)
    X, mask = pad_sets(score_sets)
    rng = np.random.default_rng(config.seed)
    opt = _nn.Adam(model.params(), config.learning_rate)
    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for lo in range(0, len(X), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            width = int(mask[idx].sum(axis=1).max())
            loss, grads = model.loss_and_grads(X[idx, :width], mask[idx, :width], y[idx])
            opt.step(grads)
            total += loss * len(idx)
        epoch_losses.append(total / len(X))
        log.info("deepsets epoch %d loss %.5f", epoch + 1, epoch_losses[-1])
    model.train_meta = {"config": config.to_json(), "epoch_losses": epoch_losses, "n": len(X)}
    return model


def make_verifier(kind: str, model: DeepSetsModel | None = None):
    if kind == "rule":
        return RuleVerifier()
    if kind == "learned":
        if model is None:
            raise InvalidInput("learned verifier needs a trained DeepSets model")
        return model
    raise InvalidInput(f"unknown verifier kind {kind!r}")
