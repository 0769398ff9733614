"""Numpy building blocks shared by the matching heads and the DeepSets verifier."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

EPS = 1e-7


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return -np.logaddexp(0.0, -z)


def relu(z):
    return np.maximum(z, 0.0)


def init_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def focal_loss_from_logits(z, y, gamma: float = 2.0, alpha: float = 0.25):
    """Per-example focal loss and d(loss)/dz for p = sigmoid(z), labels in {0, 1}."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = 2.0 * y - 1.0
    alpha_t = np.where(y == 1, alpha, 1.0 - alpha)
    log_pt = log_sigmoid(s * z)
    pt = np.exp(log_pt)
    q = sigmoid(-s * z)  # 1 - p_t
    q_gamma = q ** gamma
    loss = -alpha_t * q_gamma * log_pt
    grad = -alpha_t * s * (q_gamma * q - gamma * q_gamma * pt * log_pt)
    return loss, grad


def bce_from_logits(z, y):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.logaddexp(0.0, z) - y * z
    return loss, sigmoid(z) - y


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    batch_size: int = 128
    epochs: int = 3
    loss: str = "focal"
    seed: int = 42
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def to_json(self) -> dict:
        return asdict(self)


MATCHING_DEFAULTS = TrainConfig()
DEEPSETS_DEFAULTS = TrainConfig(learning_rate=1e-3, batch_size=128, epochs=5, loss="bce", seed=42)


def f32_list(arr) -> list:
    """Nested list of the array rounded to float32, written with the shortest decimals."""
    a = np.asarray(arr, dtype=np.float32)
    flat = [float(s) for s in a.ravel().astype(str)]
    if a.ndim == 0:
        return flat[0]
    return np.asarray(flat, dtype=object).reshape(a.shape).tolist()


def save_envelope(path, envelope: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(envelope, fh, separators=(",", ":"))


def load_envelope(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def as_weights(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)
