import math

import numpy as np
import pytest

from coin_audit._nn import TrainConfig
from coin_audit.core import InvalidInput
from coin_audit.matching import (BLOCK_TO_ANSWER, TOKEN_TO_BLOCK, MatchingHead, build_features,
                                 build_features_batch, feature_width, focal_loss,
                                 score_block_to_answer, score_token_to_block,
                                 train_matching_head)


def test_feature_layout():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    h = build_features(a, b)
    assert len(h) == feature_width(2) == 9
    assert list(h[:8]) == [1, 2, 3, 4, -2, -2, 3, 8]
    assert h[8] == pytest.approx(11 / (math.sqrt(5) * 5))


def test_identity_pair():
    v = np.random.default_rng(0).standard_normal(384)
    h = build_features(v, v)
    assert len(h) == 1537
    assert np.all(h[768:1152] == 0)
    assert h[-1] == 1.0


def test_feature_dimension_mismatch():
    with pytest.raises(InvalidInput):
        build_features(np.ones(3), np.ones(4))


def test_focal_loss_oracles():
    assert focal_loss(0.5, 1, 2.0, 0.25) == pytest.approx(0.25 * 0.25 * math.log(2))
    assert focal_loss(0.5, 1) == pytest.approx(0.0433, abs=1e-4)
    assert focal_loss(1.0, 1) == pytest.approx(0.0, abs=1e-12)
    for p, y in ((0.2, 1), (0.7, 0), (0.99, 0)):
        bce = -(y * math.log(p) + (1 - y) * math.log(1 - p))
        assert focal_loss(p, y, 0.0, 0.5) == pytest.approx(0.5 * bce)
    assert np.isfinite(focal_loss(0.0, 1))


def test_zero_weights_give_half():
    head = MatchingHead.init(TOKEN_TO_BLOCK, d=16, zero_output=True)
    X = np.random.default_rng(0).standard_normal((5, feature_width(16)))
    assert np.all(head.scores(X) == 0.5)
    assert score_block_to_answer(MatchingHead.init(BLOCK_TO_ANSWER, d=16, zero_output=True),
                                 np.ones(16), -np.ones(16)) == 0.5


def test_forward_shape_checks():
    head = MatchingHead.init(TOKEN_TO_BLOCK, d=8)
    with pytest.raises(InvalidInput):
        head.forward(np.zeros(10))
    with pytest.raises(InvalidInput):
        head.forward(np.zeros((2, feature_width(8))))
    with pytest.raises(InvalidInput):
        MatchingHead.init("other")


def test_forward_in_open_unit_interval():
    head = MatchingHead.init(TOKEN_TO_BLOCK, d=8, seed=3)
    X = 3 * np.random.default_rng(1).standard_normal((200, feature_width(8)))
    s = head.scores(X)
    assert np.all((s > 0) & (s < 1))
    assert np.array_equal(s, head.scores(X))


def test_single_sample_token_score_equals_pair_score():
    head = MatchingHead.init(TOKEN_TO_BLOCK, d=8, seed=1)
    rng = np.random.default_rng(2)
    t, b = rng.standard_normal(8), rng.standard_normal(8)
    assert score_token_to_block(head, [t], b) == head.forward(build_features(t, b))


def finite_difference_errors(head, X, y, cfg, probes, rng, eps=1e-6):
    _, grads = head.loss_and_grads(X, y, cfg)
    params = head.params()
    errs = []
    for _ in range(probes):
        name = ["w1", "b1", "w2", "b2"][rng.integers(4)]
        arr = params[name]
        idx = tuple(rng.integers(s) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + eps
        if name == "b2":
            head.b2 = float(arr[0])
        up, _ = head.loss_and_grads(X, y, cfg)
        arr[idx] = old - eps
        if name == "b2":
            head.b2 = float(arr[0])
        down, _ = head.loss_and_grads(X, y, cfg)
        arr[idx] = old
        if name == "b2":
            head.b2 = float(old)
        numeric = (up - down) / (2 * eps)
        analytic = grads[name][idx]
        errs.append(abs(numeric - analytic) / max(abs(numeric) + abs(analytic), 1e-8))
    return np.array(errs)


def test_gradients_small_check():
    rng = np.random.default_rng(0)
    head = MatchingHead.init(TOKEN_TO_BLOCK, d=4, hidden=6, seed=0)
    X = rng.standard_normal((12, feature_width(4)))
    y = (rng.random(12) < 0.5).astype(float)
    errs = finite_difference_errors(head, X, y, TrainConfig(), 30, rng)
    assert errs.max() <= 1e-4


def aligned_pairs(n, d, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    noise = rng.standard_normal((n, d))
    y = (np.arange(n) % 2).astype(float)
    B = np.where(y[:, None] == 0, A + 0.3 * noise, noise)
    return build_features_batch(A, B), y


def test_training_orientation_and_determinism():
    X, y = aligned_pairs(2000, 16, 0)
    cfg = TrainConfig(learning_rate=1e-3, epochs=3)
    head = train_matching_head(X, y, cfg)
    again = train_matching_head(X, y, cfg)
    assert np.array_equal(head.w1, again.w1) and head.b2 == again.b2
    Xt, yt = aligned_pairs(400, 16, 1)
    s = head.scores(Xt)
    assert s[yt == 0].mean() > s[yt == 1].mean()
    losses = head.train_meta["epoch_losses"]
    assert losses[-1] < losses[0]


def test_training_preconditions():
    with pytest.raises(InvalidInput):
        train_matching_head(np.zeros((0, 9)), np.zeros(0))
    with pytest.raises(InvalidInput):
        train_matching_head(np.zeros((4, 9)), np.zeros(4))


def test_cos_sweep_moves_score_consistently():
    X, y = aligned_pairs(3000, 16, 0)
    head = train_matching_head(X, y, TrainConfig(learning_rate=1e-3))
    base = aligned_pairs(2, 16, 5)[0][0].copy()
    sweep = np.repeat(base[None], 21, axis=0)
    sweep[:, -1] = np.linspace(-1, 1, 21)
    diffs = np.diff(head.scores(sweep))
    assert np.all(diffs >= 0) or np.all(diffs <= 0)


def test_json_roundtrip_and_frozen_scoring(tmp_path):
    X, y = aligned_pairs(600, 8, 0)
    head = train_matching_head(X, y, TrainConfig(learning_rate=1e-3, epochs=1))
    assert head.frozen
    head.save(tmp_path / "mh.json")
    back = MatchingHead.load(tmp_path / "mh.json")
    assert np.array_equal(back.w1, head.w1) and back.b2 == head.b2
    assert back.to_json()["H"] == 8 and back.kind == TOKEN_TO_BLOCK
    exact = MatchingHead(head.kind, head.w1.copy(), head.b1.copy(), head.w2.copy(), head.b2)
    assert not exact.frozen
    assert np.allclose(back.scores(X), exact.scores(X), atol=1e-5)
    with pytest.raises(ValueError):
        back.w1[0, 0] = 1.0
