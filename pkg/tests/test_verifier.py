import numpy as np
import pytest
from hypothesis import given, strategies as st

from coin_audit._nn import TrainConfig
from coin_audit.core import InvalidInput
from coin_audit.verifier import (ACCEPT, REJECT, DeepSetsModel, MatchScorePair, RuleVerifier,
                                 deepsets_forward, make_verifier, rule_verdict, train_deepsets)


def test_rule_examples():
    assert rule_verdict([(0.9, 0.9)], 0.6) == ACCEPT
    assert rule_verdict([(0.9, 0.5)], 0.6) == REJECT
    assert rule_verdict([], 0.6) == REJECT
    assert rule_verdict([MatchScorePair(0.7, 0.8, 3), MatchScorePair(0.6, 0.6, 1)], 0.6) == ACCEPT


pairs = st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=1, max_size=8)


@given(pairs, st.integers(0, 7), st.floats(0, 0.5), st.sampled_from([0, 1]))
def test_rule_monotone(scores, i, bump, side):
    i %= len(scores)
    raised = list(scores)
    s = list(raised[i])
    s[side] = min(0.999, s[side] + bump)
    raised[i] = tuple(s)
    if rule_verdict(scores, 0.6) == ACCEPT:
        assert rule_verdict(raised, 0.6) == ACCEPT


@given(pairs, st.floats(0.05, 0.95))
def test_rule_confidence_consistent(scores, tau):
    v = RuleVerifier()
    conf, dec = v.assess(scores, tau)
    assert dec == v.decide(scores, tau)
    assert (conf > tau) == (dec == ACCEPT)


def test_deepsets_permutation_invariance():
    model = DeepSetsModel.init(seed=7)
    rng = np.random.default_rng(0)
    scores = [MatchScorePair(*rng.random(2), j) for j in range(10)]
    ref = deepsets_forward(model, scores)
    for _ in range(50):
        assert deepsets_forward(model, [scores[i] for i in rng.permutation(10)]) == ref
    assert 0 < ref < 1


def test_deepsets_sum_pooling_sees_duplicates():
    model = DeepSetsModel.init(seed=1)
    assert model.confidence([(0.8, 0.3)]) != model.confidence([(0.8, 0.3), (0.8, 0.3)])


def test_deepsets_empty_set_rejects():
    model = DeepSetsModel.init()
    assert model.decide([]) == REJECT
    assert model.assess([])[1] == REJECT


def test_defaults():
    assert RuleVerifier().default_tau == 0.6
    assert DeepSetsModel.default_tau == 0.5
    assert DeepSetsModel.init().hidden == 256


def _sets(n, rng):
    sets, labels = [], []
    for i in range(n):
        good = i % 2
        size = int(rng.integers(1, 6))
        centre = 0.8 if good else 0.3
        sets.append([tuple(np.clip(centre + 0.1 * rng.standard_normal(2), 0.01, 0.99))
                     for _ in range(size)])
        labels.append(good)
    return sets, labels


def test_training_learns_and_is_reproducible(tmp_path):
    rng = np.random.default_rng(0)
    sets, labels = _sets(600, rng)
    cfg = TrainConfig(learning_rate=1e-3, epochs=20, batch_size=32, loss="bce")
    model = train_deepsets(sets, labels, cfg, hidden=32)
    again = train_deepsets(sets, labels, cfg, hidden=32)
    assert all(np.array_equal(a, b) for a, b in zip(model.params().values(),
                                                    again.params().values()))
    losses = model.train_meta["epoch_losses"]
    assert losses[-1] < losses[0]
    test_sets, test_labels = _sets(200, np.random.default_rng(1))
    acc = np.mean([(model.decide(s) == ACCEPT) == bool(y) for s, y in zip(test_sets, test_labels)])
    assert acc >= 0.9
    model.save(tmp_path / "ds.json")
    back = DeepSetsModel.load(tmp_path / "ds.json")
    assert back.confidence(test_sets[0]) == pytest.approx(model.confidence(test_sets[0]), abs=1e-5)


def test_training_preconditions():
    with pytest.raises(InvalidInput):
        train_deepsets([], [])
    with pytest.raises(InvalidInput):
        train_deepsets([[(0.5, 0.5)]] * 2, [1, 1])
    with pytest.raises(InvalidInput):
        train_deepsets([[(0.5, 0.5)], []], [1, 0])


def test_make_verifier():
    assert isinstance(make_verifier("rule"), RuleVerifier)
    with pytest.raises(InvalidInput):
        make_verifier("learned")
    with pytest.raises(InvalidInput):
        make_verifier("oracle")
