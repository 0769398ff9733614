import json
import math

import numpy as np
import pytest

from coin_audit.core import AuditParams, InvalidInput, ServiceRecord
from coin_audit.inflation import inflate_ada2, misreport
from coin_audit.protocol import (AUDIT_SUCCESSFUL, FLAGGED, MERKLE_MISMATCH, REFUSAL,
                                 SEMANTIC_EXHAUSTED, AuditorView, Challenge, ChallengeResponse,
                                 ProviderSession, audit_cost, provider_commit, provider_respond,
                                 replay_transcript, run_audit)
from coin_audit.verifier import RuleVerifier

ACCEPT_ALL = AuditParams(threshold=0.4)   # neutral heads score 0.5
REJECT_ALL = AuditParams(threshold=0.6)


def audit(record, provider, heads, params, seed=0, **kw):
    session = ProviderSession(record, provider, params.block_size)
    view = AuditorView.from_record(record, session.commit())
    return run_audit(view, session, heads, RuleVerifier(), params, provider, seed=seed, **kw)


def test_audit_cost_examples():
    assert audit_cost(3, 25) == {"merkle_proofs": 75, "semantic_judgments": 6}
    with pytest.raises(InvalidInput):
        audit_cost(0, 25)


def test_commit_covers_all_tokens(records, provider):
    rec = records[0]
    session = ProviderSession(rec, provider, 256)
    c = provider_commit(session)
    assert c.m == len(rec.reasoning)
    assert session.tree.leaf_count == len(rec.reasoning)
    doubled = misreport(rec, 2.0).record
    s2 = ProviderSession(doubled, provider, 256)
    assert s2.commitment.m == 2 * len(rec.reasoning)
    assert s2.tree.leaf_count == len(rec.reasoning)
    ada = inflate_ada2(rec, 1.0).record
    assert ProviderSession(ada, provider, 256).tree.leaf_count == 2 * len(rec.reasoning)


def test_honest_response_verifies(records, provider):
    from coin_audit.protocol import _check_response
    rec = records[0]
    session = ProviderSession(rec, provider, 256)
    ch = Challenge("a", 1, (256, 300, 378))
    resp = provider_respond(session, ch)
    ok, block, tokens = _check_response(resp, ch, session.commitment.root, rec.m, 384)
    assert ok and tokens.shape == (3, 384)
    assert resp.fingerprints[0][:1536] == resp.block_embedding
    # a response whose block half disagrees with its fingerprints is rejected
    forged = ChallengeResponse("a", 1, bytes(1536), resp.fingerprints, resp.paths)
    assert not _check_response(forged, ch, session.commitment.root, rec.m, 384)[0]


def test_provider_refuses_phantom_and_foreign_indices(records, provider):
    session = ProviderSession(records[0], provider, 256)
    n = len(records[0].reasoning)
    assert session.respond(Challenge("a", n // 256, (n + 3,))).refusal is not None
    assert session.respond(Challenge("a", 0, (0, 300))).refusal is not None
    assert session.respond(Challenge("a", 0, ())).refusal is not None


def test_first_round_accept(records, provider, neutral_heads):
    rec = records[3]
    alpha = math.ceil(len(rec.reasoning) / 256)
    v = audit(rec, provider, neutral_heads, ACCEPT_ALL)
    assert v.decision == AUDIT_SUCCESSFUL
    assert v.rounds == math.ceil(0.3 * alpha)
    assert v.verifier_rounds == 1
    assert v.merkle_proofs == 25 * v.rounds and v.semantic_judgments == 2 * v.rounds


def test_exhaustion(records, provider, neutral_heads):
    rec = records[3]
    v = audit(rec, provider, neutral_heads, REJECT_ALL)
    assert v.decision == FLAGGED and v.failure_reason == SEMANTIC_EXHAUSTED
    assert v.rounds == v.alpha
    assert v.exposed_block_fraction == 1.0


def test_alpha_ten_first_round_three(provider, neutral_heads):
    rec = ServiceRecord.benign([1], np.arange(1, 2561) % 97 + 1, [3, 4])
    v = audit(rec, provider, neutral_heads, ACCEPT_ALL)
    assert (v.alpha, v.rounds) == (10, 3)


def test_blocks_never_reused(records, provider, neutral_heads):
    v = audit(records[5], provider, neutral_heads, REJECT_ALL)
    blocks = [m["block_index"] for m in v.transcript if m["type"] == "challenge"]
    assert len(blocks) == len(set(blocks)) == v.alpha


def test_misreport_flagged(records, provider, neutral_heads):
    flagged = 0
    for i, rec in enumerate(records[:20]):
        v = audit(misreport(rec, 2.0).record, provider, neutral_heads, ACCEPT_ALL, seed=i)
        flagged += v.decision == FLAGGED
        assert v.failure_reason in (REFUSAL, MERKLE_MISMATCH, None)
    assert flagged == 20


def test_transport_failure_is_refusal(records, provider, neutral_heads):
    rec = records[0]
    session = ProviderSession(rec, provider, 256)
    view = AuditorView.from_record(rec, session.commit())

    def broken(line):
        raise ConnectionError("link down")

    v = run_audit(view, broken, neutral_heads, RuleVerifier(), ACCEPT_ALL, provider)
    assert v.decision == FLAGGED and v.failure_reason == REFUSAL


def test_tampering_provider_flagged(records, provider, neutral_heads):
    rec = records[0]
    session = ProviderSession(rec, provider, 256)
    view = AuditorView.from_record(rec, session.commit())

    def tamper(line):
        resp = json.loads(session.handle_line(line))
        resp["paths"][0][0]["hash"] = "00" * 32
        return json.dumps(resp)

    v = run_audit(view, tamper, neutral_heads, RuleVerifier(), ACCEPT_ALL, provider)
    assert v.decision == FLAGGED and v.failure_reason == MERKLE_MISMATCH
    assert v.rounds == 1


def test_wire_and_direct_transport_agree(records, provider, neutral_heads):
    rec = records[2]
    a = audit(rec, provider, neutral_heads, REJECT_ALL, seed=4)
    b = audit(rec, provider, neutral_heads, REJECT_ALL, seed=4, wire=False)
    assert a.to_json() == b.to_json() | {"audit_id": a.audit_id}


def test_information_barrier(records, provider, neutral_heads, small_corpus):
    rec = records[1]
    v = audit(rec, provider, neutral_heads, REJECT_ALL)
    allowed = {"commit", "challenge", "response", "round", "verdict"}
    assert {m["type"] for m in v.transcript} <= allowed
    blob = json.dumps(v.transcript)
    surfaces = set(small_corpus.tokenizer.decode(rec.reasoning).split()) - set(
        small_corpus.tokenizer.decode(rec.answer).split())
    words = [s for s in surfaces if len(s) > 3]
    assert words and not any(f'"{w}"' in blob for w in words)
    for m in v.transcript:
        assert "reasoning" not in m and "tokens" not in m


def test_replay_reproduces_verdicts(records, provider, neutral_heads):
    for params in (ACCEPT_ALL, REJECT_ALL):
        v = audit(records[4], provider, neutral_heads, params, seed=3)
        again = replay_transcript(v.transcript, neutral_heads, RuleVerifier(), params, provider,
                                  records[4].answer)
        assert again == v.decision


def test_cost_accounting_over_many_audits(records, provider, neutral_heads):
    for i, rec in enumerate(records):
        params = AuditParams(threshold=0.4 if i % 2 else 0.6)
        v = audit(rec, provider, neutral_heads, params, seed=i)
        assert math.ceil(0.3 * v.alpha) <= v.rounds <= v.alpha
        assert v.merkle_proofs == params.k * v.rounds
        assert v.semantic_judgments == 2 * v.rounds


def test_empty_reasoning(provider, neutral_heads):
    rec = ServiceRecord.benign([1], [], [2])
    v = audit(rec, provider, neutral_heads, ACCEPT_ALL)
    assert v.decision == FLAGGED and v.rounds == 0
