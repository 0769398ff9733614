"""Provider/auditor audit protocol over JSON-lines messages.

The provider commits to a Merkle root over the fingerprints of every billed
reasoning token, then answers block challenges with fingerprints and paths.
The auditor runs the multi-round loop: an initial batch of ceil(gamma*alpha)
random blocks, then one fresh block per round until the verifier accepts or
the blocks run out. Any failed proof or refusal flags the provider.
"""
from __future__ import annotations

import base64
import json
import logging
import uuid
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import AuditParams, InvalidInput, ServiceRecord, block_count
from .embedding import EmbeddingProvider
from .matching import MatchingHead, build_features_batch
from .merkle import (MerkleCommitment, MerklePath, TokenFingerprint,
                     build_tree_from_embeddings, prove_many, verify_batch)
from .verifier import ACCEPT, MatchScorePair

log = logging.getLogger(__name__)

AUDIT_SUCCESSFUL = "AuditSuccessful"
FLAGGED = "FlaggedForInflation"
MERKLE_MISMATCH = "merkle_mismatch"
SEMANTIC_EXHAUSTED = "semantic_reject_exhausted"
REFUSAL = "refusal"


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


# -- wire messages ----------------------------------------------------------

@dataclass(frozen=True)
class Commit:
    root: bytes
    m: int
    provider_id: str

    type = "commit"

    def to_json(self) -> dict:
        return {"type": self.type, "root": self.root.hex(), "m": self.m,
                "provider_id": self.provider_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Commit":
        return cls(bytes.fromhex(obj["root"]), int(obj["m"]), obj["provider_id"])

    @property
    def commitment(self) -> MerkleCommitment:
        return MerkleCommitment(self.root, self.m, self.provider_id)


@dataclass(frozen=True)
class Challenge:
    audit_id: str
    block_index: int
    token_indices: tuple
    round: int = 1

    type = "challenge"

    def to_json(self) -> dict:
        return {"type": self.type, "audit_id": self.audit_id, "round": self.round,
                "block_index": self.block_index,
                "token_indices": [int(i) for i in self.token_indices]}

    @classmethod
    def from_json(cls, obj: dict) -> "Challenge":
        return cls(obj["audit_id"], int(obj["block_index"]),
                   tuple(int(i) for i in obj["token_indices"]), int(obj.get("round", 1)))


@dataclass(frozen=True)
class ChallengeResponse:
    audit_id: str
    block_index: int
    block_embedding: bytes = b""
    fingerprints: tuple = ()  # serialized TokenFingerprint bytes
    paths: tuple = ()  # MerklePath per fingerprint
    refusal: str | None = None

    type = "response"

    def to_json(self) -> dict:
        out = {"type": self.type, "audit_id": self.audit_id, "block_index": self.block_index}
        if self.refusal is not None:
            out["refusal"] = self.refusal
            return out
        out["block_embedding"] = _b64(self.block_embedding)
        out["fingerprints"] = [_b64(fp) for fp in self.fingerprints]
        out["paths"] = [p.to_json() for p in self.paths]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ChallengeResponse":
        if "refusal" in obj:
            return cls(obj["audit_id"], int(obj["block_index"]), refusal=str(obj["refusal"]))
        return cls(obj["audit_id"], int(obj["block_index"]),
                   _unb64(obj["block_embedding"]),
                   tuple(_unb64(fp) for fp in obj["fingerprints"]),
                   tuple(MerklePath.from_json(p) for p in obj["paths"]))


@dataclass
class AuditVerdict:
    audit_id: str
    decision: str
    rounds: int  # l: blocks audited
    alpha: int
    k: int
    merkle_proofs: int
    semantic_judgments: int
    proofs_checked: int
    verifier_rounds: int
    failure_reason: str | None = None
    round_confidences: list = field(default_factory=list)
    transcript: list = field(default_factory=list, repr=False)

    @property
    def flagged(self) -> bool:
        return self.decision == FLAGGED

    @property
    def exposed_block_fraction(self) -> float:
        return self.rounds / self.alpha if self.alpha else 0.0

    def message(self) -> dict:
        return {"type": "verdict", "audit_id": self.audit_id, "decision": self.decision,
                "l": self.rounds,
                "cost": {"merkle_proofs": self.merkle_proofs,
                         "semantic_judgments": self.semantic_judgments},
                "reason": self.failure_reason}

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("transcript")
        return out


def audit_cost(rounds: int, k: int) -> dict:
    """Nominal cost of ``rounds`` audited blocks: k proofs and two judgments each."""
    if rounds < 1:
        raise InvalidInput("audit cost needs at least one round")
    return {"merkle_proofs": k * rounds, "semantic_judgments": 2 * rounds}


# -- provider side ------------------------------------------------------------

class ProviderSession:
    """Provider-side state for one billed record. Nothing private leaves via messages."""

    def __init__(self, record: ServiceRecord, embedder: EmbeddingProvider, block_size: int,
                 provider_id: str = "cola", backend=None):
        self.record = record
        self.embedder = embedder
        self.block_size = block_size
        self.provider_id = provider_id
        ids = record.reasoning
        self.alpha = block_count(len(ids), block_size)
        self.block_embs = embedder.embed_blocks(ids, block_size).astype("<f4")
        self.token_embs = embedder.embed_tokens_f32(ids)
        self.tree = build_tree_from_embeddings(self.block_embs, self.token_embs, block_size, backend)
        self.commitment = MerkleCommitment(self.tree.root, record.m, provider_id)

    def commit(self) -> Commit:
        return Commit(self.commitment.root, self.commitment.m, self.provider_id)

    def fingerprint(self, index: int) -> TokenFingerprint:
        return TokenFingerprint(self.block_embs[index // self.block_size], self.token_embs[index])

    def respond(self, challenge: Challenge) -> ChallengeResponse:
        supply = len(self.record.reasoning)
        idx = challenge.token_indices
        if not idx or any(i < 0 or i >= supply for i in idx):
            return ChallengeResponse(challenge.audit_id, challenge.block_index,
                                     refusal="index beyond token supply")
        owners = {i // self.block_size for i in idx}
        if owners != {challenge.block_index}:
            return ChallengeResponse(challenge.audit_id, challenge.block_index,
                                     refusal="indices outside the challenged block")
        block = self.block_embs[challenge.block_index].tobytes()
        fps = tuple(block + self.token_embs[i].tobytes() for i in idx)
        paths = tuple(prove_many(self.tree, idx))
        return ChallengeResponse(challenge.audit_id, challenge.block_index, block, fps, paths)

    def handle_line(self, line: str) -> str:
        """Wire entry point: one JSON challenge in, one JSON response out."""
        return json.dumps(self.respond(Challenge.from_json(json.loads(line))).to_json())


# -- auditor side ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AuditorView:
    """Everything the auditor may see: prompt, answer, reported counts, commitment."""

    prompt: np.ndarray
    answer: np.ndarray
    m: int
    n: int
    commitment: MerkleCommitment

    @classmethod
    def from_record(cls, record: ServiceRecord, commit: Commit) -> "AuditorView":
        return cls(record.prompt, record.answer, record.m, record.n, commit.commitment)


def _check_response(resp: ChallengeResponse, challenge: Challenge, root: bytes, m: int,
                    d: int) -> tuple[bool, np.ndarray | None, np.ndarray | None]:
    """Structural, consistency and Merkle checks. Returns (ok, block_emb, token_embs)."""
    if resp.refusal is not None or resp.block_index != challenge.block_index:
        return False, None, None
    n = len(challenge.token_indices)
    if len(resp.fingerprints) != n or len(resp.paths) != n or len(resp.block_embedding) != 4 * d:
        return False, None, None
    for fp in resp.fingerprints:
        if len(fp) != 8 * d or fp[:4 * d] != resp.block_embedding:
            return False, None, None
    if not verify_batch(root, resp.fingerprints, resp.paths,
                        challenge.token_indices, leaf_count=m).all():
        return False, None, None
    tokens = np.frombuffer(b"".join(fp[4 * d:] for fp in resp.fingerprints),
                           dtype="<f4").reshape(n, d).astype(np.float64)
    block = np.frombuffer(resp.block_embedding, dtype="<f4").astype(np.float64)
    if not (np.all(np.isfinite(block)) and np.all(np.isfinite(tokens))):
        return False, None, None
    return True, block, tokens


def answer_embedding(embedder: EmbeddingProvider, answer) -> np.ndarray:
    if len(answer) == 0:
        return np.zeros(embedder.dimension)
    return np.asarray(embedder.embed_block(answer), dtype=np.float64)


def _score(heads, block: np.ndarray, tokens: np.ndarray, answer_emb: np.ndarray):
    tb, ba = heads
    avg = tokens.mean(axis=0)
    s_tb = tb.scores(build_features_batch(avg[None], block[None]))[0]
    s_ba = ba.scores(build_features_batch(block[None], answer_emb[None]))[0]
    return float(s_tb), float(s_ba)


Transport = Callable[[str], str]


def run_audit(view: AuditorView, provider, heads: Sequence[MatchingHead], verifier,
              params: AuditParams, embedder: EmbeddingProvider, seed: int = 0,
              audit_id: str | None = None, wire: bool = True,
              keep_transcript: bool = True) -> AuditVerdict:
    """Multi-round audit of one committed record.

    ``provider`` is either an object with ``handle_line`` or a plain callable
    taking and returning one JSON line; every exchange goes over that text
    channel and is logged in the transcript. With ``wire=False`` and a
    provider exposing ``respond``, message objects are passed in-process
    (same checks, no serialization); ``keep_transcript=False`` skips logging.
    """
    audit_id = audit_id or uuid.uuid4().hex[:12]
    send: Transport = getattr(provider, "handle_line", provider)
    direct = None if wire else getattr(provider, "respond", None)
    rng = np.random.default_rng(seed)
    beta, m, d = params.block_size, view.m, embedder.dimension
    root = view.commitment.root
    alpha = block_count(m, beta)
    transcript = []
    log_msg = transcript.append if keep_transcript else (lambda msg: None)
    log_msg({"type": "commit", **view.commitment.to_json()})
    answer_emb = answer_embedding(embedder, view.answer)

    unverified = list(range(alpha))
    first = params.initial_blocks(alpha)
    current = sorted(int(b) for b in rng.choice(alpha, first, replace=False)) if alpha else []
    unverified = [b for b in unverified if b not in set(current)]

    audited, proofs, rnd = 0, 0, 0
    evidence: list[MatchScorePair] = []
    confidences = []
    decision, reason = FLAGGED, None
    while current:
        rnd += 1
        round_scores, failed = [], False
        for b in current:
            lo, hi = b * beta, min((b + 1) * beta, m)
            k_b = params.sample_size(hi - lo)
            idx = tuple(sorted(int(i) for i in lo + rng.choice(hi - lo, k_b, replace=False)))
            challenge = Challenge(audit_id, b, idx, rnd)
            if keep_transcript:
                log_msg(challenge.to_json())
            try:
                if direct is not None:
                    resp = direct(challenge)
                else:
                    raw = send(json.dumps(challenge.to_json()))
                    resp = ChallengeResponse.from_json(json.loads(raw))
            except Exception as exc:  # transport failure counts as refusal
                log.warning("audit %s: provider transport failure: %s", audit_id, exc)
                resp = ChallengeResponse(audit_id, b, refusal=f"transport: {exc}")
            if keep_transcript:
                log_msg(resp.to_json())
            audited += 1
            proofs += len(idx)
            ok, block, tokens = _check_response(resp, challenge, root, m, d)
            if not ok:
                failed = True
                reason = REFUSAL if resp.refusal is not None else MERKLE_MISMATCH
                continue
            round_scores.append(MatchScorePair(*_score(heads, block, tokens, answer_emb), b))
        if failed:
            break
        evidence = evidence + round_scores if params.cumulative else round_scores
        conf, verdict = verifier.assess(evidence, params.threshold)
        confidences.append(conf)
        log_msg({"type": "round", "audit_id": audit_id, "round": rnd,
                 "scores": [[p.s_tb, p.s_ba, p.block_index] for p in round_scores],
                 "confidence": conf})
        if verdict == ACCEPT:
            decision = AUDIT_SUCCESSFUL
            break
        if not unverified:
            reason = SEMANTIC_EXHAUSTED
            break
        nxt = unverified.pop(int(rng.integers(len(unverified))))
        current = [nxt]
    if alpha == 0:
        reason = SEMANTIC_EXHAUSTED
    cost = audit_cost(audited, params.k) if audited else {"merkle_proofs": 0,
                                                          "semantic_judgments": 0}
    verdict = AuditVerdict(audit_id, decision, audited, alpha, params.k,
                           cost["merkle_proofs"], cost["semantic_judgments"], proofs, rnd,
                           None if decision == AUDIT_SUCCESSFUL else reason, confidences)
    log_msg(verdict.message())
    verdict.transcript = transcript
    return verdict


def replay_transcript(transcript: Sequence[dict], heads, verifier, params: AuditParams,
                      embedder: EmbeddingProvider, answer) -> str:
    """Re-derive the decision of a logged audit from its messages alone."""
    commit = MerkleCommitment.from_json(transcript[0])
    d = embedder.dimension
    answer_emb = answer_embedding(embedder, answer)
    by_round: dict[int, list] = {}
    pending = None
    for msg in transcript[1:]:
        if msg["type"] == "challenge":
            pending = Challenge.from_json(msg)
        elif msg["type"] == "response":
            by_round.setdefault(pending.round, []).append(
                (pending, ChallengeResponse.from_json(msg)))
    evidence = []
    for rnd in sorted(by_round):
        scores = []
        for challenge, resp in by_round[rnd]:
            ok, block, tokens = _check_response(resp, challenge, commit.root, commit.m, d)
            if not ok:
                return FLAGGED
            scores.append(MatchScorePair(*_score(heads, block, tokens, answer_emb),
                                         challenge.block_index))
        evidence = evidence + scores if params.cumulative else scores
        if verifier.decide(evidence, params.threshold) == ACCEPT:
            return AUDIT_SUCCESSFUL
    return FLAGGED


def provider_commit(session: ProviderSession) -> MerkleCommitment:
    return session.commitment


def provider_respond(session: ProviderSession, challenge: Challenge) -> ChallengeResponse:
    return session.respond(challenge)
