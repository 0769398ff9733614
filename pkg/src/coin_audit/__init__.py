"""Audit hidden reasoning-token billing with Merkle commitments and matching heads."""
from .core import (AuditParams, Block, InvalidInput, ServiceRecord, Token, Tokenizer,
                   Vocabulary, detokenize, inflation_rate, load_corpus, partition_trace,
                   save_corpus, tokenize)
from .embedding import (EmbeddingProvider, ExternalProvider, ProviderUnavailable,
                        SyntheticProvider, average_embeddings, cosine_similarity)
from .inflation import (InflatedRecord, InflationConfig, InflationContext, RetrievalIndex,
                        inflate, inflate_ada1, inflate_ada2, inflate_ada3, inflate_ada4,
                        inflate_dataset, inflate_naive, misreport)
from .matching import (MatchingHead, build_features, focal_loss, score_block_to_answer,
                       score_token_to_block, train_matching_head)
from .merkle import (MerkleCommitment, MerklePath, MerkleTree, TokenFingerprint, build_tree,
                     make_fingerprint, prove, verify_proof)
from .protocol import (AUDIT_SUCCESSFUL, FLAGGED, AuditorView, AuditVerdict, ProviderSession,
                       audit_cost, provider_commit, provider_respond, run_audit)
from .verifier import (DeepSetsModel, MatchScorePair, RuleVerifier, deepsets_forward,
                       rule_verdict, train_deepsets)
from ._nn import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AUDIT_SUCCESSFUL", "FLAGGED", "AuditParams", "AuditVerdict", "AuditorView", "Block",
    "DeepSetsModel", "EmbeddingProvider", "ExternalProvider", "InflatedRecord",
    "InflationConfig", "InflationContext", "InvalidInput", "MatchScorePair", "MatchingHead",
    "MerkleCommitment", "MerklePath", "MerkleTree", "ProviderSession", "ProviderUnavailable",
    "RetrievalIndex", "RuleVerifier", "ServiceRecord", "SyntheticProvider", "Token",
    "TokenFingerprint", "Tokenizer", "TrainConfig", "Vocabulary", "audit_cost",
    "average_embeddings", "build_features", "build_tree", "cosine_similarity",
    "deepsets_forward", "detokenize", "focal_loss", "inflate", "inflate_ada1", "inflate_ada2",
    "inflate_ada3", "inflate_ada4", "inflate_dataset", "inflate_naive", "inflation_rate",
    "load_corpus", "make_fingerprint", "misreport", "partition_trace", "provider_commit",
    "provider_respond", "prove", "rule_verdict", "run_audit", "save_corpus",
    "score_block_to_answer", "score_token_to_block", "tokenize", "train_deepsets",
    "train_matching_head", "verify_proof",
]
