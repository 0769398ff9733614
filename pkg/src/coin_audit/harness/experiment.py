"""Artifact training and the end-to-end inflate -> commit -> audit -> verdict runs."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .._nn import DEEPSETS_DEFAULTS, TrainConfig
from ..core import AuditParams, InvalidInput, ServiceRecord, Vocabulary
from ..embedding import SyntheticProvider
from ..inflation import (InflationConfig, InflationContext, RetrievalIndex, inflate,
                         mix_balanced)
from ..matching import BLOCK_TO_ANSWER, TOKEN_TO_BLOCK, MatchingHead, train_matching_head
from ..protocol import AuditorView, ProviderSession, run_audit
from ..verifier import DeepSetsModel, RuleVerifier, train_deepsets
from .corpus import CorpusConfig, SyntheticCorpus
from .datasets import block_answer_pairs, score_sets, token_block_pairs
from .metrics import compute_aer, compute_dsr

log = logging.getLogger(__name__)

TRAIN_OFFSET = 1_000_000
DESK_HEAD_CONFIG = TrainConfig(learning_rate=1e-3)


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArtifactConfig:
    corpus: CorpusConfig = CorpusConfig()
    embed_seed: int = 0
    train_records: int = 400
    head_pairs: int = 40000
    head_config: TrainConfig = DESK_HEAD_CONFIG
    deepsets_records: int = 600
    deepsets_config: TrainConfig = DEEPSETS_DEFAULTS
    deepsets_kinds: tuple = ("naive", "ada1", "ada3", "ada4")
    deepsets_irs: tuple = (0.3, 0.5, 1.0, 2.0, 3.0)
    block_size: int = 256
    seed: int = 42


@dataclass
class Artifacts:
    corpus: SyntheticCorpus
    provider: SyntheticProvider
    tb: MatchingHead
    ba: MatchingHead
    deepsets: DeepSetsModel | None
    config: ArtifactConfig

    @property
    def heads(self):
        return self.tb, self.ba

    def verifier(self, kind: str):
        if kind == "rule":
            return RuleVerifier()
        if self.deepsets is None:
            raise ConfigurationError("learned verifier requested but no DeepSets model loaded")
        return self.deepsets

    def context(self, donors: Sequence[ServiceRecord]) -> InflationContext:
        return InflationContext(len(self.corpus.vocab), self.provider, donors,
                                RetrievalIndex.from_prompts(donors, self.provider))

    def save(self, directory):
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.tb.save(out / "mh_tb.json")
        self.ba.save(out / "mh_ba.json")
        if self.deepsets is not None:
            self.deepsets.save(out / "deepsets.json")
        meta = {"corpus": asdict(self.config.corpus), "embed_seed": self.config.embed_seed,
                "dimension": self.provider.dimension}
        (out / "artifacts.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory) -> "Artifacts":
        d = Path(directory)
        if not (d / "artifacts.json").exists():
            raise ConfigurationError(f"no artifacts in {d}")
        meta = json.loads((d / "artifacts.json").read_text())
        c = meta["corpus"]
        corpus_cfg = CorpusConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in c.items()})
        ds = DeepSetsModel.load(d / "deepsets.json") if (d / "deepsets.json").exists() else None
        cfg = ArtifactConfig(corpus=corpus_cfg, embed_seed=meta["embed_seed"])
        return cls(SyntheticCorpus(corpus_cfg), SyntheticProvider(meta["embed_seed"], meta["dimension"]),
                   MatchingHead.load(d / "mh_tb.json"), MatchingHead.load(d / "mh_ba.json"), ds, cfg)


def train_heads(corpus: SyntheticCorpus, provider, cfg: ArtifactConfig):
    records = corpus.records(cfg.train_records, offset=TRAIN_OFFSET)
    ctx = InflationContext(len(corpus.vocab), provider, records,
                           RetrievalIndex.from_prompts(records, provider))
    X, y = token_block_pairs(records, ctx, provider, cfg.head_pairs, seed=cfg.seed)
    tb = train_matching_head(X, y, cfg.head_config, kind=TOKEN_TO_BLOCK)
    X, y = block_answer_pairs(records, ctx, provider, cfg.head_pairs, seed=cfg.seed)
    ba = train_matching_head(X, y, cfg.head_config, kind=BLOCK_TO_ANSWER)
    return tb, ba


def train_verifier(corpus: SyntheticCorpus, provider, heads, cfg: ArtifactConfig) -> DeepSetsModel:
    """DeepSets on score sets from records disjoint from the head training records."""
    offset = TRAIN_OFFSET + cfg.train_records
    records = corpus.records(cfg.deepsets_records, offset=offset)
    ctx = InflationContext(len(corpus.vocab), provider, records,
                           RetrievalIndex.from_prompts(records, provider))
    rng = np.random.default_rng([cfg.seed, 21])
    inflated = []
    for i, rec in enumerate(records):
        kind = cfg.deepsets_kinds[i % len(cfg.deepsets_kinds)]
        ir = float(rng.choice(cfg.deepsets_irs))
        inflated.append(inflate(rec, ir, ctx, InflationConfig(kind=kind, seed=cfg.seed)).record)
    items = [(rec, 1 - label) for rec, label in mix_balanced(records, inflated, rng)]
    params = AuditParams(block_size=cfg.block_size)
    sets, labels = score_sets(items, heads, provider, params, seed=cfg.seed)
    return train_deepsets(sets, labels, cfg.deepsets_config)


def train_artifacts(cfg: ArtifactConfig = ArtifactConfig()) -> Artifacts:
    corpus = SyntheticCorpus(cfg.corpus)
    provider = SyntheticProvider(cfg.embed_seed)
    t0 = time.perf_counter()
    tb, ba = train_heads(corpus, provider, cfg)
    log.info("matching heads trained in %.1fs", time.perf_counter() - t0)
    ds = train_verifier(corpus, provider, (tb, ba), cfg)
    log.info("artifacts trained in %.1fs", time.perf_counter() - t0)
    return Artifacts(corpus, provider, tb, ba, ds, cfg)


@dataclass(frozen=True)
class Grid:
    kinds: tuple = ("naive",)
    irs: tuple = (0.1, 0.3, 0.5, 1.0, 2.0, 3.0)
    block_size: int = 256
    verifiers: tuple = ("rule", "learned")
    taus: tuple | None = None  # None: each verifier's default
    initial_ratio: float = 0.3
    include_benign: bool = True
    insertion_mode: str = "block_interleave"
    seed: int = 0


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    runtime_s: float = 0.0

    def _select(self, **filt):
        return [r for r in self.rows if all(r[k] == v for k, v in filt.items())]

    def dsr(self, kind: str, ir: float | None, verifier: str, tau: float | None = None) -> float | None:
        filt = {"kind": kind, "verifier": verifier}
        if ir is not None:
            filt["ir"] = ir
        if tau is not None:
            filt["tau"] = tau
        rows = self._select(**filt)
        return compute_dsr([r["decision"] for r in rows], [r["label"] for r in rows])["dsr_malicious"]

    def benign_dsr(self, verifier: str, tau: float | None = None) -> float | None:
        filt = {"kind": "benign", "verifier": verifier}
        if tau is not None:
            filt["tau"] = tau
        rows = self._select(**filt)
        return compute_dsr([r["decision"] for r in rows], [r["label"] for r in rows])["dsr_benign"]

    def aer(self, verifier: str, tau: float | None = None) -> float | None:
        filt = {"kind": "benign", "verifier": verifier}
        if tau is not None:
            filt["tau"] = tau
        return compute_aer([(r["l"], r["alpha"]) for r in self._select(**filt)])

    def mean(self, key: str, **filt) -> float | None:
        rows = self._select(**filt)
        return float(np.mean([r[key] for r in rows])) if rows else None

    def summary(self) -> list[dict]:
        """One row per (kind, IR, beta, verifier, tau)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r["kind"], r["ir"], r["beta"], r["verifier"], r["tau"]), []).append(r)
        out = []
        for (kind, ir, beta, ver, tau), rows in sorted(groups.items(), key=lambda kv: str(kv[0])):
            m = compute_dsr([r["decision"] for r in rows], [r["label"] for r in rows])
            out.append({
                "kind": kind, "ir": ir, "beta": beta, "verifier": ver, "tau": tau,
                "n": len(rows),
                "dsr": m["dsr_benign"] if kind == "benign" else m["dsr_malicious"],
                "aer": compute_aer([(r["l"], r["alpha"]) for r in rows]) if kind == "benign" else None,
                "mean_l": float(np.mean([r["l"] for r in rows])),
                "mean_alpha": float(np.mean([r["alpha"] for r in rows])),
            })
        return out

    def to_json(self) -> dict:
        return {"runtime_s": self.runtime_s, "summary": self.summary()}

    def write(self, json_path=None, csv_path=None):
        if json_path:
            Path(json_path).parent.mkdir(parents=True, exist_ok=True)
            Path(json_path).write_text(json.dumps(self.to_json(), indent=2))
        if csv_path:
            import csv
            Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
            rows = self.summary()
            with open(csv_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["kind"])
                w.writeheader()
                w.writerows(rows)


def _audit_configs(grid: Grid, artifacts: Artifacts):
    for ver in grid.verifiers:
        verifier = artifacts.verifier(ver)
        taus = grid.taus or (verifier.default_tau,)
        for tau in taus:
            yield ver, verifier, AuditParams(block_size=grid.block_size,
                                             initial_ratio=grid.initial_ratio,
                                             threshold=tau, verifier_kind=ver)


def audit_record(record: ServiceRecord, artifacts: Artifacts, grid: Grid, audit_seed,
                 transcripts=None) -> list[dict]:
    """Commit once, then audit under every (verifier, tau) with the same challenge seed."""
    session = ProviderSession(record, artifacts.provider, grid.block_size)
    view = AuditorView.from_record(record, session.commit())
    rows = []
    for ver, verifier, params in _audit_configs(grid, artifacts):
        v = run_audit(view, session, artifacts.heads, verifier, params, artifacts.provider,
                      seed=audit_seed, audit_id=f"{record.record_id}/{ver}/{params.threshold}",
                      wire=False, keep_transcript=transcripts is not None)
        if transcripts is not None:
            transcripts.write(json.dumps({"audit_id": v.audit_id, "messages": v.transcript}) + "\n")
        rows.append({
            "record": record.record_id, "label": record.label,
            "kind": record.meta.get("kind", "benign"), "ir": record.meta.get("ir", 0.0),
            "beta": grid.block_size, "verifier": ver, "tau": params.threshold,
            "decision": v.decision, "reason": v.failure_reason, "l": v.rounds,
            "alpha": v.alpha, "merkle_proofs": v.merkle_proofs,
            "semantic_judgments": v.semantic_judgments,
        })
    return rows


def run_experiment(records: Sequence[ServiceRecord], grid: Grid, artifacts: Artifacts | None,
                   donors: Sequence[ServiceRecord] | None = None,
                   transcript_path=None) -> ExperimentReport:
    """inflate -> commit -> audit -> verdict for every record and grid cell."""
    if artifacts is None:
        raise ConfigurationError("run_experiment needs trained artifacts (heads and verifier)")
    t0 = time.perf_counter()
    donors = list(records if donors is None else donors)
    needs_ctx = any(k in ("ada1", "ada3", "ada4") for k in grid.kinds)
    ctx = artifacts.context(donors) if needs_ctx else \
        InflationContext(len(artifacts.corpus.vocab), artifacts.provider, donors)
    report = ExperimentReport()
    fh = open(transcript_path, "w") if transcript_path else None
    try:
        for i, rec in enumerate(records):
            audit_seed = [grid.seed, i]
            if grid.include_benign:
                report.rows += audit_record(rec, artifacts, grid, audit_seed, fh)
            for kind in grid.kinds:
                cfg = InflationConfig(kind=kind, insertion_mode=grid.insertion_mode, seed=grid.seed)
                for ir in grid.irs:
                    item = inflate(rec, ir, ctx, cfg)
                    report.rows += audit_record(item.record, artifacts, grid, audit_seed, fh)
            if (i + 1) % 100 == 0:
                log.info("audited %d/%d records (%.0fs)", i + 1, len(records),
                         time.perf_counter() - t0)
    finally:
        if fh:
            fh.close()
    report.runtime_s = time.perf_counter() - t0
    return report
