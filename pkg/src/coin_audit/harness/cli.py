"""Command-line entry point: ``coin-audit <subcommand> [options]``.

Options may also come from a TOML or JSON file given with ``--config``:
top-level keys apply to every subcommand, a table named after the
subcommand (dashes or underscores) applies to that one. Explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..core import (AuditParams, InvalidInput, Tokenizer, Vocabulary, load_corpus, save_corpus,
                    write_jsonl)
from ..inflation import KINDS, InflationConfig, inflate_dataset, inflated_to_json
from ..protocol import AuditorView, ProviderSession, run_audit

log = logging.getLogger("coin_audit")

VOCAB_FILE = "vocab.json"
GLOBAL_FLAGS = ("seed", "config", "out", "verbose")


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(p.read_text())


def _items(value) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    return [x for x in str(value).split(",") if x.strip()]


def _floats(value) -> tuple:
    return tuple(float(x) for x in _items(value))


def _ints(value) -> tuple:
    return tuple(int(x) for x in _items(value))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tokenizer_for(corpus_path, artifacts=None) -> Tokenizer | None:
    for d in (Path(corpus_path).parent, Path(artifacts) if artifacts else None):
        if d is not None and (d / VOCAB_FILE).exists():
            return Tokenizer(Vocabulary.from_json(json.loads((d / VOCAB_FILE).read_text())))
    return None


def _corpus_config(args):
    from .corpus import MATCHED_LENGTHS, CorpusConfig
    lengths = MATCHED_LENGTHS if getattr(args, "matched", False) else CorpusConfig.length_range
    return CorpusConfig(n_records=args.n, length_range=lengths, seed=args.corpus_seed)


def _save_vocab(directory: Path, tokenizer: Tokenizer):
    (directory / VOCAB_FILE).write_text(json.dumps(tokenizer.vocab.to_json()))


# -- subcommands ---------------------------------------------------------------

def cmd_gen_corpus(args):
    from .corpus import SyntheticCorpus
    corpus = SyntheticCorpus(_corpus_config(args))
    out = _out(args)
    n = save_corpus(out / "corpus.jsonl", corpus.records(), corpus.tokenizer)
    _save_vocab(out, corpus.tokenizer)
    print(f"wrote {n} records to {out / 'corpus.jsonl'}")


def cmd_inflate(args):
    from ..embedding import SyntheticProvider
    from ..inflation import InflationContext, RetrievalIndex
    records, tok = load_corpus(args.corpus, _tokenizer_for(args.corpus))
    provider = SyntheticProvider(args.embed_seed)
    index = RetrievalIndex.from_prompts(records, provider) if args.kind in ("ada4",) else None
    ctx = InflationContext(len(tok.vocab), provider, records, index)
    cfg = InflationConfig(kind=args.kind, ratios=_floats(args.ratios),
                          insertion_mode=args.insertion_mode, multiplier=args.multiplier,
                          seed=args.seed)
    items = inflate_dataset(records, cfg, ctx)
    out = _out(args)
    n = write_jsonl(out / f"inflated_{args.kind}.jsonl", (inflated_to_json(i, tok) for i in items))
    _save_vocab(out, tok)
    print(f"wrote {n} inflated records to {out / f'inflated_{args.kind}.jsonl'}")


def _artifact_config(args):
    from .._nn import TrainConfig
    from .corpus import CorpusConfig
    from .experiment import ArtifactConfig
    head = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
    return ArtifactConfig(corpus=CorpusConfig(seed=args.corpus_seed), embed_seed=args.embed_seed,
                          train_records=args.train_records, head_pairs=args.pairs,
                          head_config=head, seed=args.seed)


def cmd_train_mh(args):
    from ..embedding import SyntheticProvider
    from .corpus import SyntheticCorpus
    from .experiment import Artifacts, train_heads
    cfg = _artifact_config(args)
    corpus = SyntheticCorpus(cfg.corpus)
    provider = SyntheticProvider(cfg.embed_seed)
    tb, ba = train_heads(corpus, provider, cfg)
    out = _out(args)
    Artifacts(corpus, provider, tb, ba, None, cfg).save(out)
    _save_vocab(out, corpus.tokenizer)
    print(f"matching heads saved to {out}")


def cmd_train_verifier(args):
    from .experiment import Artifacts, train_verifier
    art = Artifacts.load(args.artifacts)
    cfg = replace(art.config, deepsets_records=args.records, seed=args.seed)
    art.deepsets = train_verifier(art.corpus, art.provider, art.heads, cfg)
    out = Path(args.artifacts) if args.out == "out" else Path(args.out)
    art.save(out)
    print(f"DeepSets verifier saved to {out}")


def cmd_commit(args):
    from ..embedding import SyntheticProvider
    records, _ = load_corpus(args.corpus, _tokenizer_for(args.corpus))
    provider = SyntheticProvider(args.embed_seed)
    rows = []
    for rec in records:
        session = ProviderSession(rec, provider, args.block_size)
        rows.append({"id": rec.record_id, **session.commitment.to_json()})
    out = _out(args)
    write_jsonl(out / "commitments.jsonl", rows)
    print(f"wrote {len(rows)} commitments to {out / 'commitments.jsonl'}")


def cmd_audit(args):
    from .experiment import Artifacts
    from .metrics import compute_aer, compute_dsr
    art = Artifacts.load(args.artifacts)
    records, _ = load_corpus(args.corpus, _tokenizer_for(args.corpus, args.artifacts))
    verifier = art.verifier(args.verifier)
    params = AuditParams(block_size=args.block_size, initial_ratio=args.gamma,
                         threshold=args.tau, verifier_kind=args.verifier,
                         cumulative=args.cumulative)
    out = _out(args)
    verdicts = []
    with open(out / "transcripts.jsonl", "w") as tf:
        for i, rec in enumerate(records):
            session = ProviderSession(rec, art.provider, args.block_size)
            view = AuditorView.from_record(rec, session.commit())
            v = run_audit(view, session, art.heads, verifier, params, art.provider,
                          seed=[args.seed, i], audit_id=rec.record_id or str(i))
            tf.write(json.dumps({"audit_id": v.audit_id, "messages": v.transcript}) + "\n")
            verdicts.append((rec, v))
    write_jsonl(out / "verdicts.jsonl", ({"id": r.record_id, "label": r.label, **v.to_json()}
                                         for r, v in verdicts))
    m = compute_dsr([v.decision for _, v in verdicts], [r.label for r, _ in verdicts])
    m["aer"] = compute_aer([v for r, v in verdicts if r.is_benign])
    print(json.dumps(m))


def cmd_eval(args):
    from .corpus import SyntheticCorpus
    from .experiment import Artifacts, Grid, run_experiment, train_artifacts
    if args.artifacts:
        art = Artifacts.load(args.artifacts)
    else:
        art = train_artifacts(_artifact_config(args))
    corpus = art.corpus if not args.matched else SyntheticCorpus(_corpus_config(args))
    if args.corpus:
        records, _ = load_corpus(args.corpus, _tokenizer_for(args.corpus, args.artifacts))
    else:
        records = corpus.records(args.n)
    grid = Grid(kinds=tuple(_items(args.kinds)), irs=_floats(args.irs),
                block_size=args.block_size, verifiers=tuple(_items(args.verifiers)),
                taus=_floats(args.taus) or None, initial_ratio=args.gamma, seed=args.seed)
    out = _out(args)
    report = run_experiment(records, grid, art,
                            transcript_path=out / "transcripts.jsonl" if args.transcripts else None)
    report.write(out / "report.json", out / "report.csv")
    for row in report.summary():
        print(json.dumps(row))


def cmd_bench_merkle(args):
    from .bench import bench_merkle, linear_fit_r2, write_csv
    rows = bench_merkle(_ints(args.n), _ints(args.d), args.repeats, args.backend, seed=args.seed)
    out = _out(args)
    write_csv(rows, out / "bench_merkle.csv")
    for row in rows:
        print(f"n={row['n']:>7} d={row['d']:>5} median={row['median_s']:.4f}s "
              f"[{row['min_s']:.4f}, {row['max_s']:.4f}]")
    for d in sorted({r["d"] for r in rows}):
        sub = [r for r in rows if r["d"] == d]
        if len(sub) > 2:
            r2 = linear_fit_r2([r["n"] for r in sub], [r["median_s"] for r in sub])
            print(f"d={d}: linear fit R^2 = {r2:.4f}")


# -- parser --------------------------------------------------------------------

def _add_train_args(p):
    p.add_argument("--lr", type=float, default=1e-3, help="matching-head learning rate")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--pairs", type=int, default=40000, help="training pairs per head")
    p.add_argument("--train-records", type=int, default=400)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--embed-seed", type=int, default=0)


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # subcommand copies only set a value when the flag is given there
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(42))
    p.add_argument("--config", default=d(None), help="TOML or JSON file of option defaults")
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(defaults=False)
    parser = argparse.ArgumentParser(prog="coin-audit", parents=[_global_flags(defaults=True)],
                                     description="Audit hidden reasoning-token billing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--matched", action="store_true", help="use the longer matched lengths")
    p.add_argument("--corpus-seed", type=int, default=0, help="vocabulary and record seed")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("inflate", parents=[common], help="inflate a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", choices=KINDS, default="naive")
    p.add_argument("--ratios", default="0.1,0.3,0.5,1.0,2.0,3.0")
    p.add_argument("--insertion-mode", choices=("append", "block_interleave"),
                   default="block_interleave")
    p.add_argument("--multiplier", type=float, default=2.0)
    p.add_argument("--embed-seed", type=int, default=0)
    p.set_defaults(func=cmd_inflate)

    p = sub.add_parser("train-mh", parents=[common], help="train both matching heads")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_mh)

    p = sub.add_parser("train-verifier", parents=[common], help="train the DeepSets verifier")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--records", type=int, default=600)
    p.set_defaults(func=cmd_train_verifier)

    p = sub.add_parser("commit", parents=[common], help="Merkle commitments for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--block-size", type=int, default=256)
    p.add_argument("--embed-seed", type=int, default=0)
    p.set_defaults(func=cmd_commit)

    p = sub.add_parser("audit", parents=[common], help="audit every record of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--verifier", choices=("rule", "learned"), default="learned")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--block-size", type=int, default=256)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--cumulative", action="store_true")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("eval", parents=[common], help="end-to-end experiment grid")
    p.add_argument("--artifacts", help="trained artifacts; trained from scratch if omitted")
    p.add_argument("--corpus", help="JSON-lines corpus; synthetic if omitted")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--matched", action="store_true")
    p.add_argument("--kinds", default="naive")
    p.add_argument("--irs", default="0.1,0.3,0.5,1.0,2.0,3.0")
    p.add_argument("--block-size", type=int, default=256)
    p.add_argument("--verifiers", default="rule,learned")
    p.add_argument("--taus", default="")
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--transcripts", action="store_true", help="also write transcripts.jsonl")
    _add_train_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-merkle", parents=[common], help="Merkle construction timing")
    p.add_argument("--n", default="1000,2000,4000,8000")
    p.add_argument("--d", default="384")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--backend", choices=("auto", "python", "cython"), default="auto")
    p.set_defaults(func=cmd_bench_merkle)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    conf = _load_config(args.config)
    if not conf:
        return args
    section = conf.get(args.command) or conf.get(args.command.replace("-", "_")) or {}
    values = {k: v for k, v in conf.items() if not isinstance(v, dict)}
    values.update(section)
    values = {k.replace("-", "_"): v for k, v in values.items()}
    # global flags live on the main parser; the subcommand copies stay suppressed
    parser.set_defaults(**{k: v for k, v in values.items() if k in GLOBAL_FLAGS})
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k: v for k, v in values.items() if k not in GLOBAL_FLAGS})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InvalidInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
