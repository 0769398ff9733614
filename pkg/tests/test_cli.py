import csv
import json

import pytest

from coin_audit.harness.cli import _apply_config, build_parser, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, tiny_artifacts):
    root = tmp_path_factory.mktemp("cli")
    tiny_artifacts.save(root / "art")
    return root


def lines(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def test_gen_corpus_inflate_commit(workdir, capsys):
    out = workdir / "data"
    assert main(["gen-corpus", "--n", "4", "--out", str(out)]) == 0
    corpus = out / "corpus.jsonl"
    rows = lines(corpus)
    assert len(rows) == 4 and {"prompt", "reasoning", "answer", "m", "n", "label"} <= set(rows[0])

    assert main(["inflate", "--corpus", str(corpus), "--kind", "naive", "--ratios", "0.5,1.0",
                 "--out", str(workdir / "infl")]) == 0
    inflated = lines(workdir / "infl" / "inflated_naive.jsonl")
    assert len(inflated) == 8
    assert all(r["kind"] == "naive" and "injected_positions" in r for r in inflated)

    assert main(["commit", "--corpus", str(corpus), "--out", str(workdir / "commit")]) == 0
    commits = lines(workdir / "commit" / "commitments.jsonl")
    assert len(commits) == 4 and len(commits[0]["root"]) == 64
    assert commits[0]["m"] == rows[0]["m"]


def test_audit_uses_saved_artifacts(workdir, capsys):
    corpus = workdir / "data" / "corpus.jsonl"
    if not corpus.exists():
        main(["gen-corpus", "--n", "4", "--out", str(workdir / "data")])
    out = workdir / "audit"
    assert main(["audit", "--corpus", str(corpus), "--artifacts", str(workdir / "art"),
                 "--verifier", "rule", "--out", str(out)]) == 0
    verdicts = lines(out / "verdicts.jsonl")
    assert len(verdicts) == 4
    assert all(v["decision"] in ("AuditSuccessful", "FlaggedForInflation") for v in verdicts)
    assert len(lines(out / "transcripts.jsonl")) == 4
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["n_benign"] == 4


def test_eval_with_config_file(workdir, capsys):
    conf = workdir / "eval.toml"
    conf.write_text('seed = 3\n[eval]\nn = 2\nirs = [1.0]\nverifiers = "rule"\n')
    out = workdir / "eval"
    assert main(["eval", "--config", str(conf), "--artifacts", str(workdir / "art"),
                 "--out", str(out)]) == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {(r["kind"], r["verifier"]) for r in rows} == {("benign", "rule"), ("naive", "rule")}
    assert all(r["n"] == "2" for r in rows)


def test_json_config_and_flag_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"seed": 9, "bench-merkle": {"repeats": 1, "n": "32,64"}}))
    args = _apply_config(build_parser(), ["bench-merkle", "--config", str(conf), "--repeats", "2"])
    assert (args.seed, args.repeats, args.n) == (9, 2, "32,64")
    args = _apply_config(build_parser(), ["--seed", "5", "--config", str(conf), "bench-merkle"])
    assert (args.seed, args.repeats) == (5, 1)
    args = _apply_config(build_parser(), ["bench-merkle", "--config", str(conf), "--seed", "6"])
    assert args.seed == 6


def test_bench_merkle_cli(tmp_path, capsys):
    assert main(["bench-merkle", "--n", "64,128,256", "--d", "8", "--repeats", "1",
                 "--out", str(tmp_path)]) == 0
    with open(tmp_path / "bench_merkle.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3
    assert "R^2" in capsys.readouterr().out


def test_train_commands(tmp_path):
    art = tmp_path / "art"
    assert main(["train-mh", "--pairs", "200", "--train-records", "10", "--epochs", "1",
                 "--out", str(art)]) == 0
    assert (art / "mh_tb.json").exists() and not (art / "deepsets.json").exists()
    assert main(["train-verifier", "--artifacts", str(art), "--records", "20"]) == 0
    envelope = json.loads((art / "deepsets.json").read_text())
    assert envelope["kind"] == "deepsets" and envelope["H"] == 256


def test_missing_input_exits_nonzero(tmp_path, capsys):
    assert main(["commit", "--corpus", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["no-such-command"])
