import json

import pytest

from treegan.cli import run
from treegan.grammar import PALINDROME_01


@pytest.fixture
def pal_file(tmp_path):
    p = tmp_path / "pal.g"
    p.write_text(PALINDROME_01)
    return p


def test_grammar_check(pal_file, capsys):
    assert run(["grammar", "check", str(pal_file)]) == 0
    assert "|V|=1 |T|=3 |P|=5" in capsys.readouterr().out


def test_grammar_check_errors(tmp_path, capsys):
    bad = tmp_path / "bad.g"
    bad.write_text("start P; term 0; P -> Q")
    assert run(["grammar", "check", str(bad)]) == 2
    assert run(["grammar", "check", str(tmp_path / "missing.g")]) == 2


def test_usage_errors(capsys):
    assert run([]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["grammar", "check"]) == 1
    assert run(["eval", "--grammar", "g", "--refs", "r", "--cands", "c", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_corpus_gen_pld(tmp_path):
    out = tmp_path / "d"
    assert run(["corpus", "gen", "--preset", "pld", "--seed", "7", "--out", str(out)]) == 0
    assert len((out / "train.txt").read_text().splitlines()) == 10_000
    assert len((out / "test.txt").read_text().splitlines()) == 1_000
    assert run(["grammar", "check", str(out / "grammar.g")]) == 0
    assert run(["corpus", "gen", "--preset", "nope", "--out", str(out)]) == 1


def test_config_errors(tmp_path, pal_file):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("mystery = 1\n")
    train = tmp_path / "t.txt"
    train.write_text("0 1 0\n")
    assert run(["pretrain-gen", "--grammar", str(pal_file), "--train", str(train), "--out",
                str(tmp_path / "o.ckpt"), "--config", str(cfg)]) == 1


def test_bad_corpus_line(tmp_path, pal_file, capsys):
    train = tmp_path / "t.txt"
    train.write_text("0 1 0\n0 1\n")
    assert run(["corpus", "parse", "--grammar", str(pal_file), "--in", str(train), "--out",
                str(tmp_path / "p.jsonl")]) == 2
    assert ":2:" in capsys.readouterr().err


def _pipeline(tmp_path, tag):
    d = tmp_path / tag
    assert run(["corpus", "gen", "--preset", "sql-a-desk", "--seed", "1", "--n-train", "60", "--n-test", "20",
                "--out", str(d)]) == 0
    g, train, test = str(d / "grammar.g"), str(d / "train.txt"), str(d / "test.txt")
    common = ["--seed", "3", "--batch-size", "16", "--budget", "60"]
    assert run(["corpus", "parse", "--grammar", g, "--in", train, "--out", str(d / "train.jsonl")]) == 0
    assert run(["pretrain-gen", "--grammar", g, "--train", str(d / "train.jsonl"), "--epochs", "2",
                "--out", str(d / "g.ckpt"), "--log", str(d / "log.jsonl")] + common) == 0
    assert run(["pretrain-disc", "--grammar", g, "--train", train, "--epochs", "2", "--checkpoint",
                str(d / "g.ckpt"), "--out", str(d / "gd.ckpt"), "--log", str(d / "log.jsonl")] + common) == 0
    assert run(["train-adv", "--grammar", g, "--train", train, "--epochs", "2", "--checkpoint",
                str(d / "gd.ckpt"), "--out", str(d / "adv.ckpt"), "--log", str(d / "log.jsonl")] + common) == 0
    assert run(["generate", "--grammar", g, "--checkpoint", str(d / "adv.ckpt"), "--n", "30",
                "--out", str(d / "samples.txt"), "--seed", "4"]) == 0
    assert run(["eval", "--grammar", g, "--refs", test, "--cands", str(d / "samples.txt"),
                "--schema", str(d / "schema.json"), "--out", str(d / "report.json")]) == 0
    return d


def test_full_pipeline_and_idempotence(tmp_path):
    a = _pipeline(tmp_path, "a")
    b = _pipeline(tmp_path, "b")
    for name in ("train.txt", "train.jsonl", "g.ckpt", "gd.ckpt", "adv.ckpt", "samples.txt", "report.json",
                 "log.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    report = json.loads((a / "report.json").read_text())
    assert report["syntax"] == 1.0 and "schema" in report
    phases = [json.loads(line)["phase"] for line in (a / "log.jsonl").read_text().splitlines()]
    assert phases == ["pretrain-gen"] * 2 + ["pretrain-disc"] * 2 + ["adversarial"] * 2


def test_adversarial_resume_via_cli(tmp_path):
    d = tmp_path / "d"
    assert run(["corpus", "gen", "--preset", "pld-desk", "--seed", "2", "--n-train", "40", "--n-test", "5",
                "--out", str(d)]) == 0
    g, train = str(d / "grammar.g"), str(d / "train.txt")
    common = ["--grammar", g, "--train", train, "--seed", "5", "--batch-size", "8", "--budget", "40"]
    assert run(["train-adv", *common, "--epochs", "5", "--out", str(d / "five.ckpt"),
                "--log", str(d / "five.jsonl")]) == 0
    assert run(["train-adv", *common, "--epochs", "2", "--out", str(d / "two.ckpt"),
                "--log", str(d / "split.jsonl")]) == 0
    assert run(["train-adv", *common, "--epochs", "3", "--checkpoint", str(d / "two.ckpt"),
                "--out", str(d / "split.ckpt"), "--log", str(d / "split.jsonl")]) == 0
    assert (d / "five.jsonl").read_text() == (d / "split.jsonl").read_text()
    assert (d / "five.ckpt").read_bytes() == (d / "split.ckpt").read_bytes()


def test_checkpoint_grammar_mismatch(tmp_path, pal_file):
    d = tmp_path / "d"
    run(["corpus", "gen", "--preset", "pld-desk", "--n-train", "10", "--n-test", "2", "--out", str(d)])
    assert run(["pretrain-gen", "--grammar", str(d / "grammar.g"), "--train", str(d / "train.txt"),
                "--epochs", "1", "--out", str(d / "g.ckpt")]) == 0
    assert run(["generate", "--grammar", str(pal_file), "--checkpoint", str(d / "g.ckpt"),
                "--out", str(tmp_path / "s.txt")]) == 2
