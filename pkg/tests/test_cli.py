"""End-to-end checks of the command-line interface."""

import pytest

from treedec.cli import (
    build_configs,
    config_to_text,
    main,
    parse_config_text,
)
from treedec.data import GenGrammar, generate, read_pgm, save_corpus, write_pgm
from treedec.symtree import format_triples, linearize, parse_latex
from treedec.vocab import default_vocabulary

SMALL = [
    "--set", "feat_dim=8", "--set", "hidden_dim=12", "--set", "embed_dim=8",
    "--set", "attn_dim=8", "--set", "mem_dim=8", "--set", "cov_channels=2",
    "--set", "cov_kernel=5", "--set", "pool_h=2", "--set", "pool_w=4",
    "--set", "n_samples=4", "--set", "max_nodes=4", "--set", "batch_size=2",
]


def run(argv):
    return main(argv)


# ---------------------------------------------------------------------------
# convert / validate

def test_convert_latex_to_triples_and_back(tmp_path, capsys):
    assert run(["convert", "--from", "latex", "--to", "triples",
                "\\frac{x}{2}+1", "-o", str(tmp_path / "t.txt")]) == 0
    assert run(["convert", "--from", "triples", "--to", "latex",
                str(tmp_path / "t.txt")]) == 0
    assert capsys.readouterr().out.strip() == "\\frac{x}{2}+1"


def test_convert_tree_dump(capsys):
    assert run(["convert", "--from", "latex", "--to", "tree", "x^{2}"]) == 0
    out = capsys.readouterr().out
    assert "root x" in out and "Sup 2" in out


def test_convert_bad_latex_diagnostic(capsys):
    assert run(["convert", "--from", "latex", "--to", "triples", "\\frac{a}{b"]) == 2
    err = capsys.readouterr().err
    assert "error:" in err
    assert "^" in err  # caret under the offending position


def test_convert_missing_triples_file(capsys):
    assert run(["convert", "--from", "triples", "--to", "latex", "no_such_file"]) == 2


def test_validate_exit_codes(tmp_path, capsys):
    vocab = default_vocabulary()
    good = tmp_path / "good.triples"
    good.write_text(format_triples(linearize(parse_latex("x^{2}+1", vocab))))
    assert run(["validate", str(good)]) == 0
    assert capsys.readouterr().out == "ok\n"

    bad = tmp_path / "bad.triples"
    bad.write_text("1\t+\t0\t-\n2\tx\t1\tSup\n")
    assert run(["validate", str(bad)]) == 1
    assert "IllegalRelation" in capsys.readouterr().out

    assert run(["validate", str(tmp_path / "missing.triples")]) == 2


def test_validate_symbol_keying_flag(tmp_path):
    text = "1\tx\t0\t-\n2\tx\t1\tRight\n3\ty\t1\tSup\n4\ty\t2\tSup\n"
    f = tmp_path / "dup.triples"
    f.write_text(text)
    assert run(["validate", str(f)]) == 0
    assert run(["validate", str(f), "--keying", "symbol"]) == 1


# ---------------------------------------------------------------------------
# config plumbing

def test_parse_config_round_trip():
    cfg, runcfg = build_configs({"hidden_dim": 24, "lambda4": 0.5, "n_samples": 9})
    assert cfg.hidden_dim == 24
    assert cfg.lambdas == (1.0, 1.0, 1.0, 0.5)
    assert runcfg["n_samples"] == 9
    text = config_to_text(cfg, runcfg)
    cfg2, run2 = build_configs(parse_config_text(text))
    assert cfg2 == cfg
    assert run2 == runcfg


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        parse_config_text("no_such_knob = 3\n")
    with pytest.raises(ValueError):
        parse_config_text("hidden_dim\n")


def test_train_rejects_bad_setting(tmp_path, capsys):
    assert run(["train", "--out", str(tmp_path), "--set", "bogus=1"]) == 2


# ---------------------------------------------------------------------------
# train / eval / decode

def _train(out, extra=()):
    return run(["train", "--out", str(out), "--epochs", "2", "--seed", "0",
                *SMALL, *extra])


def test_train_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    assert _train(out) == 0
    for name in ("checkpoint.bin", "optstate.bin", "state.txt",
                 "config.txt", "losses.csv"):
        assert (out / name).is_file(), name
    lines = (out / "losses.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,")
    assert len(lines) == 3
    assert (out / "state.txt").read_text().strip() == "2"


def test_train_log_totals_are_weighted_sums(tmp_path):
    out = tmp_path / "run"
    assert _train(out) == 0
    for line in (out / "losses.csv").read_text().splitlines()[1:]:
        _, lc, lp, lr, la, total = (float(v) for v in line.split(","))
        # columns are rounded to 1e-6, so allow rounding slack
        assert abs(total - (lc + lp + lr + 0.1 * la)) < 5e-6


def test_train_resume_matches_uninterrupted(tmp_path):
    solid = tmp_path / "solid"
    assert run(["train", "--out", str(solid), "--epochs", "4", "--seed", "1",
                *SMALL]) == 0

    split = tmp_path / "split"
    assert run(["train", "--out", str(split), "--epochs", "2", "--seed", "1",
                *SMALL]) == 0
    assert run(["train", "--out", str(split), "--epochs", "4", "--seed", "1",
                *SMALL, "--resume", str(split)]) == 0

    assert (solid / "losses.csv").read_text() == (split / "losses.csv").read_text()
    assert (solid / "checkpoint.bin").read_bytes() == (split / "checkpoint.bin").read_bytes()


def test_train_on_saved_corpus_and_eval(tmp_path, capsys):
    vocab = default_vocabulary()
    corpus = tmp_path / "corpus"
    save_corpus(generate(2, GenGrammar(vocab, max_nodes=4), 4, jitter=False), corpus)
    out = tmp_path / "run"
    assert _train(out, ("--corpus", str(corpus))) == 0
    capsys.readouterr()
    assert run(["eval", "--checkpoint", str(out), "--corpus", str(corpus)]) == 0
    row = capsys.readouterr().out
    for col in ("ExpRate_tree", "ExpRate_latex", "WER_pos", "WER_rel", "violations"):
        assert col in row


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert run(["eval", "--checkpoint", str(tmp_path / "nope")]) == 2


def test_ablation_flag_lands_in_config(tmp_path):
    out = tmp_path / "run"
    assert _train(out, ("--ablation", "spatial=off,dynamic=off")) == 0
    text = (out / "config.txt").read_text()
    assert "spatial_info = False" in text
    assert "dynamic_mask = False" in text
    assert "static_mask = True" in text


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TREEDEC_SEED", "777")
    out = tmp_path / "run"
    assert _train(out) == 0
    assert "seed = 777" in (out / "config.txt").read_text()


def test_decode_with_trace(tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(out) == 0
    vocab = default_vocabulary()
    img = tmp_path / "x.pgm"
    from treedec.data import Renderer
    import random
    write_pgm(img, Renderer(random.Random(0), jitter=False).render(
        parse_latex("x+1", vocab)))
    trace_dir = tmp_path / "trace"
    assert run(["decode", "--checkpoint", str(out), "--image", str(img),
                "--max-steps", "8", "-o", str(tmp_path / "out.triples"),
                "--trace-dir", str(trace_dir)]) == 0
    assert (trace_dir / "trace.txt").is_file()
    pgms = list(trace_dir.glob("step*_*.pgm"))
    assert pgms
    heat = read_pgm(pgms[0])
    assert heat.ndim == 2


def test_decode_missing_image(tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(out) == 0
    assert run(["decode", "--checkpoint", str(out),
                "--image", str(tmp_path / "none.pgm")]) == 2


# ---------------------------------------------------------------------------
# verify

def test_verify_mask_oracle_and_roundtrip(capsys):
    assert run(["verify", "--suite", "mask-oracle"]) == 0
    out = capsys.readouterr().out
    assert "0 mismatches" in out
    assert run(["verify", "--suite", "roundtrip", "--n", "25"]) == 0
    assert "25/25" in capsys.readouterr().out
