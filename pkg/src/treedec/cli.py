"""Command-line interface: convert, validate, train, eval, decode, verify.

Config precedence is flags > config file > defaults; TREEDEC_SEED
overrides the seed everywhere.  Exit codes: 2 malformed input / missing
files, 1 validation or verification failure, 3 NaN loss during training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import random
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from . import grammar, verify
from .model import TrainConfig, TreeDecoderModel
from .numerics import Adadelta
from .symtree import (
    TreeError,
    TreeNode,
    delinearize,
    format_triples,
    linearize,
    parse_latex,
    parse_triples,
    to_latex,
)
from .vocab import UnknownSymbol, default_vocabulary

RUN_KEYS = {
    "n_samples": int,
    "max_depth": int,
    "max_nodes": int,
    "batch_size": int,
    "max_steps": int,
}

_CFG_TYPES = {
    "feat_dim": int, "hidden_dim": int, "embed_dim": int, "attn_dim": int,
    "mem_dim": int, "cov_channels": int, "cov_kernel": int,
    "pool_h": int, "pool_w": int, "lr": float, "lr_decay": float, "clip_norm": float,
    "epochs": int, "seed": int,
    "lambda1": float, "lambda2": float, "lambda3": float, "lambda4": float,
    "spatial_info": bool, "static_mask": bool, "dynamic_mask": bool,
    "mask_mode": str, "mask_combine": str, "dynamic_key": str,
}

RUN_DEFAULTS = {
    "n_samples": 50,
    "max_depth": 3,
    "max_nodes": 8,
    "batch_size": 1,
    "max_steps": 48,
}


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "on", "yes"):
        return True
    if v.lower() in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; unknown keys
    are rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key] = val
    return _coerce(out)


def _coerce(raw: dict) -> dict:
    out = {}
    for key, val in raw.items():
        if key in _CFG_TYPES:
            typ = _CFG_TYPES[key]
        elif key in RUN_KEYS:
            typ = RUN_KEYS[key]
        else:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(val, str):
            out[key] = _parse_bool(val) if typ is bool else typ(val)
        else:
            out[key] = val
    return out


def build_configs(settings: dict) -> tuple[TrainConfig, dict]:
    lams = [settings.pop(f"lambda{i}", d) for i, d in zip((1, 2, 3, 4), (1.0, 1.0, 1.0, 0.1))]
    run = dict(RUN_DEFAULTS)
    for k in list(settings):
        if k in RUN_KEYS:
            run[k] = settings.pop(k)
    cfg = TrainConfig(lambdas=tuple(lams), **settings)
    return cfg, run


def config_to_text(cfg: TrainConfig, run: dict) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "lambdas":
            for i, l in enumerate(v, 1):
                lines.append(f"lambda{i} = {l}")
        elif f.name == "enc_channels":
            continue  # fixed by the encoder architecture
        else:
            lines.append(f"{f.name} = {v}")
    for k, v in run.items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _gather_settings(args) -> dict:
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(parse_config_text(Path(args.config).read_text()))
    for kv in getattr(args, "set", None) or []:
        if "=" not in kv:
            raise ValueError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        settings.update(_coerce({k.strip(): v.strip()}))
    for flag in ("epochs", "seed"):
        v = getattr(args, flag, None)
        if v is not None:
            settings[flag] = v
    for kv in (getattr(args, "ablation", None) or "").split(","):
        if not kv:
            continue
        name, _, val = kv.partition("=")
        key = {"spatial": "spatial_info", "static": "static_mask", "dynamic": "dynamic_mask"}.get(
            name.strip()
        )
        if key is None:
            raise ValueError(f"unknown ablation axis {name!r}")
        settings[key] = _parse_bool(val or "off")
    if "TREEDEC_SEED" in os.environ:
        settings["seed"] = int(os.environ["TREEDEC_SEED"])
    return settings


def _dump_tree(node: TreeNode, rel: str = "root", indent: int = 0) -> str:
    lines = [f"{'  ' * indent}{rel} {node.sym.glyph} (#{node.order})"]
    for r, c in node.children:
        lines.append(_dump_tree(c, r.name, indent + 1))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands

def cmd_convert(args) -> int:
    vocab = default_vocabulary()
    src = args.input
    try:
        is_file = Path(src).is_file()
    except OSError:
        is_file = False
    if args.src_fmt != "latex" or is_file:
        try:
            src = Path(src).read_text()
        except OSError:
            if args.src_fmt != "latex":
                print(f"error: cannot read {src!r}", file=sys.stderr)
                return 2
    try:
        if args.src_fmt == "latex":
            tree = parse_latex(src.strip(), vocab)
        else:
            tree, _ = delinearize(parse_triples(src, vocab), strict=True)
        linearize(tree)  # assign decode orders
        if args.dst_fmt == "latex":
            out = to_latex(tree, vocab) + "\n"
        elif args.dst_fmt == "triples":
            out = format_triples(linearize(tree))
        else:
            out = _dump_tree(tree.root) + "\n"
    except (TreeError, UnknownSymbol) as e:
        _parse_diagnostic(src, e)
        return 2
    if args.output:
        Path(args.output).write_text(out)
    else:
        sys.stdout.write(out)
    return 0


def _parse_diagnostic(src: str, e: Exception) -> None:
    print(f"error: {e}", file=sys.stderr)
    pos = getattr(e, "pos", None)
    if pos is not None and pos >= 0 and "\n" not in src.strip():
        print(f"  {src.strip()}", file=sys.stderr)
        print(f"  {' ' * pos}^", file=sys.stderr)


def cmd_validate(args) -> int:
    vocab = default_vocabulary()
    table = grammar.StaticMaskTable(vocab)
    try:
        text = Path(args.file).read_text()
        seq = parse_triples(text, vocab)
    except (OSError, TreeError, UnknownSymbol, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    report = grammar.validate_triples(seq, table, keying=args.keying, combine=args.combine)
    sys.stdout.write(report.dump())
    return 1 if report else 0


def _load_run(checkpoint_dir: Path):
    cfg_path = checkpoint_dir / "config.txt"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"missing {cfg_path}")
    cfg, run = build_configs(parse_config_text(cfg_path.read_text()))
    vocab = default_vocabulary()
    model = TreeDecoderModel(vocab, cfg=cfg)
    model.load(checkpoint_dir / "checkpoint.bin")
    return model, cfg, run


def _corpus(args, run: dict, seed: int):
    vocab = default_vocabulary()
    if getattr(args, "corpus", None):
        return datamod.load_corpus(Path(args.corpus), vocab)
    g = datamod.GenGrammar(vocab, max_depth=run["max_depth"], max_nodes=run["max_nodes"])
    return datamod.generate(seed, g, run["n_samples"])


def cmd_train(args) -> int:
    try:
        cfg, run = build_configs(_gather_settings(args))
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = default_vocabulary()
    model = TreeDecoderModel(vocab, cfg=cfg)
    opt = Adadelta(model.store, lr=cfg.lr)
    start_epoch = 0
    if args.resume:
        ckpt = Path(args.resume)
        model.load(ckpt / "checkpoint.bin")
        opt.load(ckpt / "optstate.bin")
        start_epoch = int((ckpt / "state.txt").read_text().split()[0])
    samples = _corpus(args, run, cfg.seed)
    batch = [(s.img, s.triples) for s in samples]
    bs = run["batch_size"]
    log_path = out / "losses.csv"
    mode = "a" if args.resume and log_path.exists() else "w"
    with open(log_path, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(["epoch", "l_child", "l_pos", "l_rel", "l_alpha", "total"])
        opt.lr = cfg.lr * cfg.lr_decay**start_epoch
        for epoch in range(start_epoch, cfg.epochs):
            order = list(range(len(batch)))
            random.Random(cfg.seed + 1000 + epoch).shuffle(order)
            acc = np.zeros(5)
            for i in range(0, len(order), bs):
                chunk = [batch[j] for j in order[i : i + bs]]
                lb = model.train_step(chunk, opt)
                acc += [lb.l_child, lb.l_pos, lb.l_rel, lb.l_alpha, lb.total]
            acc /= (len(order) + bs - 1) // bs
            w.writerow([epoch + 1] + [f"{v:.6f}" for v in acc])
            f.flush()
            if not np.isfinite(acc).all():
                print(f"error: non-finite loss at epoch {epoch + 1}: {acc}", file=sys.stderr)
                model.save(out / "diverged.bin")
                return 3
            opt.lr *= cfg.lr_decay
            if args.verbose:
                print(f"epoch {epoch + 1}: total {acc[4]:.4f}")
            model.save(out / "checkpoint.bin")
            opt.save(out / "optstate.bin")
            (out / "state.txt").write_text(f"{epoch + 1}\n")
            (out / "config.txt").write_text(config_to_text(cfg, run))
    return 0


def cmd_eval(args) -> int:
    try:
        model, cfg, run = _load_run(Path(args.checkpoint))
        samples = _corpus(args, run, cfg.seed)
    except (OSError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    preds = [model.greedy_decode(s.img, max_steps=run["max_steps"])[0] for s in samples]
    table = grammar.StaticMaskTable(model.vocab)
    report = datamod.evaluate(preds, samples, model.vocab, table, wer_mode=args.wer_mode)
    print(report.row())
    return 0


def cmd_decode(args) -> int:
    try:
        model, cfg, run = _load_run(Path(args.checkpoint))
        img = datamod.read_pgm(Path(args.image))
    except (OSError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    seq, trace = model.greedy_decode(img, max_steps=args.max_steps or run["max_steps"])
    out = format_triples(seq) if seq else ""
    if trace.truncated:
        out += "# truncated: step limit reached\n"
    if args.output:
        Path(args.output).write_text(out)
    else:
        sys.stdout.write(out)
    if args.trace_dir:
        _dump_trace(trace, Path(args.trace_dir), model)
    return 0


def _dump_trace(trace, root: Path, model: TreeDecoderModel) -> None:
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in trace.steps:
        glyph = model.vocab.by_index(s.child_pred).glyph
        rel = "-" if s.rel_pred is None else grammar.Relation(s.rel_pred).name
        mask = "-" if s.mask is None else grammar.mask_to_string(s.mask)
        gate = "-" if s.gate is None else f"{s.gate:.4f}"
        lines.append(
            f"step {s.order}\tchild {glyph}\tparent {s.parent_pred}\t"
            f"rel {rel}\tmask {mask}\tgate {gate}"
        )
        for name, a in (("parent", s.parent_attention), ("child", s.child_attention)):
            if a.size:
                scaled = a / a.max() if a.max() > 0 else a
                datamod.write_pgm(root / f"step{s.order:02d}_{name}.pgm", scaled)
    (root / "trace.txt").write_text("\n".join(lines) + "\n")


def cmd_verify(args) -> int:
    vocab = default_vocabulary()
    suites = (
        ["gradcheck", "mask-oracle", "roundtrip"] if args.suite == "all" else [args.suite]
    )
    failed = False
    for suite in suites:
        if suite == "gradcheck":
            errs = verify.run_gradcheck(seed=args.seed)
            worst = max(errs.values())
            print(f"gradcheck: {len(errs)} parameters, max relative error {worst:.2e}")
            for name, e in sorted(errs.items(), key=lambda kv: -kv[1]):
                print(f"  {name:24s} {e:.3e}")
            if worst >= 1e-4:
                failed = True
        elif suite == "mask-oracle":
            checked, mismatches = verify.run_mask_oracle(vocab)
            print(f"mask-oracle: {checked} cases, {mismatches} mismatches")
            failed |= mismatches > 0
        elif suite == "roundtrip":
            passed, total = verify.run_roundtrip(vocab, n=args.n, seed=args.seed)
            print(f"roundtrip: {passed}/{total}")
            failed |= passed != total
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treedec", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("convert", help="convert between latex, triples, tree dump")
    c.add_argument("--from", dest="src_fmt", choices=["latex", "triples"], required=True)
    c.add_argument("--to", dest="dst_fmt", choices=["latex", "triples", "tree"], required=True)
    c.add_argument("input", help="literal latex or an input file path")
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_convert)

    v = sub.add_parser("validate", help="check a triple file against the syntax masks")
    v.add_argument("file")
    v.add_argument("--keying", choices=["instance", "symbol"], default="instance")
    v.add_argument("--combine", choices=["and_not", "xor"], default="and_not")
    v.set_defaults(fn=cmd_validate)

    t = sub.add_parser("train", help="train on a synthetic or on-disk corpus")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--corpus", help="corpus directory (default: generate)")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", help="e.g. spatial=off,static=off,dynamic=off")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="greedy-decode a corpus and report metrics")
    e.add_argument("--checkpoint", required=True, help="training output directory")
    e.add_argument("--corpus")
    e.add_argument("--wer-mode", choices=["levenshtein", "positional"], default="levenshtein")
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("decode", help="decode one image to triples")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--max-steps", type=int)
    d.add_argument("--trace-dir", help="dump attention heatmaps and step log here")
    d.add_argument("-o", "--output")
    d.set_defaults(fn=cmd_decode)

    w = sub.add_parser("verify", help="run verification suites")
    w.add_argument("--suite", choices=["gradcheck", "mask-oracle", "roundtrip", "all"], default="all")
    w.add_argument("--n", type=int, default=1000)
    w.add_argument("--seed", type=int, default=int(os.environ.get("TREEDEC_SEED", "0")))
    w.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
