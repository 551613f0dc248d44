"""Verification suites: finite-difference gradient checks, exhaustive
mask-engine replay against a brute-force oracle, and conversion
round-trips over generated corpora."""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from . import grammar
from .data import GenGrammar, generate
from .model import TrainConfig, TreeDecoderModel
from .symtree import Relation, TripleSeq, linearize, parse_latex, to_latex, tree_equal
from .vocab import SymbolId, Vocabulary


def gradcheck_config(seed: int = 0) -> TrainConfig:
    """Dimensions small enough for a full finite-difference sweep."""
    return TrainConfig(
        feat_dim=6,
        hidden_dim=10,
        embed_dim=6,
        attn_dim=6,
        mem_dim=6,
        cov_channels=2,
        cov_kernel=5,
        pool_h=2,
        pool_w=4,
        enc_channels=(3, 4),
        seed=seed,
    )


def smoke_config(seed: int = 0, **overrides) -> TrainConfig:
    """Dimensions and optimizer settings for fast CPU training runs.

    Overfits 50 generated expressions well inside 200 epochs; used by the
    acceptance suite and handy as a starting point for experiments.
    """
    kw = dict(
        feat_dim=32,
        hidden_dim=128,
        embed_dim=64,
        attn_dim=64,
        mem_dim=64,
        cov_channels=4,
        cov_kernel=11,
        enc_channels=(8, 16),
        lr=3.0,
        clip_norm=25.0,
        seed=seed,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def finite_difference_gradients(
    model: TreeDecoderModel,
    img: np.ndarray,
    triples: TripleSeq,
    h: float = 1e-5,
    max_entries_per_param: Optional[int] = None,
) -> dict[str, float]:
    """Relative error between backprop and central differences, per
    parameter tensor: max |fd - analytic| over entries, divided by the
    largest gradient magnitude in that tensor.  The denominator is
    floored at 1e-5 so near-zero gradients compare absolutely; central
    differences at h=1e-5 on a loss of order 10 carry roundoff noise of
    about 1e-10, so the floor keeps that noise well under tolerance."""
    model.store.zero_grad()
    losses, _ = model.forward_teacher(img, triples)
    from .numerics import backward

    backward(losses["total"])
    analytic = {n: t.grad.copy() for n, t in model.store.items()}

    errors: dict[str, float] = {}
    for name, t in model.store.items():
        flat = t.data.reshape(-1)
        n_entries = flat.size
        idxs = range(n_entries)
        if max_entries_per_param is not None and n_entries > max_entries_per_param:
            rng = np.random.default_rng(hash(name) & 0xFFFF)
            idxs = rng.choice(n_entries, size=max_entries_per_param, replace=False)
        an = analytic[name].reshape(-1)
        gap = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = model.forward_teacher(img, triples)[0]["total"].item()
            flat[i] = orig - h
            lm = model.forward_teacher(img, triples)[0]["total"].item()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            gap = max(gap, abs(fd - an[i]))
        denom = max(float(np.max(np.abs(an))) if an.size else 0.0, 1e-5)
        errors[name] = gap / denom
    return errors


def run_gradcheck(
    seed: int = 0, latex: str = "\\frac{x}{2}", h: float = 1e-5
) -> dict[str, float]:
    """Full-parameter sweep on a small expression with all losses active."""
    from .data import Renderer
    import random

    from .vocab import default_vocabulary

    vocab = default_vocabulary()
    model = TreeDecoderModel(vocab, cfg=gradcheck_config(seed))
    tree = parse_latex(latex, vocab)
    img = Renderer(random.Random(seed), jitter=False).render(tree, height=16)
    return finite_difference_gradients(model, img, linearize(tree), h=h)


# ---------------------------------------------------------------------------
# mask-engine oracle

def brute_force_mask(
    parent_pos: int,
    parent_sym: SymbolId,
    history: list[tuple[int, SymbolId, Relation]],
    table: grammar.StaticMaskTable,
    keying: grammar.DynamicKey,
    combine: grammar.MaskCombine = "and_not",
) -> grammar.MaskVector:
    """Recompute the step mask by replaying the whole history from scratch."""
    stat = table.row(parent_sym)
    used = set()
    for pos, sym, rel in history:
        key = sym.index if keying == "symbol" else pos
        used.add((key, int(rel)))
    pkey = parent_sym.index if keying == "symbol" else parent_pos
    dyn = tuple(1 if (pkey, r) in used else 0 for r in range(6))
    if combine == "xor":
        return tuple(a ^ b for a, b in zip(stat, dyn))  # type: ignore[return-value]
    return tuple(a & (1 - b) for a, b in zip(stat, dyn))  # type: ignore[return-value]


def run_mask_oracle(
    vocab: Vocabulary, max_history: int = 3
) -> tuple[int, int]:
    """Exhaustive agreement check of incremental vs replayed masks.

    For every vocabulary symbol, keying mode, and relation history of
    length <= max_history applied to that symbol, compare the incremental
    state against the brute-force replay.  Returns (checked, mismatches).
    """
    table = grammar.StaticMaskTable(vocab)
    checked = mismatches = 0
    rels = list(Relation)
    for glyph in vocab.glyphs:
        sym = vocab.symbol(glyph)
        for keying in ("instance", "symbol"):
            for n in range(max_history + 1):
                for hist in itertools.product(rels, repeat=n):
                    state = grammar.DynamicMaskState(keying=keying)
                    events = []
                    for rel in hist:
                        state = state.record(1, sym, rel)
                        events.append((1, sym, rel))
                    for combine in ("and_not", "xor"):
                        inc = grammar.step_mask(1, sym, table, state, combine)
                        ref = brute_force_mask(1, sym, events, table, keying, combine)
                        checked += 1
                        if inc != ref:
                            mismatches += 1
    return checked, mismatches


# ---------------------------------------------------------------------------
# ablation direction

def train_toy(
    model: TreeDecoderModel,
    batch: list,
    epochs: int,
    batch_size: int = 5,
    shuffle_seed: int = 99,
):
    """Shared toy training loop: seeded shuffles, fixed batch size."""
    import random

    from .numerics import Adadelta

    opt = Adadelta(model.store, lr=model.cfg.lr)
    rng = random.Random(shuffle_seed)
    for _ in range(epochs):
        order = list(range(len(batch)))
        rng.shuffle(order)
        for i in range(0, len(batch), batch_size):
            model.train_step([batch[j] for j in order[i : i + batch_size]], opt)
    return model


def run_ablation(
    vocab: Vocabulary, seeds: tuple[int, ...] = (0, 1, 2), epochs: int = 60
) -> tuple[float, float]:
    """Mean held-out WER_pos with the spatial-attention position term on
    vs off, everything else identical.

    Trains on duplicate-glyph expressions over four letters and scores
    parent positions on the fifth, unseen letter.  Repeated glyphs make
    the semantic energy ambiguous, so the spatial term should lower
    WER_pos; mem_dim is kept small so the semantic path cannot simply
    memorize the corpus.  Returns (wer_on, wer_off), averaged over seeds.
    """
    from .data import duplicate_glyph_fixture, evaluate

    table = grammar.StaticMaskTable(vocab)
    samples = duplicate_glyph_fixture(vocab)
    train = [s for s in samples if not s.ident.startswith("dup_4")]
    test = [s for s in samples if s.ident.startswith("dup_4")]
    batch = [(s.img, s.triples) for s in train]
    totals = {True: 0.0, False: 0.0}
    for seed in seeds:
        for spatial in (True, False):
            cfg = smoke_config(seed=seed, spatial_info=spatial, mem_dim=8)
            model = train_toy(
                TreeDecoderModel(vocab, cfg=cfg), batch, epochs, shuffle_seed=seed + 99
            )
            preds = [model.greedy_decode(s.img, max_steps=48)[0] for s in test]
            totals[spatial] += evaluate(preds, test, vocab, table).wer_pos
    n = len(seeds)
    return totals[True] / n, totals[False] / n


# ---------------------------------------------------------------------------
# round-trips

def run_roundtrip(vocab: Vocabulary, n: int = 1000, seed: int = 7) -> tuple[int, int]:
    """latex -> tree -> triples -> tree -> latex over generated trees.

    Returns (passed, total).
    """
    samples = generate(seed, GenGrammar(vocab), n, jitter=False)
    passed = 0
    for s in samples:
        try:
            t1 = parse_latex(s.latex, vocab)
            seq = linearize(t1)
            from .symtree import delinearize

            t2, viol = delinearize(seq, strict=True)
            assert not viol
            ok = (
                tree_equal(t1, s.tree)
                and tree_equal(t2, t1)
                and to_latex(t2, vocab) == s.latex
            )
        except Exception:
            ok = False
        passed += bool(ok)
    return passed, n
