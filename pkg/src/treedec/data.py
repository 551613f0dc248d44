"""Synthetic corpus: random grammatical expression trees, a procedural
glyph renderer, corpus disk I/O (PGM images + triple files), and the
evaluation metrics (ExpRate tree/latex, WER over position and relation
streams)."""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from .grammar import StaticMaskTable, validate_triples
from .symtree import (
    ExprTree,
    Relation,
    TreeNode,
    TripleSeq,
    delinearize,
    format_triples,
    linearize,
    parse_latex,
    parse_triples,
    to_latex,
    tree_equal,
)
from .vocab import END, START, Vocabulary

# ---------------------------------------------------------------------------
# procedural 5x7 glyph atlas

_FONT: dict[str, list[str]] = {
    "a": [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
    "b": ["#....", "#....", "#.##.", "##..#", "#...#", "##..#", "#.##."],
    "c": [".....", ".....", ".###.", "#....", "#....", "#....", ".###."],
    "e": [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
    "i": ["..#..", ".....", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "k": ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."],
    "l": ["..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..##."],
    "m": [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"],
    "n": [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    "o": [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."],
    "s": [".....", ".....", ".####", "#....", ".###.", "....#", "####."],
    "x": [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    "y": [".....", "#...#", "#...#", ".#.#.", "..#..", "..#..", ".#..."],
    "z": [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"],
    "0": [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    "1": ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "2": [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    "3": [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
    "4": ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    "+": [".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."],
    "-": [".....", ".....", ".....", "#####", ".....", ".....", "....."],
    "=": [".....", ".....", "#####", ".....", "#####", ".....", "....."],
    "sum": ["#####", "#....", ".#...", "..#..", ".#...", "#....", "#####"],
    "prod": ["#####", ".#.#.", ".#.#.", ".#.#.", ".#.#.", ".#.#.", ".#.#."],
    "alpha": [".....", ".....", ".##.#", "#..#.", "#..#.", "#..#.", ".##.#"],
    "beta": [".##..", "#..#.", "#.#..", "#..#.", "#...#", "#..#.", "#.##."],
}

# glyph -> atlas component sequence (multi-letter commands spell out)
_COMPONENTS: dict[str, list[str]] = {
    "\\sum": ["sum"],
    "\\prod": ["prod"],
    "\\alpha": ["alpha"],
    "\\beta": ["beta"],
    "\\lim": ["l", "i", "m"],
    "\\sin": ["s", "i", "n"],
    "\\cos": ["c", "o", "s"],
}


def glyph_bitmap(name: str) -> np.ndarray:
    rows = _FONT[name]
    return np.array([[1.0 if ch == "#" else 0.0 for ch in r] for r in rows])


def _resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ri = (np.arange(out_h) * h // out_h).clip(0, h - 1)
    ci = (np.arange(out_w) * w // out_w).clip(0, w - 1)
    return img[np.ix_(ri, ci)]


def _scale(img: np.ndarray, factor: float) -> np.ndarray:
    h = max(int(round(img.shape[0] * factor)), 3)
    w = max(int(round(img.shape[1] * factor)), 2)
    return _resize_nearest(img, h, w)


def _hstack(parts: Sequence[np.ndarray], gap: int = 1) -> np.ndarray:
    h = max(p.shape[0] for p in parts)
    total_w = sum(p.shape[1] for p in parts) + gap * (len(parts) - 1)
    out = np.zeros((h, total_w))
    x = 0
    for p in parts:
        y = (h - p.shape[0]) // 2
        out[y : y + p.shape[0], x : x + p.shape[1]] = np.maximum(
            out[y : y + p.shape[0], x : x + p.shape[1]], p
        )
        x += p.shape[1] + gap
    return out


def _vstack(parts: Sequence[np.ndarray], gap: int = 1) -> np.ndarray:
    w = max(p.shape[1] for p in parts)
    total_h = sum(p.shape[0] for p in parts) + gap * (len(parts) - 1)
    out = np.zeros((total_h, w))
    y = 0
    for p in parts:
        x = (w - p.shape[1]) // 2
        out[y : y + p.shape[0], x : x + p.shape[1]] = np.maximum(
            out[y : y + p.shape[0], x : x + p.shape[1]], p
        )
        y += p.shape[0] + gap
    return out


class Renderer:
    """Recursive box layout: Sup up-right, Sub down-right, Above/Below
    stacked, Inside under a radical, Right adjacent."""

    def __init__(self, rng: random.Random, jitter: bool = True):
        self.rng = rng
        self.jitter = jitter

    def _atom(self, glyph: str) -> np.ndarray:
        comps = _COMPONENTS.get(glyph, [glyph])
        imgs = []
        for c in comps:
            g = glyph_bitmap(c).copy()
            if self.jitter:
                g *= self.rng.uniform(0.75, 1.0)
                pad_top = self.rng.choice([0, 1])
                g = np.pad(g, ((pad_top, 1 - pad_top), (0, 0)))
            imgs.append(g)
        return _hstack(imgs)

    def node(self, node: TreeNode) -> np.ndarray:
        glyph = node.sym.glyph
        kids = {r: c for r, c in node.children}
        if glyph == "\\frac":
            num = self.node(kids[Relation.Above]) if Relation.Above in kids else np.zeros((3, 4))
            den = self.node(kids[Relation.Below]) if Relation.Below in kids else np.zeros((3, 4))
            bar = np.ones((1, max(num.shape[1], den.shape[1]) + 2))
            body = _vstack([num, bar, den])
        elif glyph == "\\sqrt":
            inner = self.node(kids[Relation.Inside]) if Relation.Inside in kids else np.zeros((5, 4))
            h, w = inner.shape
            body = np.zeros((h + 2, w + 5))
            body[2:, 5:] = inner
            body[0, 3:] = 1.0  # top bar
            for k in range(h + 1):  # radical stroke
                r = 1 + k
                c = 3 - (3 * k) // max(h, 1)
                if 0 <= r < h + 2 and 0 <= c < w + 5:
                    body[r, c] = 1.0
        elif glyph in ("\\sum", "\\prod", "\\lim"):
            core = self._atom(glyph)
            stack = []
            if Relation.Above in kids:
                stack.append(_scale(self.node(kids[Relation.Above]), 0.75))
            stack.append(core)
            if Relation.Below in kids:
                stack.append(_scale(self.node(kids[Relation.Below]), 0.75))
            body = _vstack(stack) if len(stack) > 1 else core
        else:
            body = self._atom(glyph)
        # scripts
        sup = kids.get(Relation.Sup)
        sub = kids.get(Relation.Sub)
        if sup is not None or sub is not None:
            h, w = body.shape
            sup_img = _scale(self.node(sup), 0.7) if sup is not None else None
            sub_img = _scale(self.node(sub), 0.7) if sub is not None else None
            extra_w = max(
                sup_img.shape[1] if sup_img is not None else 0,
                sub_img.shape[1] if sub_img is not None else 0,
            ) + 1
            up = sup_img.shape[0] - h // 3 if sup_img is not None else 0
            up = max(up, 0)
            down = sub_img.shape[0] - h // 3 if sub_img is not None else 0
            down = max(down, 0)
            canvas = np.zeros((up + h + down, w + extra_w))
            canvas[up : up + h, :w] = body
            if sup_img is not None:
                canvas[: sup_img.shape[0], w + 1 : w + 1 + sup_img.shape[1]] = sup_img
            if sub_img is not None:
                canvas[-sub_img.shape[0] :, w + 1 : w + 1 + sub_img.shape[1]] = sub_img
            body = canvas
        right = kids.get(Relation.Right)
        if right is not None:
            body = _hstack([body, self.node(right)], gap=2)
        return body

    def render(self, tree: ExprTree, height: int = 32, stride: int = 4) -> np.ndarray:
        body = self.node(tree.root)
        body = np.pad(body, 1)
        h, w = body.shape
        out_w = max(int(round(w * height / h)), stride)
        out_w = ((out_w + stride - 1) // stride) * stride
        img = _resize_nearest(body, height, out_w)
        return img.clip(0.0, 1.0)


# ---------------------------------------------------------------------------
# random tree generation

_STRUCT_REQUIRED: dict[str, list[Relation]] = {
    "frac": [Relation.Above, Relation.Below],
    "sqrt": [Relation.Inside],
    "bigop": [Relation.Below],
    "lim": [Relation.Below],
}


@dataclass
class GenGrammar:
    vocab: Vocabulary
    max_depth: int = 3
    max_nodes: int = 10
    p_struct: float = 0.25
    p_script: float = 0.25
    p_right: float = 0.5

    def __post_init__(self):
        skip = {START, END}
        self.structural = [
            g
            for g in self.vocab.glyphs
            if g not in skip and any(c in _STRUCT_REQUIRED for c in self.vocab.classes(g))
        ]
        self.terminal = [
            g
            for g in self.vocab.glyphs
            if g not in skip and g not in self.structural
        ]


@dataclass
class Sample:
    ident: str
    img: np.ndarray
    tree: ExprTree
    latex: str
    triples: TripleSeq


def _gen_tree(g: GenGrammar, rng: random.Random) -> ExprTree:
    budget = [rng.randint(2, g.max_nodes)]

    def make(depth: int, chain: bool) -> TreeNode:
        budget[0] -= 1
        structural_ok = (
            depth < g.max_depth
            and budget[0] >= 2
            and rng.random() < g.p_struct
        )
        glyph = rng.choice(g.structural if structural_ok else g.terminal)
        node = TreeNode(g.vocab.symbol(glyph))
        cls = g.vocab.classes(glyph)
        required: list[Relation] = []
        for c in cls:
            required = _STRUCT_REQUIRED.get(c, [])
            if required:
                break
        for rel in required:
            if budget[0] <= 0:
                break
            node.add_child(rel, make(depth + 1, chain=False))
        bits = g.vocab.mask_bits(glyph)
        if "bigop" in cls and bits[Relation.Above] and node.child(Relation.Above) is None:
            if budget[0] > 0 and rng.random() < 0.5:
                node.add_child(Relation.Above, make(depth + 1, chain=False))
        if depth < g.max_depth and not required:
            for rel in (Relation.Sup, Relation.Sub):
                if bits[rel] and budget[0] > 0 and rng.random() < g.p_script:
                    node.add_child(rel, make(depth + 1, chain=False))
        if chain and bits[Relation.Right] and budget[0] > 0 and rng.random() < g.p_right:
            node.add_child(Relation.Right, make(depth, chain=True))
        return node

    return ExprTree(make(0, chain=True))


_DUP_TEMPLATES = (
    "{0}+{0}",
    "{0}+{0}+{0}",
    "{0}^{{{0}}}",
    "{0}_{{{0}}}",
    "\\frac{{{0}}}{{{0}}}",
    "\\sqrt{{{0}}}+{0}",
    "{0}^{{{0}}}+{0}",
    "{0}-{0}",
    "{0}={0}+{0}",
    "\\frac{{{0}+{0}}}{{{0}}}",
)


def duplicate_glyph_fixture(
    vocab: Vocabulary, letters: tuple[str, ...] = ("x", "y", "z", "a", "b")
) -> list[Sample]:
    """Deterministic corpus where every expression repeats one glyph.

    Repeated glyphs make parent identification ambiguous on symbol
    identity alone, so these stress the parent-position module.
    """
    rng = random.Random(0)
    renderer = Renderer(rng, jitter=False)
    samples = []
    for li, letter in enumerate(letters):
        for ti, tmpl in enumerate(_DUP_TEMPLATES):
            tree = parse_latex(tmpl.format(letter), vocab)
            samples.append(
                Sample(
                    ident=f"dup_{li}{ti:02d}",
                    img=renderer.render(tree),
                    tree=tree,
                    latex=to_latex(tree, vocab),
                    triples=linearize(tree),
                )
            )
    return samples


def generate(seed: int, grammar: GenGrammar, n: int, jitter: bool = True) -> list[Sample]:
    """Deterministic corpus of n rendered samples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    renderer = Renderer(rng, jitter=jitter)
    samples = []
    for k in range(n):
        tree = _gen_tree(grammar, rng)
        triples = linearize(tree)
        samples.append(
            Sample(
                ident=f"{seed:08x}_{k:05d}",
                img=renderer.render(tree),
                tree=tree,
                latex=to_latex(tree, grammar.vocab),
                triples=triples,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# metrics

def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit substitution/insertion/deletion costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, xa in enumerate(a, 1):
        cur = [i]
        for j, xb in enumerate(b, 1):
            cur.append(
                min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (xa != xb))
            )
        prev = cur
    return prev[-1]


@dataclass
class EvalReport:
    n: int
    tree_matches: int
    latex_matches: int
    pos_errors: int
    pos_tokens: int
    rel_errors: int
    rel_tokens: int
    mask_violations: int = 0

    @property
    def exprate_tree(self) -> float:
        return self.tree_matches / self.n if self.n else 0.0

    @property
    def exprate_latex(self) -> float:
        return self.latex_matches / self.n if self.n else 0.0

    @property
    def wer_pos(self) -> float:
        return self.pos_errors / self.pos_tokens if self.pos_tokens else 0.0

    @property
    def wer_rel(self) -> float:
        return self.rel_errors / self.rel_tokens if self.rel_tokens else 0.0

    def row(self) -> str:
        return (
            f"ExpRate_tree {100*self.exprate_tree:6.2f}%  "
            f"ExpRate_latex {100*self.exprate_latex:6.2f}%  "
            f"WER_pos {100*self.wer_pos:6.2f}%  "
            f"WER_rel {100*self.wer_rel:6.2f}%  "
            f"violations {self.mask_violations}"
        )


def _streams(seq: TripleSeq) -> tuple[list[str], list[str]]:
    pos = [str(t.parent_pos) for t in seq]
    rel = [t.rel.name if t.rel is not None else "-" for t in seq]
    return pos, rel


WerMode = Literal["levenshtein", "positional"]


def evaluate(
    preds: list[TripleSeq],
    refs: list[Sample],
    vocab: Vocabulary,
    mask_table: Optional[StaticMaskTable] = None,
    wer_mode: WerMode = "levenshtein",
) -> EvalReport:
    """Score predicted triple sequences against reference samples.

    ``wer_mode="positional"`` counts teacher-forcing-style per-step
    mismatches instead of aligning with edit distance.
    """
    if len(preds) != len(refs):
        raise ValueError(f"got {len(preds)} predictions for {len(refs)} references")
    rep = EvalReport(len(refs), 0, 0, 0, 0, 0, 0)
    for pred, ref in zip(preds, refs):
        ppos, prel = _streams(pred)
        rpos, rrel = _streams(ref.triples)
        if wer_mode == "positional":
            rep.pos_errors += sum(
                a != b for a, b in zip(ppos, rpos)
            ) + abs(len(ppos) - len(rpos))
            rep.rel_errors += sum(
                a != b for a, b in zip(prel, rrel)
            ) + abs(len(prel) - len(rrel))
        else:
            rep.pos_errors += levenshtein(ppos, rpos)
            rep.rel_errors += levenshtein(prel, rrel)
        rep.pos_tokens += len(rpos)
        rep.rel_tokens += len(rrel)
        if pred:
            try:
                ptree, _ = delinearize(pred, strict=False)
            except Exception:
                ptree = None
            if ptree is not None:
                if tree_equal(ptree, ref.tree):
                    rep.tree_matches += 1
                if to_latex(ptree, vocab) == ref.latex:
                    rep.latex_matches += 1
            if mask_table is not None:
                rep.mask_violations += len(validate_triples(pred, mask_table))
    return rep


# ---------------------------------------------------------------------------
# corpus disk format: labels.txt + per-id triple files + PGM images

def write_pgm(path: Path, img: np.ndarray) -> None:
    data = (img.clip(0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    if magic == b"P5":
        data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    elif magic == b"P2":
        data = np.array(raw[pos:].split()[: w * h], dtype=np.uint8)
    else:
        raise ValueError(f"unsupported PGM magic {magic!r}")
    return data.reshape(h, w).astype(np.float64) / maxval


def save_corpus(samples: list[Sample], root: Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "labels.txt", "w") as f:
        for s in samples:
            f.write(f"{s.ident}\t{s.latex}\n")
    for s in samples:
        write_pgm(root / f"{s.ident}.pgm", s.img)
        (root / f"{s.ident}.triples").write_text(format_triples(s.triples))


def load_corpus(root: Path, vocab: Vocabulary) -> list[Sample]:
    root = Path(root)
    samples = []
    for line in (root / "labels.txt").read_text().splitlines():
        if not line.strip():
            continue
        ident, latex = line.split("\t")
        triples = parse_triples((root / f"{ident}.triples").read_text(), vocab)
        tree, _ = delinearize(triples, strict=True)
        samples.append(
            Sample(
                ident=ident,
                img=read_pgm(root / f"{ident}.pgm"),
                tree=tree,
                latex=latex,
                triples=triples,
            )
        )
    return samples
