"""Expression trees: LaTeX <-> tree <-> triple-sequence conversions.

A math expression is a rooted tree whose edges carry one of six spatial
relations.  The decode target is the depth-first triple sequence
(child, parent position, relation); position 0 is a virtual root.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .vocab import SymbolId, UnknownSymbol, Vocabulary


class Relation(enum.IntEnum):
    """Six spatial relations, in fixed bit order."""

    Right = 0
    Sup = 1
    Sub = 2
    Above = 3
    Below = 4
    Inside = 5

    @classmethod
    def from_name(cls, name: str) -> "Relation":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown relation {name!r}") from None


# Deterministic sibling emission order for linearize/to_latex.
RELATION_PRIORITY = (
    Relation.Inside,
    Relation.Above,
    Relation.Below,
    Relation.Sub,
    Relation.Sup,
    Relation.Right,
)


class TreeError(ValueError):
    pass


class UnbalancedBraces(TreeError):
    def __init__(self, msg: str, pos: int):
        super().__init__(msg)
        self.pos = pos


class ParseError(TreeError):
    def __init__(self, msg: str, pos: int):
        super().__init__(msg)
        self.pos = pos


class IllegalRelation(TreeError):
    def __init__(self, glyph: str, rel: Relation, pos: int = -1):
        super().__init__(f"symbol {glyph!r} cannot emit relation {rel.name}")
        self.glyph = glyph
        self.rel = rel
        self.pos = pos


class DuplicateRelation(TreeError):
    def __init__(self, glyph: str, rel: Relation, pos: int = -1):
        super().__init__(f"symbol {glyph!r} already has a {rel.name} child")
        self.glyph = glyph
        self.rel = rel
        self.pos = pos


class DanglingParent(TreeError):
    pass


@dataclass
class TreeNode:
    sym: SymbolId
    order: int = 0
    children: list[tuple[Relation, "TreeNode"]] = field(default_factory=list)

    def child(self, rel: Relation) -> Optional["TreeNode"]:
        for r, c in self.children:
            if r == rel:
                return c
        return None

    def add_child(self, rel: Relation, node: "TreeNode") -> None:
        if self.child(rel) is not None:
            raise DuplicateRelation(self.sym.glyph, rel)
        self.children.append((rel, node))

    def walk(self) -> Iterator["TreeNode"]:
        yield self
        for _, c in self.children:
            yield from c.walk()


@dataclass
class ExprTree:
    root: TreeNode

    def nodes(self) -> list[TreeNode]:
        return list(self.root.walk())

    def __len__(self) -> int:
        return len(self.nodes())


@dataclass(frozen=True)
class Triple:
    child: SymbolId
    order: int
    parent_pos: int
    rel: Optional[Relation]  # None only for the root triple

    def __post_init__(self):
        if self.parent_pos >= self.order:
            raise TreeError(
                f"parent position {self.parent_pos} not before child order {self.order}"
            )


TripleSeq = list[Triple]


def check_tree(tree: ExprTree, vocab: Vocabulary) -> None:
    """Raise if any edge violates the static mask or repeats a relation."""
    for node in tree.root.walk():
        seen: set[Relation] = set()
        bits = vocab.mask_bits(node.sym.glyph)
        for rel, _child in node.children:
            if rel in seen:
                raise DuplicateRelation(node.sym.glyph, rel)
            seen.add(rel)
            if not bits[rel]:
                raise IllegalRelation(node.sym.glyph, rel)


# ---------------------------------------------------------------------------
# LaTeX parsing

_TOKEN_RE = re.compile(r"\\[a-zA-Z]+|\s+|.")


def _tokenize(s: str) -> list[tuple[str, int]]:
    toks = []
    for m in _TOKEN_RE.finditer(s):
        if m.group().isspace():
            continue
        toks.append((m.group(), m.start()))
    return toks


class _Parser:
    def __init__(self, s: str, vocab: Vocabulary):
        self.src = s
        self.toks = _tokenize(s)
        self.pos = 0
        self.vocab = vocab

    def peek(self) -> Optional[str]:
        return self.toks[self.pos][0] if self.pos < len(self.toks) else None

    def here(self) -> int:
        if self.pos < len(self.toks):
            return self.toks[self.pos][1]
        return len(self.src)

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input", len(self.src))
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.peek()
        if got != tok:
            if tok in "{}":
                raise UnbalancedBraces(f"expected {tok!r}, got {got!r}", self.here())
            raise ParseError(f"expected {tok!r}, got {got!r}", self.here())
        self.pos += 1

    def parse(self) -> ExprTree:
        chain = self.chain()
        if self.peek() is not None:
            if self.peek() == "}":
                raise UnbalancedBraces("unmatched '}'", self.here())
            raise ParseError(f"trailing input {self.peek()!r}", self.here())
        if chain is None:
            raise ParseError("empty expression", 0)
        return ExprTree(chain)

    def chain(self) -> Optional[TreeNode]:
        """A sequence of atoms linked by Right relations."""
        head: Optional[TreeNode] = None
        tail: Optional[TreeNode] = None
        while True:
            tok = self.peek()
            if tok is None or tok == "}":
                return head
            node = self.atom()
            if head is None:
                head = tail = node
            else:
                self._attach(tail, Relation.Right, node)
                tail = node

    def _attach(self, parent: TreeNode, rel: Relation, child: TreeNode) -> None:
        pos = self.here()
        bits = self.vocab.mask_bits(parent.sym.glyph)
        if not bits[rel]:
            raise IllegalRelation(parent.sym.glyph, rel, pos)
        if parent.child(rel) is not None:
            raise DuplicateRelation(parent.sym.glyph, rel, pos)
        parent.children.append((rel, child))

    def group(self) -> Optional[TreeNode]:
        """Braced group; returns None for the empty group ``{}``."""
        self.expect("{")
        inner = self.chain()
        self.expect("}")
        return inner

    def script_arg(self) -> Optional[TreeNode]:
        """Argument of ^ or _: a braced group or a single atom."""
        if self.peek() == "{":
            return self.group()
        return self.atom()

    def atom(self) -> TreeNode:
        pos = self.here()
        tok = self.next()
        if tok in ("^", "_", "{", "}"):
            raise ParseError(f"unexpected {tok!r}", pos)
        if tok not in self.vocab:
            raise UnknownSymbol(tok)
        node = TreeNode(self.vocab.symbol(tok))
        if tok == "\\frac":
            num = self.group()
            den = self.group()
            if num is not None:
                self._attach(node, Relation.Above, num)
            if den is not None:
                self._attach(node, Relation.Below, den)
        elif tok == "\\sqrt":
            rad = self.group()
            if rad is not None:
                self._attach(node, Relation.Inside, rad)
        limit = self.vocab.uses_limit_scripts(tok)
        while self.peek() in ("^", "_"):
            mark = self.next()
            if mark == "^":
                rel = Relation.Above if limit else Relation.Sup
            else:
                rel = Relation.Below if limit else Relation.Sub
            arg = self.script_arg()
            if arg is not None:
                self._attach(node, rel, arg)
        return node


def parse_latex(s: str, vocab: Vocabulary) -> ExprTree:
    """Parse the supported LaTeX subset into an expression tree."""
    tree = _Parser(s, vocab).parse()
    check_tree(tree, vocab)
    return tree


# ---------------------------------------------------------------------------
# LaTeX emission

_CMD_TAIL_RE = re.compile(r"\\[a-zA-Z]+$")


def _join(left: str, right: str) -> str:
    if right and _CMD_TAIL_RE.search(left) and right[0].isalpha():
        return left + " " + right
    return left + right


def to_latex(tree: ExprTree, vocab: Vocabulary) -> str:
    """Deterministic inverse of parse_latex for valid trees."""

    def emit_chain(node: TreeNode) -> str:
        out = emit_atom(node)
        nxt = node.child(Relation.Right)
        if nxt is not None:
            out = _join(out, emit_chain(nxt))
        return out

    def braced(node: Optional[TreeNode]) -> str:
        return "{" + (emit_chain(node) if node is not None else "") + "}"

    def emit_atom(node: TreeNode) -> str:
        glyph = node.sym.glyph
        limit = vocab.uses_limit_scripts(glyph)
        out = glyph
        if glyph == "\\sqrt":
            inner = node.child(Relation.Inside)
            if inner is not None:
                out += braced(inner)
        if glyph == "\\frac":
            out += braced(node.child(Relation.Above))
            out += braced(node.child(Relation.Below))
        elif limit:
            above = node.child(Relation.Above)
            below = node.child(Relation.Below)
            if above is not None:
                out += "^" + braced(above)
            if below is not None:
                out += "_" + braced(below)
        sub = node.child(Relation.Sub)
        sup = node.child(Relation.Sup)
        if sub is not None:
            out += "_" + braced(sub)
        if sup is not None:
            out += "^" + braced(sup)
        return out

    return emit_chain(tree.root)


# ---------------------------------------------------------------------------
# Triple sequences

def linearize(tree: ExprTree) -> TripleSeq:
    """Depth-first triples, siblings in relation-priority order.

    Node ``order`` fields are (re)assigned by emission rank, starting at 1;
    the root's parent is the virtual position 0.
    """
    triples: TripleSeq = []

    def visit(node: TreeNode, parent_pos: int, rel: Optional[Relation]) -> None:
        node.order = len(triples) + 1
        triples.append(Triple(node.sym, node.order, parent_pos, rel))
        by_rel = dict((r, c) for r, c in node.children)
        for r in RELATION_PRIORITY:
            if r in by_rel:
                visit(by_rel[r], node.order, r)

    visit(tree.root, 0, None)
    return triples


@dataclass
class Violation:
    step: int
    kind: str
    message: str

    def __str__(self) -> str:
        return f"step {self.step}: {self.kind}: {self.message}"


def delinearize(
    seq: TripleSeq, strict: bool = True
) -> tuple[ExprTree, list[Violation]]:
    """Rebuild the tree a triple sequence came from.

    Strict mode raises on any structural violation (used on ground truth).
    Lenient mode keeps the first consistent interpretation and reports the
    rest, so imperfect model output can still be scored.
    """
    if not seq:
        raise TreeError("empty triple sequence")
    violations: list[Violation] = []
    nodes: dict[int, TreeNode] = {}
    root: Optional[TreeNode] = None
    for i, t in enumerate(seq):
        node = TreeNode(t.child, order=t.order)
        if t.parent_pos == 0:
            if root is None:
                root = node
                nodes[t.order] = node
            else:
                v = Violation(i, "ExtraRoot", f"second root {t.child.glyph!r}")
                if strict:
                    raise TreeError(str(v))
                violations.append(v)
            continue
        parent = nodes.get(t.parent_pos)
        if parent is None:
            v = Violation(
                i, "DanglingParent", f"parent position {t.parent_pos} not decoded"
            )
            if strict:
                raise DanglingParent(str(v))
            violations.append(v)
            continue
        if t.rel is None:
            v = Violation(i, "MissingRelation", "non-root triple without relation")
            if strict:
                raise TreeError(str(v))
            violations.append(v)
            continue
        if parent.child(t.rel) is not None:
            v = Violation(
                i,
                "DuplicateRelation",
                f"{parent.sym.glyph!r} already has a {t.rel.name} child",
            )
            if strict:
                raise DuplicateRelation(parent.sym.glyph, t.rel)
            violations.append(v)
            continue
        parent.children.append((t.rel, node))
        nodes[t.order] = node
    if root is None:
        raise TreeError("sequence has no root triple")
    return ExprTree(root), violations


def tree_equal(a: ExprTree, b: ExprTree) -> bool:
    """Structural equality on labels and relations, ignoring decode order."""

    def eq(x: TreeNode, y: TreeNode) -> bool:
        if x.sym.glyph != y.sym.glyph or len(x.children) != len(y.children):
            return False
        ys = dict((r, c) for r, c in y.children)
        for r, c in x.children:
            if r not in ys or not eq(c, ys[r]):
                return False
        return True

    return eq(a.root, b.root)


# ---------------------------------------------------------------------------
# Text serialization: one triple per line, `order TAB glyph TAB parent TAB rel`

def format_triples(seq: TripleSeq) -> str:
    lines = []
    for t in seq:
        rel = t.rel.name if t.rel is not None else "-"
        lines.append(f"{t.order}\t{t.child.glyph}\t{t.parent_pos}\t{rel}")
    return "\n".join(lines) + "\n"


def parse_triples(text: str, vocab: Vocabulary) -> TripleSeq:
    seq: TripleSeq = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise TreeError(f"line {lineno}: expected 4 tab-separated fields")
        order_s, glyph, parent_s, rel_s = parts
        rel = None if rel_s == "-" else Relation.from_name(rel_s)
        seq.append(Triple(vocab.symbol(glyph), int(order_s), int(parent_s), rel))
    if not seq:
        raise TreeError("no triples in input")
    return seq
