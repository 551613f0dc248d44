"""Parsing, emission, linearization and the conversions between them."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treedec.data import GenGrammar, _gen_tree
from treedec.symtree import (
    DanglingParent,
    DuplicateRelation,
    IllegalRelation,
    ParseError,
    Relation,
    Triple,
    TreeError,
    UnbalancedBraces,
    check_tree,
    delinearize,
    format_triples,
    linearize,
    parse_latex,
    parse_triples,
    to_latex,
    tree_equal,
)
from treedec.vocab import UnknownSymbol

import random


def test_relation_bit_order():
    assert [r.name for r in sorted(Relation)] == [
        "Right", "Sup", "Sub", "Above", "Below", "Inside",
    ]
    assert Relation.Right == 0 and Relation.Inside == 5


def test_parse_simple_chain(vocab):
    tree = parse_latex("x+1", vocab)
    root = tree.root
    assert root.sym.glyph == "x"
    plus = root.child(Relation.Right)
    assert plus.sym.glyph == "+"
    assert plus.child(Relation.Right).sym.glyph == "1"
    assert len(tree) == 3


def test_parse_scripts_with_and_without_braces(vocab):
    a = parse_latex("x^{2}", vocab)
    b = parse_latex("x^2", vocab)
    assert tree_equal(a, b)
    assert a.root.child(Relation.Sup).sym.glyph == "2"
    c = parse_latex("x_{i}", vocab)
    assert c.root.child(Relation.Sub).sym.glyph == "i"


def test_parse_frac_and_sqrt(vocab):
    tree = parse_latex("\\frac{a}{b}", vocab)
    assert tree.root.child(Relation.Above).sym.glyph == "a"
    assert tree.root.child(Relation.Below).sym.glyph == "b"
    tree = parse_latex("\\sqrt{x+1}", vocab)
    assert tree.root.child(Relation.Inside).sym.glyph == "x"


def test_parse_empty_frac_branch(vocab):
    tree = parse_latex("\\frac{}{x}", vocab)
    assert tree.root.child(Relation.Above) is None
    assert tree.root.child(Relation.Below).sym.glyph == "x"
    assert to_latex(tree, vocab) == "\\frac{}{x}"


def test_limit_scripts_become_above_below(vocab):
    tree = parse_latex("\\sum_{i}^{n}x", vocab)
    assert tree.root.child(Relation.Below).sym.glyph == "i"
    assert tree.root.child(Relation.Above).sym.glyph == "n"
    assert tree.root.child(Relation.Right).sym.glyph == "x"
    lim = parse_latex("\\lim_{x}x", vocab)
    assert lim.root.child(Relation.Below).sym.glyph == "x"


def test_letter_scripts_stay_sup_sub(vocab):
    tree = parse_latex("x^{n}", vocab)
    assert tree.root.child(Relation.Sup) is not None
    assert tree.root.child(Relation.Above) is None


def test_unbalanced_braces(vocab):
    with pytest.raises(UnbalancedBraces):
        parse_latex("\\frac{a}{b", vocab)
    with pytest.raises(UnbalancedBraces):
        parse_latex("x}", vocab)


def test_parse_errors(vocab):
    with pytest.raises(ParseError):
        parse_latex("", vocab)
    with pytest.raises(ParseError):
        parse_latex("^{2}", vocab)
    with pytest.raises(UnknownSymbol):
        parse_latex("x+Q", vocab)


def test_illegal_relation_rejected(vocab):
    # bin symbols only emit Right
    with pytest.raises(IllegalRelation):
        parse_latex("+^{2}", vocab)
    # number symbols cannot take subscripts
    with pytest.raises(IllegalRelation):
        parse_latex("2_{i}", vocab)


def test_duplicate_relation_rejected(vocab):
    with pytest.raises(DuplicateRelation):
        parse_latex("x^{a}^{b}", vocab)


def test_e_has_combined_mask(vocab):
    # 'e' plays both letter and number roles, so scripts parse
    tree = parse_latex("e^{x}", vocab)
    assert tree.root.child(Relation.Sup).sym.glyph == "x"


def test_to_latex_command_letter_spacing(vocab):
    tree = parse_latex("\\alpha b", vocab)
    s = to_latex(tree, vocab)
    assert s == "\\alpha b"
    assert tree_equal(parse_latex(s, vocab), tree)


def test_to_latex_inverse_on_canonical_strings(vocab):
    for s in (
        "x+1",
        "\\frac{a}{b}",
        "\\sqrt{x}",
        "x_{i}^{2}",
        "\\sum^{n}_{i}x",
        "\\frac{x+1}{2}=y",
        "\\sin x",
    ):
        tree = parse_latex(s, vocab)
        assert tree_equal(parse_latex(to_latex(tree, vocab), vocab), tree)


def test_linearize_orders_and_priority(vocab):
    tree = parse_latex("\\frac{a}{b}+c", vocab)
    seq = linearize(tree)
    assert [t.order for t in seq] == [1, 2, 3, 4, 5]
    assert seq[0].parent_pos == 0 and seq[0].rel is None
    # Above before Below before Right
    assert [t.rel for t in seq[1:]] == [
        Relation.Above, Relation.Below, Relation.Right, Relation.Right,
    ]
    assert [t.parent_pos for t in seq[1:]] == [1, 1, 1, 4]


def test_linearize_parent_always_before_child(vocab):
    tree = parse_latex("\\frac{x^{2}}{\\sqrt{y}}+z", vocab)
    for t in linearize(tree):
        assert t.parent_pos < t.order


def test_triple_rejects_forward_parent(vocab):
    x = vocab.symbol("x")
    with pytest.raises(TreeError):
        Triple(x, 2, 2, Relation.Right)
    with pytest.raises(TreeError):
        Triple(x, 1, 3, Relation.Right)


def test_delinearize_strict_round_trip(vocab):
    tree = parse_latex("\\sum_{i}^{n}x^{2}", vocab)
    rebuilt, violations = delinearize(linearize(tree), strict=True)
    assert not violations
    assert tree_equal(rebuilt, tree)


def test_delinearize_strict_raises(vocab):
    x = vocab.symbol("x")
    seq = [
        Triple(x, 1, 0, None),
        Triple(x, 2, 1, Relation.Right),
        Triple(x, 3, 1, Relation.Right),
    ]
    with pytest.raises(DuplicateRelation):
        delinearize(seq, strict=True)
    with pytest.raises(DanglingParent):
        delinearize([Triple(x, 1, 0, None), Triple(x, 3, 2, Relation.Right)], strict=True)


def test_delinearize_lenient_keeps_first_interpretation(vocab):
    x = vocab.symbol("x")
    y = vocab.symbol("y")
    seq = [
        Triple(x, 1, 0, None),
        Triple(y, 2, 1, Relation.Right),
        Triple(x, 3, 1, Relation.Right),  # duplicate Right on node 1
    ]
    tree, violations = delinearize(seq, strict=False)
    assert len(violations) == 1
    assert violations[0].kind == "DuplicateRelation"
    assert tree.root.child(Relation.Right).sym.glyph == "y"


def test_delinearize_lenient_extra_root_and_missing_relation(vocab):
    x = vocab.symbol("x")
    seq = [Triple(x, 1, 0, None), Triple(x, 2, 0, None), Triple(x, 3, 1, None)]
    tree, violations = delinearize(seq, strict=False)
    assert {v.kind for v in violations} == {"ExtraRoot", "MissingRelation"}
    assert len(tree) == 1


def test_delinearize_empty_sequence(vocab):
    with pytest.raises(TreeError):
        delinearize([], strict=False)


def test_tree_equal_ignores_child_listing_order(vocab):
    a = parse_latex("\\frac{x}{y}", vocab)
    b = parse_latex("\\frac{x}{y}", vocab)
    b.root.children.reverse()
    assert tree_equal(a, b)
    c = parse_latex("\\frac{y}{x}", vocab)
    assert not tree_equal(a, c)


def test_triples_text_round_trip(vocab):
    tree = parse_latex("\\frac{a}{b}^{2}", vocab)
    seq = linearize(tree)
    text = format_triples(seq)
    assert text.splitlines()[0] == "1\t\\frac\t0\t-"
    back = parse_triples(text, vocab)
    assert back == seq


def test_parse_triples_rejects_bad_lines(vocab):
    with pytest.raises(TreeError):
        parse_triples("1\tx\t0\n", vocab)
    with pytest.raises(ValueError):
        parse_triples("1\tx\t0\tSideways\n", vocab)
    with pytest.raises(TreeError):
        parse_triples("\n\n", vocab)


def test_check_tree_catches_manual_corruption(vocab):
    tree = parse_latex("x+1", vocab)
    plus = tree.root.child(Relation.Right)
    plus.children.append((Relation.Sup, tree.root.child(Relation.Right)))
    with pytest.raises(IllegalRelation):
        check_tree(tree, vocab)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_generated_tree_round_trips(vocab, seed):
    tree = _gen_tree(GenGrammar(vocab), random.Random(seed))
    seq = linearize(tree)
    rebuilt, violations = delinearize(seq, strict=True)
    assert not violations
    assert tree_equal(rebuilt, tree)
    latex = to_latex(tree, vocab)
    assert tree_equal(parse_latex(latex, vocab), tree)
    assert to_latex(rebuilt, vocab) == latex
