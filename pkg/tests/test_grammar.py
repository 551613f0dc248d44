"""Static mask table, dynamic used-relation state, and replay validation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st


from treedec.grammar import (
    ALL_ONES,
    DynamicMaskState,
    StaticMaskTable,
    dynamic_mask,
    mask_from_string,
    mask_to_string,
    or_combine,
    static_mask,
    step_mask,
    validate_triples,
)
from treedec.symtree import Relation, Triple, linearize, parse_latex

CLASS_EXPECTED = {
    "\\frac": "110110",
    "\\sqrt": "100001",
    "\\sum": "111110",
    "\\prod": "111110",
    "\\lim": "100010",
    "x": "111000",
    "2": "110000",
    "+": "100000",
    "e": "111000",
}


def test_static_rows_match_class_definitions(table):
    for glyph, bits in CLASS_EXPECTED.items():
        assert mask_to_string(table.row(glyph)) == bits, glyph


def test_row_accepts_symbol_or_glyph(vocab, table):
    assert table.row("x") == table.row(vocab.symbol("x"))
    assert static_mask("x", table) == table.row("x")
    with pytest.raises(KeyError):
        table.row("Q")


def test_mask_string_round_trip():
    for m in ((1, 1, 0, 1, 1, 0), (0, 0, 0, 0, 0, 0), ALL_ONES):
        assert mask_from_string(mask_to_string(m)) == m
    with pytest.raises(ValueError):
        mask_from_string("11011")
    with pytest.raises(ValueError):
        mask_from_string("11011x")


def test_table_dump_load_round_trip(vocab, table):
    loaded = StaticMaskTable.load(table.dump(), vocab)
    assert (loaded.rows == table.rows).all()


def test_table_load_requires_every_symbol(vocab, table):
    text = "\n".join(table.dump().splitlines()[:-1])
    with pytest.raises(ValueError):
        StaticMaskTable.load(text, vocab)


def test_table_rows_are_read_only(table):
    with pytest.raises(ValueError):
        table.rows[0, 0] = 1


def test_or_combine():
    assert or_combine([(1, 0, 0, 0, 0, 0), (0, 1, 0, 0, 0, 0)]) == (1, 1, 0, 0, 0, 0)
    assert or_combine([(1, 0, 1, 0, 1, 0)]) == (1, 0, 1, 0, 1, 0)
    with pytest.raises(ValueError):
        or_combine([])


def test_dynamic_state_is_functional_and_saturating(vocab):
    x = vocab.symbol("x")
    s0 = DynamicMaskState()
    s1 = s0.record(1, x, Relation.Right)
    assert s0.row(1, x) == (0, 0, 0, 0, 0, 0)
    assert s1.row(1, x) == (1, 0, 0, 0, 0, 0)
    s2 = s1.record(1, x, Relation.Right)
    assert s2.row(1, x) == s1.row(1, x)
    assert s2.popcount() == 1
    assert s2.step == 2


def test_dynamic_keying_instance_vs_symbol(vocab):
    x = vocab.symbol("x")
    inst = DynamicMaskState(keying="instance").record(1, x, Relation.Sup)
    # another instance of the same glyph at position 3 is unaffected
    assert inst.row(3, x) == (0, 0, 0, 0, 0, 0)
    sym = DynamicMaskState(keying="symbol").record(1, x, Relation.Sup)
    # symbol keying shares history across instances
    assert sym.row(3, x) == (0, 1, 0, 0, 0, 0)
    assert dynamic_mask(3, x, sym) == sym.row(3, x)


def test_step_mask_and_not_removes_used(vocab, table):
    frac = vocab.symbol("\\frac")
    st_ = DynamicMaskState().record(1, frac, Relation.Above)
    m = step_mask(1, frac, table, st_)
    assert mask_to_string(m) == "110010"


def test_step_mask_xor_can_reenable_forbidden_bit(vocab, table):
    plus = vocab.symbol("+")
    st_ = DynamicMaskState().record(1, plus, Relation.Sup)  # statically illegal
    assert step_mask(1, plus, table, st_, "and_not") == (1, 0, 0, 0, 0, 0)
    assert step_mask(1, plus, table, st_, "xor") == (1, 1, 0, 0, 0, 0)


def test_step_mask_combines_agree_when_history_is_legal(vocab, table):
    frac = vocab.symbol("\\frac")
    st_ = DynamicMaskState()
    for rel in (Relation.Above, Relation.Below):
        st_ = st_.record(1, frac, rel)
    assert step_mask(1, frac, table, st_, "and_not") == step_mask(1, frac, table, st_, "xor")


def test_validate_clean_sequence(vocab, table):
    seq = linearize(parse_latex("\\frac{x^{2}}{1}+\\sqrt{y}", vocab))
    report = validate_triples(seq, table)
    assert not report
    assert report.dump() == "ok\n"


def test_validate_flags_static_violation(vocab, table):
    plus = vocab.symbol("+")
    x = vocab.symbol("x")
    seq = [Triple(plus, 1, 0, None), Triple(x, 2, 1, Relation.Sup)]
    report = validate_triples(seq, table)
    assert len(report) == 1
    assert "IllegalRelation" in report.dump()


def test_validate_flags_repeated_relation(vocab, table):
    x = vocab.symbol("x")
    y = vocab.symbol("y")
    seq = [
        Triple(x, 1, 0, None),
        Triple(y, 2, 1, Relation.Sup),
        Triple(y, 3, 1, Relation.Sup),
    ]
    report = validate_triples(seq, table)
    assert len(report) == 1


def test_validate_flags_dangling_parent(vocab, table):
    x = vocab.symbol("x")
    seq = [Triple(x, 1, 0, None), Triple(x, 3, 2, Relation.Right)]
    report = validate_triples(seq, table)
    assert len(report) == 1
    assert "DanglingParent" in report.dump()


def test_validate_symbol_keying_couples_instances(vocab, table):
    x = vocab.symbol("x")
    y = vocab.symbol("y")
    # two different x nodes each take a Sup child: fine per instance,
    # a repeat under symbol keying
    seq = [
        Triple(x, 1, 0, None),
        Triple(x, 2, 1, Relation.Right),
        Triple(y, 3, 1, Relation.Sup),
        Triple(y, 4, 2, Relation.Sup),
    ]
    assert not validate_triples(seq, table, keying="instance")
    assert len(validate_triples(seq, table, keying="symbol")) == 1


REL_LIST = list(Relation)


@settings(max_examples=60, deadline=None)
@given(
    glyph=st.sampled_from(["x", "2", "+", "\\frac", "\\sqrt", "\\sum", "\\lim", "e"]),
    history=st.lists(st.sampled_from(REL_LIST), max_size=6),
    keying=st.sampled_from(["instance", "symbol"]),
)
def test_step_mask_properties(vocab, table, glyph, history, keying):
    sym = vocab.symbol(glyph)
    state = DynamicMaskState(keying=keying)
    prev_pop = 0
    for rel in history:
        state = state.record(1, sym, rel)
        assert state.popcount() >= prev_pop  # monotone
        prev_pop = state.popcount()
    stat = table.row(sym)
    m = step_mask(1, sym, table, state, "and_not")
    for got, allowed in zip(m, stat):
        assert got <= allowed  # never enables a statically illegal bit
    for rel in history:
        assert m[rel] == 0 or not stat[rel]  # used bits stay removed
