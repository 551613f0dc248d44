"""Syntax-mask engine: static mask table, dynamic used-relation state,
their per-step combination, and triple-sequence validation.

Two rules are enforced: each symbol may only emit the relations its class
permits (static mask), and no parent may repeat a relation within one
decode (dynamic mask).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional

import numpy as np

from .symtree import Relation, TripleSeq, Violation
from .vocab import SymbolId, UnknownSymbol, Vocabulary

MaskVector = tuple[int, int, int, int, int, int]

ALL_ONES: MaskVector = (1, 1, 1, 1, 1, 1)


def mask_to_string(m: Iterable[int]) -> str:
    return "".join(str(int(b)) for b in m)


def mask_from_string(s: str) -> MaskVector:
    if len(s) != 6 or set(s) - {"0", "1"}:
        raise ValueError(f"bad mask string {s!r}")
    return tuple(int(c) for c in s)  # type: ignore[return-value]


class StaticMaskTable:
    """S x 6 binary table, one row per vocabulary symbol."""

    def __init__(self, vocab: Vocabulary, rows: Optional[np.ndarray] = None):
        self.vocab = vocab
        if rows is None:
            rows = np.array(
                [vocab.mask_bits(g) for g in vocab.glyphs], dtype=np.int8
            )
        rows = np.asarray(rows, dtype=np.int8)
        if rows.shape != (len(vocab), 6):
            raise ValueError(f"mask table shape {rows.shape} != ({len(vocab)}, 6)")
        self.rows = rows
        self.rows.setflags(write=False)

    def row(self, sym: SymbolId | str) -> MaskVector:
        glyph = sym if isinstance(sym, str) else sym.glyph
        if glyph not in self.vocab:
            raise UnknownSymbol(glyph)
        idx = self.vocab.symbol(glyph).index
        return tuple(int(b) for b in self.rows[idx])  # type: ignore[return-value]

    def dump(self) -> str:
        lines = [
            f"{g} {mask_to_string(self.rows[i])}"
            for i, g in enumerate(self.vocab.glyphs)
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str, vocab: Vocabulary) -> "StaticMaskTable":
        rows = np.zeros((len(vocab), 6), dtype=np.int8)
        seen = set()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            glyph, bits = line.split()
            idx = vocab.symbol(glyph).index
            rows[idx] = mask_from_string(bits)
            seen.add(idx)
        if len(seen) != len(vocab):
            missing = [g for g in vocab.glyphs if vocab.symbol(g).index not in seen]
            raise ValueError(f"mask table missing symbols: {missing}")
        return cls(vocab, rows)


def static_mask(sym: SymbolId | str, table: StaticMaskTable) -> MaskVector:
    return table.row(sym)


def or_combine(masks: list[MaskVector]) -> MaskVector:
    if not masks:
        raise ValueError("or_combine of empty list")
    out = masks[0]
    for m in masks[1:]:
        out = tuple(a | b for a, b in zip(out, m))  # type: ignore[assignment]
    return out


DynamicKey = Literal["instance", "symbol"]
MaskCombine = Literal["and_not", "xor"]


@dataclass(frozen=True)
class DynamicMaskState:
    """Used-relation bits, keyed either by decoded-node position (default)
    or by vocabulary symbol (instances of one glyph then
    share history).  Functional: ``record`` returns a new state.
    """

    keying: DynamicKey = "instance"
    used: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    step: int = 0

    def _key(self, parent_pos: int, parent_sym: SymbolId) -> int:
        return parent_sym.index if self.keying == "symbol" else parent_pos

    def row(self, parent_pos: int, parent_sym: SymbolId) -> MaskVector:
        k = self._key(parent_pos, parent_sym)
        return tuple(
            1 if (k, r) in self.used else 0 for r in range(6)
        )  # type: ignore[return-value]

    def record(
        self, parent_pos: int, parent_sym: SymbolId, rel: Relation
    ) -> "DynamicMaskState":
        # saturating: recording an already-set bit is a no-op
        k = self._key(parent_pos, parent_sym)
        return DynamicMaskState(
            keying=self.keying,
            used=self.used | {(k, int(rel))},
            step=self.step + 1,
        )

    def popcount(self) -> int:
        return len(self.used)


def dynamic_mask(
    parent_pos: int, parent_sym: SymbolId, state: DynamicMaskState
) -> MaskVector:
    return state.row(parent_pos, parent_sym)


def step_mask(
    parent_pos: int,
    parent_sym: SymbolId,
    table: StaticMaskTable,
    state: DynamicMaskState,
    combine: MaskCombine = "and_not",
) -> MaskVector:
    """Relations currently legal for this parent: static minus used.

    With ``combine="xor"`` the two masks are combined by exclusive-or,
    which is equivalent as long as every recorded relation was statically
    legal, but can re-enable a forbidden bit otherwise.
    """
    s = table.row(parent_sym)
    d = state.row(parent_pos, parent_sym)
    if combine == "xor":
        return tuple(a ^ b for a, b in zip(s, d))  # type: ignore[return-value]
    return tuple(a & (1 - b) for a, b in zip(s, d))  # type: ignore[return-value]


@dataclass
class ViolationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def dump(self) -> str:
        if not self.violations:
            return "ok\n"
        return "\n".join(str(v) for v in self.violations) + "\n"


def validate_triples(
    seq: TripleSeq,
    table: StaticMaskTable,
    keying: DynamicKey = "instance",
    combine: MaskCombine = "and_not",
) -> ViolationReport:
    """Replay a triple sequence through the mask engine.

    Empty report iff every non-root triple's relation was legal under the
    combined mask at its emission step.
    """
    report = ViolationReport()
    state = DynamicMaskState(keying=keying)
    syms: dict[int, SymbolId] = {}
    for i, t in enumerate(seq):
        syms[t.order] = t.child
        if t.rel is None or t.parent_pos == 0:
            continue
        parent_sym = syms.get(t.parent_pos)
        if parent_sym is None:
            report.violations.append(
                Violation(i, "DanglingParent", f"position {t.parent_pos} unknown")
            )
            continue
        m = step_mask(t.parent_pos, parent_sym, table, state, combine)
        if not m[t.rel]:
            report.violations.append(
                Violation(
                    i,
                    "IllegalRelation",
                    f"relation {t.rel.name} illegal for parent "
                    f"{parent_sym.glyph!r} (mask {mask_to_string(m)})",
                )
            )
        state = state.record(t.parent_pos, parent_sym, t.rel)
    return report
