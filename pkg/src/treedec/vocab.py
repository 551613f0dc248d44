"""Symbol vocabulary and per-symbol relation classes.

Every symbol belongs to one or more classes (frac, sqrt, bigop, lim,
letter, number, bin); each class fixes which of the six spatial relations
the symbol may emit.  Symbols with several roles (e.g. ``e`` as a letter
and as a constant) get the OR of their class masks.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

START = "<s>"
END = "<eos>"

# Bit order: Right, Sup, Sub, Above, Below, Inside.
CLASS_MASKS: dict[str, tuple[int, ...]] = {
    "frac":   (1, 1, 0, 1, 1, 0),
    "sqrt":   (1, 0, 0, 0, 0, 1),
    "bigop":  (1, 1, 1, 1, 1, 0),
    "lim":    (1, 0, 0, 0, 1, 0),
    "letter": (1, 1, 1, 0, 0, 0),
    "number": (1, 1, 0, 0, 0, 0),
    "bin":    (1, 0, 0, 0, 0, 0),
}

# Classes whose ^/_ scripts denote limits (Above/Below) rather than Sup/Sub.
LIMIT_CLASSES = frozenset({"bigop", "lim"})


class UnknownSymbol(KeyError):
    pass


@dataclass(frozen=True)
class SymbolId:
    index: int
    glyph: str

    def __str__(self) -> str:
        return self.glyph


class Vocabulary:
    """Bijective glyph <-> index table with class assignments."""

    def __init__(self, class_table: list[tuple[str, str]]):
        self._glyphs: list[str] = []
        self._index: dict[str, int] = {}
        self._classes: dict[str, list[str]] = {}
        for glyph, cls in class_table:
            if cls not in CLASS_MASKS:
                raise ValueError(f"unknown symbol class {cls!r} for {glyph!r}")
            if glyph not in self._index:
                self._index[glyph] = len(self._glyphs)
                self._glyphs.append(glyph)
                self._classes[glyph] = []
            if cls not in self._classes[glyph]:
                self._classes[glyph].append(cls)

    def __len__(self) -> int:
        return len(self._glyphs)

    def __contains__(self, glyph: str) -> bool:
        return glyph in self._index

    @property
    def glyphs(self) -> list[str]:
        return list(self._glyphs)

    def symbol(self, glyph: str) -> SymbolId:
        try:
            return SymbolId(self._index[glyph], glyph)
        except KeyError:
            raise UnknownSymbol(glyph) from None

    def by_index(self, index: int) -> SymbolId:
        return SymbolId(index, self._glyphs[index])

    def classes(self, glyph: str) -> list[str]:
        try:
            return list(self._classes[glyph])
        except KeyError:
            raise UnknownSymbol(glyph) from None

    def mask_bits(self, glyph: str) -> tuple[int, ...]:
        """OR of the class masks of every role this glyph plays."""
        bits = (0,) * 6
        for cls in self.classes(glyph):
            bits = tuple(a | b for a, b in zip(bits, CLASS_MASKS[cls]))
        return bits

    def uses_limit_scripts(self, glyph: str) -> bool:
        return any(c in LIMIT_CLASSES for c in self.classes(glyph))

    @property
    def start(self) -> SymbolId:
        return self.symbol(START)

    @property
    def end(self) -> SymbolId:
        return self.symbol(END)


def parse_class_table(text: str) -> list[tuple[str, str]]:
    """One ``glyph SPACE class`` pair per line; '#' starts a comment."""
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        glyph, cls = line.split()
        rows.append((glyph, cls))
    return rows


def default_vocabulary() -> Vocabulary:
    text = (
        importlib.resources.files("treedec")
        .joinpath("resources/symbol_classes.txt")
        .read_text()
    )
    return Vocabulary(parse_class_table(text))
