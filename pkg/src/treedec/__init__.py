"""Grammar-constrained tree decoder for handwritten math expressions:
tree/triple/LaTeX conversions, syntax-mask engine, and a trainable
toy-scale neural decoder with spatial-attention parent prediction."""

from .grammar import (
    DynamicMaskState,
    StaticMaskTable,
    dynamic_mask,
    or_combine,
    static_mask,
    step_mask,
    validate_triples,
)
from .model import DecodeTrace, TrainConfig, TreeDecoderModel
from .symtree import (
    ExprTree,
    Relation,
    Triple,
    TripleSeq,
    delinearize,
    linearize,
    parse_latex,
    to_latex,
    tree_equal,
)
from .vocab import SymbolId, Vocabulary, default_vocabulary

__version__ = "0.1.0"

__all__ = [
    "DecodeTrace",
    "DynamicMaskState",
    "ExprTree",
    "Relation",
    "StaticMaskTable",
    "SymbolId",
    "TrainConfig",
    "TreeDecoderModel",
    "Triple",
    "TripleSeq",
    "Vocabulary",
    "default_vocabulary",
    "delinearize",
    "dynamic_mask",
    "linearize",
    "or_combine",
    "parse_latex",
    "static_mask",
    "step_mask",
    "to_latex",
    "tree_equal",
    "validate_triples",
]
