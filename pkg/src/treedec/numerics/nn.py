"""Recurrent / attention building blocks on top of the autodiff ops."""

from __future__ import annotations

from typing import Literal, Sequence

import numpy as np

from .autodiff import (
    ShapeMismatch,
    Tensor,
    add,
    cross_entropy,
    matmul,
    mul,
    sigmoid,
    softmax,
    tanh,
)
from .params import ParamStore

MaskMode = Literal["zero_logit", "neg_inf"]

NEG_INF = -1e9


class AllMasked(ValueError):
    pass


def gru_params(
    store: ParamStore, prefix: str, in_dim: int, hid_dim: int
) -> dict[str, Tensor]:
    p = {}
    for gate in ("z", "r", "h"):
        p[f"W{gate}"] = store.add(f"{prefix}.W{gate}", (hid_dim, in_dim), fan_in=in_dim)
        p[f"U{gate}"] = store.add(f"{prefix}.U{gate}", (hid_dim, hid_dim), fan_in=hid_dim)
        p[f"b{gate}"] = store.add(f"{prefix}.b{gate}", (hid_dim,), zero=True)
    return p


def gru_cell(x: Tensor, h_prev: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Standard GRU recurrence: update and reset gates plus candidate."""
    if x.shape != (p["Wz"].shape[1],) or h_prev.shape != (p["Uz"].shape[1],):
        raise ShapeMismatch(
            f"gru_cell got x{x.shape}, h{h_prev.shape}, "
            f"expects x({p['Wz'].shape[1]},), h({p['Uz'].shape[1]},)"
        )
    z = sigmoid(add(add(matmul(p["Wz"], x), matmul(p["Uz"], h_prev)), p["bz"]))
    r = sigmoid(add(add(matmul(p["Wr"], x), matmul(p["Ur"], h_prev)), p["br"]))
    hbar = tanh(add(add(matmul(p["Wh"], x), matmul(p["Uh"], mul(r, h_prev))), p["bh"]))
    return add(mul(1.0 - z, h_prev), mul(z, hbar))


def _masked_logits(
    logits: Tensor, mask: Sequence[int], mode: MaskMode
) -> Tensor:
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != logits.shape:
        raise ShapeMismatch(f"mask shape {m.shape} vs logits {logits.shape}")
    if not m.any():
        raise AllMasked("every logit is masked out")
    if mode == "zero_logit":
        # zero the masked logits before the softmax, which
        # leaves forbidden entries with probability exp(0)/Z, not 0
        return mul(logits, m)
    return add(logits, np.where(m > 0, 0.0, NEG_INF))


def masked_softmax(
    logits: Tensor, mask: Sequence[int], mode: MaskMode = "neg_inf"
) -> Tensor:
    return softmax(_masked_logits(logits, mask, mode))


def masked_cross_entropy(
    logits: Tensor, mask: Sequence[int], target: int, mode: MaskMode = "neg_inf"
) -> Tensor:
    return cross_entropy(_masked_logits(logits, mask, mode), target)
