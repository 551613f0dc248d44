"""Tree-decoder network: conv encoder, parent/child GRU decoders with
coverage attention, spatial-attention parent-position prediction with a
gate, syntax-masked relation head, the four losses, teacher-forced
training and greedy decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import grammar
from .grammar import DynamicMaskState, MaskVector, StaticMaskTable
from .numerics import (
    Adadelta,
    ParamStore,
    Tensor,
    adaptive_avg_pool,
    add,
    backward,
    bce_with_logits,
    concat,
    conv2d,
    cross_entropy,
    gru_cell,
    gru_params,
    kl_divergence,
    masked_cross_entropy,
    masked_softmax,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    take_row,
    tanh,
    transpose,
)
from .symtree import Relation, Triple, TripleSeq
from .vocab import SymbolId, Vocabulary


class BadDims(ValueError):
    pass


class StepTooEarly(ValueError):
    pass


@dataclass
class TrainConfig:
    """Model dimensions, loss weights, mask modes and ablation flags."""

    feat_dim: int = 64            # encoder output channels D
    hidden_dim: int = 256         # decoder hidden size n
    embed_dim: int = 128
    attn_dim: int = 128           # child/parent attention
    mem_dim: int = 128            # memory (position) attention
    cov_channels: int = 4
    cov_kernel: int = 11
    pool_h: int = 4
    pool_w: int = 32
    enc_channels: tuple[int, int] = (16, 32)
    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 0.1)
    spatial_info: bool = True
    static_mask: bool = True
    dynamic_mask: bool = True
    mask_mode: Literal["zero_logit", "neg_inf"] = "neg_inf"
    mask_combine: grammar.MaskCombine = "and_not"
    dynamic_key: grammar.DynamicKey = "instance"
    lr: float = 1.0
    lr_decay: float = 1.0         # multiplicative, per epoch
    clip_norm: float = 100.0      # global gradient norm cap; 0 disables
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if any(l < 0 for l in self.lambdas):
            raise ValueError("loss weights must be non-negative")
        if self.cov_kernel % 2 == 0:
            raise ValueError("coverage kernel size must be odd")

    STRIDE = 4  # encoder downsample factor (2 * 2 * 1)


@dataclass
class FeatureGrid:
    E: Tensor                 # (D, H', W')
    H: Tensor                 # (L, D) flattened view
    h_prime: int
    w_prime: int

    @property
    def L(self) -> int:
        return self.h_prime * self.w_prime


@dataclass
class StepOutput:
    order: int
    child_probs: np.ndarray                  # (S,)
    child_pred: int
    parent_scores: Optional[np.ndarray]      # (t-1,) in (0,1); None at t=1
    parent_pred: int
    rel_probs: Optional[np.ndarray]          # (6,); None at t=1
    rel_pred: Optional[int]
    gate: Optional[float]
    mask: Optional[MaskVector]
    parent_attention: np.ndarray             # (H', W')
    child_attention: np.ndarray              # (H', W')
    e_mem: Optional[np.ndarray] = None
    e_alpha: Optional[np.ndarray] = None
    e_position: Optional[np.ndarray] = None


@dataclass
class DecodeTrace:
    steps: list[StepOutput] = field(default_factory=list)
    truncated: bool = False


@dataclass
class LossBreakdown:
    l_child: float
    l_pos: float
    l_rel: float
    l_alpha: float
    total: float
    steps: int


class _Attender:
    """Coverage attention over one feature grid for one decode."""

    def __init__(self, model: "TreeDecoderModel", prefix: str, grid: FeatureGrid):
        self.m = model
        self.p = prefix
        self.grid = grid
        s = model.store
        self.hU = matmul(grid.H, transpose(s[f"{prefix}.Ua"]))
        self.cov_sum: Optional[Tensor] = None
        self.maps: list[Tensor] = []       # flattened (L,) attention tensors

    def step(self, query: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (a_map (H',W'), a_flat (L,), context (D,))."""
        s = self.m.store
        g = self.grid
        energy_in = add(self.hU, matmul(s[f"{self.p}.Wa"], query))
        if self.cov_sum is not None:
            cov = reshape(self.cov_sum, (1, g.h_prime, g.w_prime))
            feat = conv2d(cov, s[f"{self.p}.Kcov"], None, stride=1)
            feat = transpose(reshape(feat, (self.m.cfg.cov_channels, g.L)))
            energy_in = add(energy_in, matmul(feat, transpose(s[f"{self.p}.Uf"])))
        energy = matmul(tanh(energy_in), s[f"{self.p}.va"])
        a_flat = softmax(energy)
        ctx = matmul(a_flat, g.H)
        a_map = reshape(a_flat, (g.h_prime, g.w_prime))
        self.cov_sum = a_map if self.cov_sum is None else add(self.cov_sum, a_map)
        self.maps.append(a_flat)
        return a_map, a_flat, ctx


class _DecodeState:
    def __init__(self, model: "TreeDecoderModel", grid: FeatureGrid):
        self.grid = grid
        self.att_p = _Attender(model, "att_p", grid)
        self.att_c = _Attender(model, "att_c", grid)
        self.s_p = model.store["s0_p"]
        self.s_c_hist: list[Tensor] = []       # child hidden per decoded node
        self.pool_c_hist: list[Tensor] = []    # pooled child attention maps
        self.a_c_flat_hist: list[Tensor] = []  # flattened child maps
        self.syms: list[SymbolId] = []         # decoded child symbols
        self.dyn = DynamicMaskState(keying=model.cfg.dynamic_key)
        self.t = 0


class TreeDecoderModel:
    def __init__(
        self,
        vocab: Vocabulary,
        mask_table: Optional[StaticMaskTable] = None,
        cfg: Optional[TrainConfig] = None,
    ):
        self.vocab = vocab
        self.cfg = cfg or TrainConfig()
        self.table = mask_table or StaticMaskTable(vocab)
        self.store = ParamStore(seed=self.cfg.seed)
        self._build_params()

    # ------------------------------------------------------------------
    def _build_params(self):
        c = self.cfg
        s = self.store
        S = len(self.vocab)
        s.add("embed", (S, c.embed_dim), fan_in=c.embed_dim)
        ch1, ch2 = c.enc_channels
        # conv biases are random, not zero: a zero bias leaves blank image
        # regions exactly on the ReLU kink, which breaks gradient checks
        s.add("enc.W1", (ch1, 1, 3, 3), fan_in=9)
        s.add("enc.b1", (ch1,), fan_in=9)
        s.add("enc.W2", (ch2, ch1, 3, 3), fan_in=9 * ch1)
        s.add("enc.b2", (ch2,), fan_in=9 * ch1)
        s.add("enc.W3", (c.feat_dim, ch2, 3, 3), fan_in=9 * ch2)
        s.add("enc.b3", (c.feat_dim,), fan_in=9 * ch2)
        for side in ("p", "c"):
            self.__dict__[f"gru1_{side}"] = gru_params(
                s, f"gru1_{side}", c.embed_dim, c.hidden_dim
            )
            self.__dict__[f"gru2_{side}"] = gru_params(
                s, f"gru2_{side}", c.feat_dim, c.hidden_dim
            )
            pre = f"att_{side}"
            s.add(f"{pre}.Wa", (c.attn_dim, c.hidden_dim), fan_in=c.hidden_dim)
            s.add(f"{pre}.Ua", (c.attn_dim, c.feat_dim), fan_in=c.feat_dim)
            s.add(f"{pre}.Uf", (c.attn_dim, c.cov_channels), fan_in=c.cov_channels)
            s.add(f"{pre}.va", (c.attn_dim,), fan_in=c.attn_dim)
            s.add(
                f"{pre}.Kcov",
                (c.cov_channels, 1, c.cov_kernel, c.cov_kernel),
                fan_in=c.cov_kernel**2,
            )
        s.add("s0_p", (c.hidden_dim,), zero=True)
        # child symbol head
        s.add("out.We", (c.embed_dim, c.embed_dim), fan_in=c.embed_dim)
        s.add("out.Wh", (c.embed_dim, c.hidden_dim), fan_in=c.hidden_dim)
        s.add("out.Wc", (c.embed_dim, c.feat_dim), fan_in=c.feat_dim)
        s.add("out.Wout", (S, c.embed_dim), fan_in=c.embed_dim)
        s.add("out.bout", (S,), zero=True)
        # parent position module
        s.add("pos.Wmem", (c.mem_dim, c.hidden_dim), fan_in=c.hidden_dim)
        s.add("pos.Umem", (c.mem_dim, c.hidden_dim), fan_in=c.hidden_dim)
        s.add("pos.vmem", (c.mem_dim,), fan_in=c.mem_dim)
        pooled = c.pool_h * c.pool_w
        s.add("pos.Walpha", (c.mem_dim, pooled), fan_in=pooled)
        s.add("pos.Ualpha", (c.mem_dim, pooled), fan_in=pooled)
        s.add("pos.valpha", (c.mem_dim,), fan_in=c.mem_dim)
        s.add("pos.Wyg", (1, c.embed_dim), fan_in=c.embed_dim)
        s.add("pos.Usg", (1, c.hidden_dim), fan_in=c.hidden_dim)
        s.add("pos.bg", (1,), zero=True)
        # relation head
        s.add("rel.Wcp", (c.embed_dim, c.feat_dim), fan_in=c.feat_dim)
        s.add("rel.Wcc", (c.embed_dim, c.feat_dim), fan_in=c.feat_dim)
        s.add("rel.Wout", (6, c.embed_dim), fan_in=c.embed_dim)
        s.add("rel.bout", (6,), zero=True)

    def _embed(self, sym: SymbolId) -> Tensor:
        return take_row(self.store["embed"], sym.index)

    # ------------------------------------------------------------------
    def encode(self, img: np.ndarray) -> FeatureGrid:
        """Grayscale (H, W) image -> feature grid, downsampled by 4."""
        if img.ndim != 2:
            raise BadDims(f"expected 2-D grayscale image, got shape {img.shape}")
        h, w = img.shape
        if h % TrainConfig.STRIDE or w % TrainConfig.STRIDE:
            raise BadDims(f"image dims {img.shape} not divisible by {TrainConfig.STRIDE}")
        s = self.store
        x = Tensor(img[None, :, :])
        x = relu(conv2d(x, s["enc.W1"], s["enc.b1"], stride=2))
        x = relu(conv2d(x, s["enc.W2"], s["enc.b2"], stride=2))
        x = relu(conv2d(x, s["enc.W3"], s["enc.b3"], stride=1))
        d, hp, wp = x.shape
        flat = transpose(reshape(x, (d, hp * wp)))
        return FeatureGrid(E=x, H=flat, h_prime=hp, w_prime=wp)

    def begin_decode(self, grid: FeatureGrid) -> _DecodeState:
        return _DecodeState(self, grid)

    # ------------------------------------------------------------------
    def parent_decoder_step(
        self, prev_child: SymbolId, st: _DecodeState
    ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Returns (c_p, s_p, a_p map, a_p flat); appends to history."""
        s_hat = gru_cell(self._embed(prev_child), st.s_p, self.gru1_p)
        a_map, a_flat, c_p = st.att_p.step(s_hat)
        s_p = gru_cell(c_p, s_hat, self.gru2_p)
        st.s_p = s_p
        return c_p, s_p, a_map, a_flat

    def child_decoder_step(
        self, parent: SymbolId, s_p: Tensor, st: _DecodeState
    ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Mirror of the parent decoder with its own parameters."""
        s_hat = gru_cell(self._embed(parent), s_p, self.gru1_c)
        a_map, a_flat, c_c = st.att_c.step(s_hat)
        s_c = gru_cell(c_c, s_hat, self.gru2_c)
        return c_c, s_c, a_map, a_flat

    def predict_child(
        self, parent: SymbolId, s_c: Tensor, c_c: Tensor
    ) -> Tensor:
        s = self.store
        inner = add(
            add(matmul(s["out.We"], self._embed(parent)), matmul(s["out.Wh"], s_c)),
            matmul(s["out.Wc"], c_c),
        )
        return add(matmul(s["out.Wout"], inner), s["out.bout"])

    def predict_parent_position(
        self,
        s_p: Tensor,
        st: _DecodeState,
        prev_child: SymbolId,
        a_p_flat: Tensor,
    ) -> tuple[Tensor, Tensor, dict[str, Tensor]]:
        """Position logits over the t-1 previous child nodes.

        Returns (logits e_pos, scores G = sigmoid(e_pos), extras).
        """
        if not st.s_c_hist:
            raise StepTooEarly("no previous child nodes to point at")
        s = self.store
        c = self.cfg
        hist = concat(st.s_c_hist)
        hist = reshape(hist, (len(st.s_c_hist), c.hidden_dim))
        e_mem = matmul(
            tanh(add(matmul(hist, transpose(s["pos.Umem"])), matmul(s["pos.Wmem"], s_p))),
            s["pos.vmem"],
        )
        extras: dict[str, Tensor] = {"e_mem": e_mem}
        if not c.spatial_info:
            e_pos = e_mem
        else:
            pooled_p = reshape(
                adaptive_avg_pool(
                    reshape(a_p_flat, (st.grid.h_prime, st.grid.w_prime)),
                    c.pool_h,
                    c.pool_w,
                ),
                (c.pool_h * c.pool_w,),
            )
            pool_hist = concat(st.pool_c_hist)
            pool_hist = reshape(pool_hist, (len(st.pool_c_hist), c.pool_h * c.pool_w))
            e_alpha = matmul(
                tanh(
                    add(
                        matmul(pool_hist, transpose(s["pos.Ualpha"])),
                        matmul(s["pos.Walpha"], pooled_p),
                    )
                ),
                s["pos.valpha"],
            )
            gate = sigmoid(
                add(
                    add(
                        matmul(s["pos.Wyg"], self._embed(prev_child)),
                        matmul(s["pos.Usg"], st.s_c_hist[-1]),
                    ),
                    s["pos.bg"],
                )
            )
            e_pos = add(e_mem, mul(gate, e_alpha))
            extras.update(e_alpha=e_alpha, gate=gate)
        extras["e_pos"] = e_pos
        return e_pos, sigmoid(e_pos), extras

    def current_mask(self, parent_pos: int, parent_sym: SymbolId, st: _DecodeState) -> MaskVector:
        c = self.cfg
        stat = self.table.row(parent_sym) if c.static_mask else grammar.ALL_ONES
        dyn = st.dyn.row(parent_pos, parent_sym) if c.dynamic_mask else (0,) * 6
        if c.mask_combine == "xor":
            return tuple(a ^ b for a, b in zip(stat, dyn))  # type: ignore[return-value]
        return tuple(a & (1 - b) for a, b in zip(stat, dyn))  # type: ignore[return-value]

    def predict_relation(
        self, c_p: Tensor, c_c: Tensor, mask: MaskVector
    ) -> tuple[Tensor, Tensor]:
        """Returns (raw logits, masked probabilities)."""
        s = self.store
        inner = add(matmul(s["rel.Wcp"], c_p), matmul(s["rel.Wcc"], c_c))
        logits = add(matmul(s["rel.Wout"], inner), s["rel.bout"])
        return logits, masked_softmax(logits, mask, self.cfg.mask_mode)

    # ------------------------------------------------------------------
    def _targets_with_end(self, triples: TripleSeq) -> list[Triple]:
        """Append the end-marker triple: parented on the last decoded node
        with a Right relation (always free in depth-first order)."""
        last = triples[-1].order
        end = Triple(self.vocab.end, last + 1, last, Relation.Right)
        return list(triples) + [end]

    def forward_teacher(
        self, img: np.ndarray, triples: TripleSeq
    ) -> tuple[dict[str, Tensor], DecodeTrace]:
        """Teacher-forced forward pass; returns loss tensors and a trace."""
        grid = self.encode(img)
        st = self.begin_decode(grid)
        targets = self._targets_with_end(triples)
        zero = Tensor(0.0)
        l_child, l_pos, l_rel, l_alpha = zero, zero, zero, zero
        trace = DecodeTrace()
        prev_child = self.vocab.start
        for t, tgt in enumerate(targets, start=1):
            st.t = t
            c_p, s_p, a_p_map, a_p_flat = self.parent_decoder_step(prev_child, st)
            out = StepOutput(
                order=t,
                child_probs=np.empty(0),
                child_pred=-1,
                parent_scores=None,
                parent_pred=tgt.parent_pos,
                rel_probs=None,
                rel_pred=None,
                gate=None,
                mask=None,
                parent_attention=a_p_map.data.copy(),
                child_attention=np.empty(0),
            )
            if t >= 2:
                e_pos, scores, extras = self.predict_parent_position(
                    s_p, st, prev_child, a_p_flat
                )
                target_vec = np.zeros(t - 1)
                target_vec[tgt.parent_pos - 1] = 1.0
                l_pos = add(l_pos, bce_with_logits(e_pos, target_vec))
                out.parent_scores = scores.data.copy()
                out.e_mem = extras["e_mem"].data.copy()
                out.e_position = extras["e_pos"].data.copy()
                if "e_alpha" in extras:
                    out.e_alpha = extras["e_alpha"].data.copy()
                    out.gate = float(extras["gate"].data[0])
                # attention self-regularization against the child map
                # recorded when the true parent was generated; gradient
                # flows through both maps so backprop matches the loss
                ref = st.a_c_flat_hist[tgt.parent_pos - 1]
                l_alpha = add(l_alpha, kl_divergence(ref, a_p_flat))
            parent_sym = (
                self.vocab.start if tgt.parent_pos == 0 else targets[tgt.parent_pos - 1].child
            )
            c_c, s_c, a_c_map, a_c_flat = self.child_decoder_step(parent_sym, s_p, st)
            logits_c = self.predict_child(parent_sym, s_c, c_c)
            l_child = add(l_child, cross_entropy(logits_c, tgt.child.index))
            out.child_probs = softmax(logits_c).data.copy()
            out.child_pred = int(np.argmax(out.child_probs))
            out.child_attention = a_c_map.data.copy()
            if t >= 2 and tgt.rel is not None:
                mask = self.current_mask(tgt.parent_pos, parent_sym, st)
                logits_r, p_rel = self.predict_relation(c_p, c_c, mask)
                l_rel = add(
                    l_rel,
                    masked_cross_entropy(logits_r, mask, int(tgt.rel), self.cfg.mask_mode),
                )
                out.rel_probs = p_rel.data.copy()
                out.rel_pred = int(np.argmax(p_rel.data))
                out.mask = mask
                st.dyn = st.dyn.record(tgt.parent_pos, parent_sym, tgt.rel)
            st.s_c_hist.append(s_c)
            st.a_c_flat_hist.append(a_c_flat)
            st.pool_c_hist.append(
                reshape(
                    adaptive_avg_pool(a_c_map, self.cfg.pool_h, self.cfg.pool_w),
                    (self.cfg.pool_h * self.cfg.pool_w,),
                )
            )
            st.syms.append(tgt.child)
            trace.steps.append(out)
            prev_child = tgt.child
        lams = self.cfg.lambdas
        total = add(
            add(add(mul(lams[0], l_child), mul(lams[1], l_pos)), mul(lams[2], l_rel)),
            mul(lams[3], l_alpha),
        )
        losses = {
            "l_child": l_child,
            "l_pos": l_pos,
            "l_rel": l_rel,
            "l_alpha": l_alpha,
            "total": total,
        }
        return losses, trace

    def attention_regularizer(
        self, child_maps: list[np.ndarray], parent_maps: list[Tensor], parents: list[int]
    ) -> Tensor:
        """Sum over steps of KL(child map at parent's step || parent map)."""
        out = Tensor(0.0)
        for a_p, pos in zip(parent_maps, parents):
            if pos <= 0:
                continue
            out = add(out, kl_divergence(child_maps[pos - 1], a_p))
        return out

    # ------------------------------------------------------------------
    def train_step(
        self,
        batch: list[tuple[np.ndarray, TripleSeq]],
        opt: Adadelta,
    ) -> LossBreakdown:
        """One Adadelta update over a batch; losses summed per sample,
        averaged over the batch for reporting."""
        acc = np.zeros(5)
        steps = 0
        self.store.zero_grad()
        for img, triples in batch:
            losses, _ = self.forward_teacher(img, triples)
            backward(losses["total"])
            acc += [
                losses["l_child"].item(),
                losses["l_pos"].item(),
                losses["l_rel"].item(),
                losses["l_alpha"].item(),
                losses["total"].item(),
            ]
            steps += len(triples) + 1
        if self.cfg.clip_norm > 0:
            self.store.clip_grad_norm(self.cfg.clip_norm)
        opt.step()
        n = len(batch)
        return LossBreakdown(
            l_child=acc[0] / n,
            l_pos=acc[1] / n,
            l_rel=acc[2] / n,
            l_alpha=acc[3] / n,
            total=acc[4] / n,
            steps=steps,
        )

    # ------------------------------------------------------------------
    def greedy_decode(
        self, img: np.ndarray, max_steps: int = 64
    ) -> tuple[TripleSeq, DecodeTrace]:
        grid = self.encode(img)
        st = self.begin_decode(grid)
        trace = DecodeTrace()
        seq: TripleSeq = []
        prev_child = self.vocab.start
        for t in range(1, max_steps + 1):
            st.t = t
            c_p, s_p, a_p_map, a_p_flat = self.parent_decoder_step(prev_child, st)
            gate = None
            scores_np: Optional[np.ndarray] = None
            if t == 1:
                parent_pos = 0
                parent_sym = self.vocab.start
                mask: Optional[MaskVector] = None
            else:
                _, scores, extras = self.predict_parent_position(
                    s_p, st, prev_child, a_p_flat
                )
                scores_np = scores.data.copy()
                if "gate" in extras:
                    gate = float(extras["gate"].data[0])
                parent_pos, mask = self._pick_parent(scores_np, st)
                if parent_pos is None:
                    trace.truncated = True
                    break
                parent_sym = st.syms[parent_pos - 1]
            c_c, s_c, a_c_map, a_c_flat = self.child_decoder_step(parent_sym, s_p, st)
            logits_c = self.predict_child(parent_sym, s_c, c_c)
            p_child = softmax(logits_c).data
            child_idx = int(np.argmax(p_child))
            child_sym = self.vocab.by_index(child_idx)
            rel: Optional[Relation] = None
            rel_probs = None
            if t >= 2:
                _, p_rel = self.predict_relation(c_p, c_c, mask)
                rel_probs = p_rel.data.copy()
                rel = Relation(int(np.argmax(rel_probs)))
                st.dyn = st.dyn.record(parent_pos, parent_sym, rel)
            trace.steps.append(
                StepOutput(
                    order=t,
                    child_probs=p_child.copy(),
                    child_pred=child_idx,
                    parent_scores=scores_np,
                    parent_pred=parent_pos,
                    rel_probs=rel_probs,
                    rel_pred=None if rel is None else int(rel),
                    gate=gate,
                    mask=mask,
                    parent_attention=a_p_map.data.copy(),
                    child_attention=a_c_map.data.copy(),
                )
            )
            if child_sym.glyph == self.vocab.end.glyph:
                return seq, trace
            seq.append(Triple(child_sym, t, parent_pos, rel))
            st.s_c_hist.append(s_c)
            st.a_c_flat_hist.append(a_c_flat)
            st.pool_c_hist.append(
                reshape(
                    adaptive_avg_pool(a_c_map, self.cfg.pool_h, self.cfg.pool_w),
                    (self.cfg.pool_h * self.cfg.pool_w,),
                )
            )
            st.syms.append(child_sym)
            prev_child = child_sym
        else:
            trace.truncated = True
        return seq, trace

    def _pick_parent(
        self, scores: np.ndarray, st: _DecodeState
    ) -> tuple[Optional[int], Optional[MaskVector]]:
        """Highest-scoring previous node that still has a legal relation.

        Plain argmax can point at a node whose relations are exhausted,
        which would leave the masked softmax with no legal output; skip
        such candidates instead of emitting an ungrammatical triple.
        """
        for idx in np.argsort(-scores, kind="stable"):
            pos = int(idx) + 1
            mask = self.current_mask(pos, st.syms[pos - 1], st)
            if any(mask):
                return pos, mask
        return None, None

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        self.store.save(path)

    def load(self, path) -> None:
        self.store.load(path)
