"""Rank-aware tag decoder.

Tags are generated as one sequence ``[BOS, tag 1, BOS, tag 2, ...]``. Every
token carries the index ``j`` of the tag it belongs to. A learned rank
embedding of ``j`` is added to the token embedding, and the memory words of
the clusters around rank ``j`` (the focused clusters) get the same rank
embedding while all other words get the rank-0 embedding. The output
distribution mixes a vocabulary softmax with a pointer distribution over
memory words.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cluster_rank import RankedMemory
from .corpus import BOS, PAD, RESERVED, UNK
from .layers import FeedForward, MultiHeadAttention, sinusoidal_positions

PROB_EPS = 1e-12
MASS_EPS = 1e-8
BOS_TOKEN = RESERVED[BOS]


@dataclass
class TagSequence:
    ids: list[int]
    tokens: list[str]
    tag_index: list[int]  # j, 1-based
    position: list[int]  # q within the tag; 0 is the BOS

    def __len__(self) -> int:
        return len(self.ids)


def prepare_targets(gold_tags: Sequence[Sequence[str]], to_id: Callable[[str], int]) -> TagSequence:
    """Concatenate tags into ``[BOS; Y_1; BOS; Y_2; ...]`` with per-token (j, q)."""
    if not gold_tags:
        raise ValueError("need at least one tag")
    ids, tokens, tag_index, position = [], [], [], []
    for j, tag in enumerate(gold_tags, start=1):
        if not tag:
            raise ValueError(f"tag {j} is empty")
        for q, tok in enumerate([BOS_TOKEN, *tag]):
            ids.append(BOS if q == 0 else to_id(tok))
            tokens.append(tok)
            tag_index.append(j)
            position.append(q)
    return TagSequence(ids, tokens, tag_index, position)


def segment_tags(tokens: Sequence, bos=BOS_TOKEN) -> list[list]:
    """Split a BOS-delimited sequence back into its non-empty tags."""
    tags, current = [], None
    for tok in tokens:
        if tok == bos:
            if current:
                tags.append(current)
            current = []
        else:
            if current is None:
                current = []
            current.append(tok)
    if current:
        tags.append(current)
    return tags


def tag_indices(input_ids: Sequence[int], max_tags: int) -> list[int]:
    """Tag index of each decoder input: the number of BOS tokens seen so far, capped."""
    out, count = [], 0
    for tok in input_ids:
        count += tok == BOS
        out.append(min(max(count, 1), max_tags))
    return out


@dataclass(frozen=True)
class FocSpec:
    tag_index: int
    n_focused: int
    n_clusters: int
    focused: frozenset
    outer: frozenset


def foc_set(j: int, n_clusters: int, n_focused: int = 3) -> FocSpec:
    """The ``n_focused`` cluster ranks centred on ``j``, shifted to stay inside [1, K]."""
    if j < 1 or n_clusters < 1 or n_focused < 1 or n_focused % 2 == 0:
        raise ValueError(f"invalid FOC request j={j}, K={n_clusters}, F={n_focused}")
    size = min(n_focused, n_clusters)
    if j > n_clusters:
        lo, hi = n_clusters - size + 1, n_clusters
    else:
        half = n_focused // 2
        lo, hi = max(1, j - half), min(n_clusters, j + half)
        while hi - lo + 1 < size:
            if hi < n_clusters:
                hi += 1
            else:
                lo -= 1
    focused = frozenset(range(lo, hi + 1))
    outer = frozenset(range(1, n_clusters + 1)) - focused
    return FocSpec(j, n_focused, n_clusters, focused, outer)


def focus_mask(cluster_ranks: torch.Tensor, tag_index: Sequence[int], n_clusters: int,
               n_focused: int, dtype=torch.float32) -> torch.Tensor:
    """(T, L_mem) mask, 1 where memory word belongs to a focused cluster of step t's tag."""
    rows = {}
    for j in set(tag_index):
        focused = torch.tensor(sorted(foc_set(j, n_clusters, n_focused).focused))
        rows[j] = torch.isin(cluster_ranks, focused).to(dtype)
    return torch.stack([rows[j] for j in tag_index])


class AlignmentFeatures(nn.Module):
    """Rank embedding table with the tag-side and memory-side projections."""

    def __init__(self, max_tags: int, d_embed: int, d_model: int):
        super().__init__()
        self.max_tags = max_tags
        self.table = nn.Embedding(max_tags + 1, d_embed)  # row 0: outer clusters
        self.w_rt = nn.Linear(d_embed, d_embed, bias=False)
        self.w_rc = nn.Linear(d_embed, d_model, bias=False)

    def tag_addend(self, tag_index: torch.Tensor) -> torch.Tensor:
        if (tag_index > self.max_tags).any() or (tag_index < 0).any():
            raise ValueError(f"tag index outside [0, {self.max_tags}]")
        return self.w_rt(self.table(tag_index))

    def memory_addends(self, tag_index: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        focused = self.w_rc(self.table(tag_index))
        outer = self.w_rc(self.table.weight[0])
        return focused, outer


class AlignedCrossAttention(nn.Module):
    """Multi-head cross-attention over rank-aligned memory.

    The aligned memory for query t is ``x_m + foc[t, m] * a_t + (1 - foc[t, m]) * a_0``.
    Because the key/value projections are linear, the projected addends are
    added to the projected base memory instead of materialising one memory
    copy per tag index.
    """

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _heads(self, x):
        return x.reshape(*x.shape[:-1], self.n_heads, self.d_head)

    def forward(self, query, memory, foc=None, focused_addend=None, outer_addend=None):
        """query (T, d), memory (L, d), foc (T, L); returns output (T, d), weights (H, T, L)."""
        q = self._heads(self.q_proj(query))  # T H D
        k = self._heads(self.k_proj(memory))  # L H D
        v = self._heads(self.v_proj(memory))
        scores = torch.einsum("thd,lhd->htl", q, k)
        aligned = focused_addend is not None
        if aligned:
            k_f = self._heads(F.linear(focused_addend, self.k_proj.weight))  # T H D
            k_o = self._heads(F.linear(outer_addend, self.k_proj.weight))  # H D
            s_f = torch.einsum("thd,thd->ht", q, k_f)
            s_o = torch.einsum("thd,hd->ht", q, k_o)
            scores = scores + foc[None] * s_f[..., None] + (1 - foc)[None] * s_o[..., None]
        weights = torch.softmax(scores / math.sqrt(self.d_head), dim=-1)
        dropped = self.dropout(weights)
        ctx = torch.einsum("htl,lhd->thd", dropped, v)
        if aligned:
            v_f = self._heads(F.linear(focused_addend, self.v_proj.weight))
            v_o = self._heads(F.linear(outer_addend, self.v_proj.weight))
            m_f = (dropped * foc[None]).sum(-1).T  # T H
            m_o = (dropped * (1 - foc)[None]).sum(-1).T
            ctx = ctx + m_f[..., None] * v_f + m_o[..., None] * v_o[None]
        return self.out_proj(ctx.reshape(ctx.shape[0], -1)), weights


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.cross_attn = AlignedCrossAttention(d_model, n_heads, dropout)
        self.ffn = FeedForward(d_model, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, y, memory, foc, focused_addend, outer_addend):
        a, _ = self.self_attn(y[None], y[None], y[None], causal=True)
        y = self.norm1(y + self.dropout(a[0]))
        c, weights = self.cross_attn(y, memory, foc, focused_addend, outer_addend)
        s = self.norm2(y + self.dropout(c))
        return self.norm3(s + self.dropout(self.ffn(s))), weights


@dataclass
class DecoderOutput:
    probs: torch.Tensor  # (T, V_ext), final mixture
    vocab_probs: torch.Tensor  # (T, V)
    attention: torch.Tensor  # (T, L_mem), mean over heads of the last layer
    head_attention: torch.Tensor  # (H, T, L_mem)
    p_gen: torch.Tensor  # (T,)
    focus: torch.Tensor  # (T, L_mem)


class TagDecoder(nn.Module):
    def __init__(self, embedding: nn.Embedding, d_model: int = 300, n_heads: int = 6, d_ff: int = 50,
                 n_layers: int = 2, max_tags: int = 20, n_focused: int = 3, dropout: float = 0.0):
        super().__init__()
        self.embedding = embedding
        self.vocab_size = embedding.num_embeddings
        self.d_embed = embedding.embedding_dim
        self.max_tags = max_tags
        self.n_focused = n_focused
        self.use_alignment = True
        self.alignment = AlignmentFeatures(max_tags, self.d_embed, d_model)
        self.input_proj = nn.Linear(self.d_embed, d_model)
        self.layers = nn.ModuleList(DecoderLayer(d_model, n_heads, d_ff, dropout) for _ in range(n_layers))
        self.out = nn.Linear(d_model, self.vocab_size)
        self.gate = nn.Linear(d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def embed_target_token(self, token_ids: torch.Tensor, tag_index: torch.Tensor,
                           positions: Optional[torch.Tensor] = None) -> torch.Tensor:
        """(T,) ids -> (T, d_embed): rank feature + word embedding + position."""
        if (tag_index > self.max_tags).any():
            raise ValueError(f"tag index exceeds max_tags={self.max_tags}")
        emb = self.embedding(token_ids)
        if positions is None:
            positions = torch.arange(token_ids.shape[0])
        pos_table = sinusoidal_positions(int(positions.max()) + 1, self.d_embed, emb.dtype)
        out = emb + pos_table[positions]
        if self.use_alignment:
            out = out + self.alignment.tag_addend(tag_index)
        return out

    def align_memory(self, memory: RankedMemory, foc: FocSpec) -> torch.Tensor:
        """Explicit rank-aligned memory ``R`` for one tag index (used for inspection)."""
        if not self.use_alignment:
            return memory.vectors
        focused, outer = self.alignment.memory_addends(torch.tensor([foc.tag_index]))
        mask = torch.isin(memory.cluster_ranks, torch.tensor(sorted(foc.focused))).to(memory.vectors.dtype)
        return memory.vectors + mask[:, None] * focused + (1 - mask)[:, None] * outer

    def forward(self, memory: RankedMemory, input_ids: torch.Tensor, tag_index: torch.Tensor,
                n_extended: int | None = None) -> DecoderOutput:
        n_extended = max(n_extended or 0, self.vocab_size)
        mem = memory.vectors
        foc = focus_mask(memory.cluster_ranks, tag_index.tolist(), memory.n_clusters,
                         self.n_focused, mem.dtype)
        y = self.input_proj(self.dropout(self.embed_target_token(input_ids, tag_index)))
        if self.use_alignment:
            focused_addend, outer_addend = self.alignment.memory_addends(tag_index)
        else:
            focused_addend = outer_addend = None
        weights = None
        for layer in self.layers:
            y, weights = layer(y, mem, foc, focused_addend, outer_addend)
        vocab_probs = torch.softmax(self.out(y), dim=-1)
        p_gen = torch.sigmoid(self.gate(y)).squeeze(-1)
        attention = weights.mean(dim=0)
        copy = torch.zeros(y.shape[0], n_extended, dtype=y.dtype)
        if memory.token_ids is None:
            raise ValueError("memory has no token ids to copy from")
        copy = copy.scatter_add(1, memory.token_ids.expand(y.shape[0], -1), attention)
        gen = F.pad(vocab_probs, (0, n_extended - self.vocab_size))
        probs = p_gen[:, None] * gen + (1 - p_gen)[:, None] * copy
        return DecoderOutput(probs, vocab_probs, attention, weights, p_gen, foc)


def generation_loss(probs: torch.Tensor, targets: torch.Tensor, eps: float = PROB_EPS,
                    smoothing: float = 0.0, vocab_probs: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Summed negative log-likelihood of the gold tokens.

    With ``smoothing > 0`` a fraction of the target mass is spread uniformly
    over the fixed vocabulary (PAD excluded) of the generator distribution;
    the pointer part is never smoothed.
    """
    if probs.shape[0] != targets.shape[0]:
        raise ValueError(f"{probs.shape[0]} distributions for {targets.shape[0]} targets")
    gold = probs.gather(1, targets[:, None]).squeeze(1).clamp_min(eps)
    nll = -torch.log(gold)
    if smoothing > 0:
        if vocab_probs is None:
            raise ValueError("label smoothing needs the generator distribution")
        uniform = -torch.log(vocab_probs[:, PAD + 1:].clamp_min(eps)).mean(dim=-1)
        nll = (1 - smoothing) * nll + smoothing * uniform
    return nll.sum()


def focus_masses(attention: torch.Tensor, foc: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    total = attention.sum(dim=-1)
    m_f = (attention * foc).sum(dim=-1) / total
    m_o = (attention * (1 - foc)).sum(dim=-1) / total
    return m_f, m_o


def alignment_loss(attention: torch.Tensor, foc: torch.Tensor, eps: float = MASS_EPS) -> torch.Tensor:
    """Mean over decoding steps of ``-log(m_F) + log(m_O)``."""
    m_f, m_o = focus_masses(attention.double(), foc.double())
    per_step = -torch.log(m_f.clamp(eps, 1 - eps)) + torch.log(m_o.clamp(eps, 1 - eps))
    return per_step.mean().to(attention.dtype)


def foc_attention_mass(traces) -> tuple[float, float]:
    """Mean attention mass on focused / outer words.

    ``traces`` is an iterable of (attention (T, L), focus mask (T, L)) pairs,
    one per item; steps are averaged within an item, then items are averaged.
    """
    per_item = []
    for attention, foc in traces:
        attention = torch.as_tensor(attention, dtype=torch.float64)
        foc = torch.as_tensor(foc, dtype=torch.float64)
        m_f, _ = focus_masses(attention, foc)
        per_item.append(float(m_f.mean()))
    if not per_item:
        raise ValueError("no traces")
    mean_f = sum(per_item) / len(per_item)
    return mean_f, 1.0 - mean_f


@dataclass
class DecodeResult:
    tokens: list[int]  # generated extended ids, initial BOS excluded
    attention: list  # per step (L_mem,)
    focus: list  # per step (L_mem,)
    p_gen: list
    tag_index: list


@torch.no_grad()
def greedy_decode(decoder: TagDecoder, memory: RankedMemory, n_extended: int,
                  max_steps: int = 50) -> DecodeResult:
    """Greedy decoding; a BOS right after a BOS (an empty tag) ends the sequence."""
    vocab_size = decoder.vocab_size
    inputs, generated = [BOS], []
    attn, focus, gates, js = [], [], [], []
    n_tags = 1
    while len(generated) < max_steps:
        index = torch.tensor(tag_indices(inputs, decoder.max_tags))
        out = decoder(memory, torch.tensor(inputs), index, n_extended)
        tok = int(out.probs[-1].argmax())
        attn.append(out.attention[-1])
        focus.append(out.focus[-1])
        gates.append(float(out.p_gen[-1]))
        js.append(int(index[-1]))
        generated.append(tok)
        if tok == BOS:
            if inputs[-1] == BOS or n_tags >= decoder.max_tags:
                break
            n_tags += 1
        inputs.append(tok if tok < vocab_size else UNK)
    return DecodeResult(generated, attn, focus, gates, js)
