"""Transformer building blocks shared by the encoder and the tag decoder."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sin/cos position table of shape (length, dim)."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table.to(dtype)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with ``n_heads`` heads.

    Returns the attended values and the per-head attention weights
    ``(batch, heads, queries, keys)`` so callers can inspect or reuse them.
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

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, query, key, value, key_padding_mask: Optional[torch.Tensor] = None,
                causal: bool = False):
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        if causal:
            n_q, n_k = scores.shape[-2:]
            future = torch.ones(n_q, n_k, dtype=torch.bool, device=scores.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = self.dropout(weights) @ v
        b, _, n, _ = out.shape
        out = out.transpose(1, 2).reshape(b, n, self.n_heads * self.d_head)
        return self.out_proj(out), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.w1 = nn.Linear(d_model, d_ff)
        self.w2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.w2(self.dropout(F.relu(self.w1(x))))


def hierarchical_pool(vectors: torch.Tensor, window: int = 3) -> torch.Tensor:
    """Mean-pool over sliding windows (stride 1), then max over the window means.

    ``vectors`` is (L, d). Sequences no longer than ``window`` reduce to a plain mean.
    """
    if vectors.dim() != 2 or vectors.shape[0] == 0:
        raise ValueError("hierarchical_pool expects a non-empty (L, d) tensor")
    length = vectors.shape[0]
    if length <= window:
        return vectors.mean(dim=0)
    means = vectors.unfold(0, window, 1).mean(dim=-1)  # (L - w + 1, d)
    return means.max(dim=0).values
