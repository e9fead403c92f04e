"""Transformer review encoder with hierarchical pooling."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import FeedForward, MultiHeadAttention, sinusoidal_positions


@dataclass
class EncodedReviews:
    words: torch.Tensor  # (M, L, d_model), padded
    lengths: torch.Tensor  # (M,)
    pooled: torch.Tensor  # (M, d_model)
    attentions: list  # per layer (M, heads, L, L)

    def review(self, i: int) -> torch.Tensor:
        return self.words[i, : int(self.lengths[i])]


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ffn = FeedForward(d_model, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, padding_mask=None):
        a, weights = self.attn(x, x, x, key_padding_mask=padding_mask)
        g = self.norm1(x + self.dropout(a))
        return self.norm2(g + self.dropout(self.ffn(g))), weights


class ReviewEncoder(nn.Module):
    def __init__(self, embedding: nn.Embedding, d_model: int = 300, n_heads: int = 6,
                 d_ff: int = 50, n_layers: int = 2, pool_window: int = 3, dropout: float = 0.0):
        super().__init__()
        self.embedding = embedding
        self.d_embed = embedding.embedding_dim
        self.pool_window = pool_window
        self.use_positions = True
        self.input_proj = nn.Linear(self.d_embed, d_model)
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ff, dropout) for _ in range(n_layers))
        self.dropout = nn.Dropout(dropout)

    def positions(self, length: int, dtype) -> torch.Tensor:
        return sinusoidal_positions(length, self.d_embed, dtype)

    def embed_with_position(self, token_ids: torch.Tensor) -> torch.Tensor:
        """(..., L) ids -> (..., L, d_model): word embedding plus position, projected."""
        n_vocab = self.embedding.num_embeddings
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= n_vocab):
            raise IndexError(f"token id out of range [0, {n_vocab})")
        x = self.embedding(token_ids)
        if self.use_positions:
            x = x + self.positions(token_ids.shape[-1], x.dtype)
        return self.input_proj(self.dropout(x))

    def transformer_encode(self, x: torch.Tensor, padding_mask=None):
        attentions = []
        for layer in self.layers:
            x, weights = layer(x, padding_mask)
            attentions.append(weights)
        return x, attentions

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> EncodedReviews:
        max_len = token_ids.shape[1]
        padding_mask = torch.arange(max_len)[None, :] >= lengths[:, None]
        x = self.embed_with_position(token_ids)
        words, attentions = self.transformer_encode(x, padding_mask)
        pooled = pool_batch(words, lengths, self.pool_window)
        return EncodedReviews(words, lengths, pooled, attentions)


def pool_batch(words: torch.Tensor, lengths: torch.Tensor, window: int) -> torch.Tensor:
    """Batched ``hierarchical_pool`` over a padded (M, L, d) tensor."""
    m, max_len, d = words.shape
    valid = (torch.arange(max_len)[None, :] < lengths[:, None]).to(words.dtype)
    masked = words * valid[..., None]
    short = masked.sum(dim=1) / lengths[:, None].to(words.dtype)
    if max_len <= window:
        return short
    zero = torch.zeros(m, 1, d, dtype=words.dtype)
    csum = torch.cat([zero, masked.cumsum(dim=1)], dim=1)
    means = (csum[:, window:] - csum[:, :-window]) / window  # (M, L - w + 1, d)
    n_windows = (lengths - window + 1).clamp(min=1)
    win_valid = torch.arange(max_len - window + 1)[None, :] < n_windows[:, None]
    longest = means.masked_fill(~win_valid[..., None], float("-inf")).max(dim=1).values
    return torch.where((lengths > window)[:, None], longest, short)
