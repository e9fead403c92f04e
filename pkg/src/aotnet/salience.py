"""Sentence-level salience estimation.

Each review sentence is read by a bidirectional GRU; the review vectors then
attend to one another so that a sentence is scored in the context of the
other reviews of the same item. The score is the probability that the
sentence talks about the item rather than being noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence

PROB_EPS = 1e-12


@dataclass
class SalienceOutput:
    hidden: torch.Tensor  # (M, d) review vectors from the BiGRU
    context: torch.Tensor  # (M, d)
    enhanced: torch.Tensor  # (M, d)
    scores: torch.Tensor  # (M,) in (0, 1)
    attention: torch.Tensor  # (M, M), rows sum to one


class SalienceEstimator(nn.Module):
    def __init__(self, embedding: nn.Embedding, hidden: int = 256, num_layers: int = 2,
                 ff_dim: int | None = None, scale_attention: bool = False, dropout: float = 0.0):
        super().__init__()
        self.embedding = embedding
        self.hidden = hidden
        self.scale_attention = scale_attention
        self.gru = nn.GRU(embedding.embedding_dim, hidden // 2, num_layers=num_layers,
                          batch_first=True, bidirectional=True,
                          dropout=dropout if num_layers > 1 else 0.0)
        self.w_q = nn.Linear(hidden, hidden, bias=False)
        self.w_k = nn.Linear(hidden, hidden, bias=False)
        self.w_v = nn.Linear(hidden, hidden, bias=False)
        ff_dim = ff_dim or hidden
        self.w_s2 = nn.Linear(hidden, ff_dim, bias=False)
        self.w_s1 = nn.Linear(ff_dim, hidden, bias=False)
        self.w_s = nn.Linear(hidden, 1)
        self.dropout = nn.Dropout(dropout)

    def encode_reviews(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Encode a padded (M, L) batch into (M, d) vectors.

        The vector is the last forward state concatenated with the last
        backward state, i.e. the backward state at the first token.
        """
        if (lengths <= 0).any():
            raise ValueError("cannot encode an empty review")
        emb = self.dropout(self.embedding(token_ids))
        packed = pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, h_n = self.gru(packed)
        return torch.cat([h_n[-2], h_n[-1]], dim=-1)

    def encode_review(self, token_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.numel() == 0:
            raise ValueError("cannot encode an empty review")
        lengths = torch.tensor([token_ids.numel()])
        return self.encode_reviews(token_ids.view(1, -1), lengths)[0]

    def self_attend(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        q, k, v = self.w_q(hidden), self.w_k(hidden), self.w_v(hidden)
        scores = q @ k.T
        if self.scale_attention:
            scores = scores / math.sqrt(hidden.shape[-1])
        attn = torch.softmax(scores, dim=-1)
        return attn @ v, attn

    def score(self, hidden: torch.Tensor, context: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # FFN applied to the residual sum; no residual around the FFN itself
        enhanced = self.w_s1(F.relu(self.w_s2(hidden + context)))
        z = torch.sigmoid(self.w_s(self.dropout(enhanced))).squeeze(-1)
        return z, enhanced

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> SalienceOutput:
        hidden = self.encode_reviews(token_ids, lengths)
        context, attn = self.self_attend(hidden)
        z, enhanced = self.score(hidden, context)
        return SalienceOutput(hidden, context, enhanced, z, attn)


def salience_loss(scores: torch.Tensor, labels: torch.Tensor, eps: float = PROB_EPS) -> torch.Tensor:
    """Mean binary cross-entropy between salience scores and 0/1 labels."""
    if scores.shape != labels.shape:
        raise ValueError(f"got {tuple(scores.shape)} scores for {tuple(labels.shape)} labels")
    # float64: 1 - 1e-12 rounds to 1 in float32
    z = scores.double().clamp(eps, 1.0 - eps)
    labels = labels.double()
    loss = -(labels * torch.log(z) + (1 - labels) * torch.log(1 - z)).mean()
    return loss.to(scores.dtype)
