"""End-to-end model: salience scoring, review clustering, rank-aware decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .cluster_rank import (RankedMemory, choose_k, cluster_reviews, flatten_memory,
                           single_cluster, weight_by_salience)
from .config import ModelConfig
from .corpus import BOS, PAD, UNK, Item, Vocabulary
from .encoder import EncodedReviews, ReviewEncoder
from .salience import SalienceEstimator, SalienceOutput, salience_loss
from .tagger import (DecodeResult, DecoderOutput, TagDecoder, alignment_loss, generation_loss,
                     greedy_decode, prepare_targets, segment_tags, tag_indices)


@dataclass
class EncodedItem:
    """Tensors for one item. Memory and target ids live in the item's extended id space."""

    item_id: str
    review_ids: torch.Tensor  # (M, L) embedding ids, OOV -> UNK
    review_ext: torch.Tensor  # (M, L) extended ids, OOV -> V + k
    lengths: torch.Tensor  # (M,)
    labels: torch.Tensor  # (M,)
    oov: list[str]
    input_ids: Optional[torch.Tensor] = None  # (T,)
    target_ids: Optional[torch.Tensor] = None  # (T,)
    tag_index: Optional[torch.Tensor] = None  # (T,)

    @property
    def n_reviews(self) -> int:
        return self.review_ids.shape[0]

    def n_extended(self, vocab_size: int) -> int:
        return vocab_size + len(self.oov)


def encode_item(item: Item, vocab: Vocabulary, max_tags: int = 20) -> EncodedItem:
    if not item.reviews:
        raise ValueError(f"item {item.item_id} has no reviews")
    v = len(vocab)
    oov: list[str] = []
    oov_index: dict[str, int] = {}

    def ext_id(tok: str) -> int:
        if tok in vocab:
            return vocab.id(tok)
        if tok not in oov_index:
            oov_index[tok] = v + len(oov)
            oov.append(tok)
        return oov_index[tok]

    max_len = max(len(r.text) for r in item.reviews)
    m = len(item.reviews)
    ids = torch.full((m, max_len), PAD, dtype=torch.long)
    ext = torch.full((m, max_len), PAD, dtype=torch.long)
    for i, review in enumerate(item.reviews):
        ids[i, : len(review.text)] = torch.tensor(vocab.ids(review.text))
        ext[i, : len(review.text)] = torch.tensor([ext_id(t) for t in review.text])
    lengths = torch.tensor([len(r.text) for r in item.reviews])
    labels = torch.tensor([r.salience_label for r in item.reviews], dtype=torch.float32)
    encoded = EncodedItem(item.item_id, ids, ext, lengths, labels, oov)
    if item.gold_tags:
        tags = item.gold_tags[:max_tags]
        seq = prepare_targets(tags, lambda t: vocab.id(t) if t in vocab else oov_index.get(t, UNK))
        inputs = seq.ids + [BOS]
        targets = seq.ids[1:] + [BOS, BOS]  # close the last tag, then an empty tag ends decoding
        encoded.input_ids = torch.tensor([t if t < v else UNK for t in inputs])
        encoded.target_ids = torch.tensor(targets)
        encoded.tag_index = torch.tensor(tag_indices(inputs, max_tags))
    return encoded


@dataclass
class ItemOutput:
    salience: Optional[SalienceOutput]
    scores: torch.Tensor
    encoded: EncodedReviews
    memory: RankedMemory
    decoder: DecoderOutput
    loss_cla: torch.Tensor
    loss_aln: torch.Tensor
    loss_gen: torch.Tensor
    n_tokens: int
    n_correct: int


class AOTNet(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int, ablations=()):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, config.d_embed, padding_idx=PAD)
        sal_embedding = self.embedding
        if not config.tie_salience_embeddings:
            sal_embedding = nn.Embedding(vocab_size, config.d_embed, padding_idx=PAD)
        self.salience = SalienceEstimator(
            sal_embedding, config.gru_hidden, config.gru_layers, config.salience_ff,
            config.scale_salience_attention, config.dropout)
        self.encoder = ReviewEncoder(
            self.embedding, config.d_model, config.n_heads, config.d_ff, config.n_enc_layers,
            config.pool_window, config.dropout)
        self.decoder = TagDecoder(
            self.embedding, config.d_model, config.n_heads, config.d_ff, config.n_dec_layers,
            config.max_tags, config.n_focused, config.dropout)
        self.ablations: tuple = ()
        self.set_ablations(ablations)

    def set_ablations(self, ablations) -> None:
        self.ablations = tuple(sorted(set(self.ablations) | set(ablations)))
        self.decoder.use_alignment = "no_af" not in self.ablations

    @property
    def dtype(self):
        return self.embedding.weight.dtype

    def salience_scores(self, item: EncodedItem) -> tuple[Optional[SalienceOutput], torch.Tensor]:
        if "no_sse" in self.ablations:
            return None, torch.ones(item.n_reviews, dtype=self.dtype)
        out = self.salience(item.review_ids, item.lengths)
        return out, out.scores

    def cluster(self, encoded: EncodedReviews, scores: torch.Tensor):
        """Cluster the salience-weighted sentence vectors (no gradient)."""
        m = encoded.pooled.shape[0]
        if "no_rcr" in self.ablations:
            return single_cluster(m)
        k = min(self.config.n_clusters or choose_k(m), m)
        weighted = weight_by_salience(encoded.pooled.detach(), scores.detach())
        return cluster_reviews(weighted.double().numpy(), k, self.config.cluster_seed,
                               self.config.kmeans_iters, self.config.kmeans_restarts)

    def build_memory(self, item: EncodedItem, clusters=None):
        sal, scores = self.salience_scores(item)
        encoded = self.encoder(item.review_ids, item.lengths)
        if clusters is None:
            clusters = self.cluster(encoded, scores)
        memory = flatten_memory(clusters, encoded.words, item.lengths, item.review_ext)
        return sal, scores, encoded, memory

    def forward(self, item: EncodedItem, clusters=None, label_smoothing: float = 0.0) -> ItemOutput:
        """Teacher-forced pass returning all three losses."""
        if item.input_ids is None:
            raise ValueError(f"item {item.item_id} has no gold tags")
        sal, scores, encoded, memory = self.build_memory(item, clusters)
        dec = self.decoder(memory, item.input_ids, item.tag_index, item.n_extended(self.vocab_size))
        if sal is not None:
            loss_cla = salience_loss(sal.scores, item.labels.to(self.dtype))
        else:
            loss_cla = torch.zeros((), dtype=self.dtype)
        loss_aln = alignment_loss(dec.attention, dec.focus)
        loss_gen = generation_loss(dec.probs, item.target_ids, smoothing=label_smoothing,
                                   vocab_probs=dec.vocab_probs)
        predicted = dec.probs.argmax(dim=-1)
        n_correct = int((predicted == item.target_ids).sum())
        return ItemOutput(sal, scores, encoded, memory, dec, loss_cla, loss_aln, loss_gen,
                          int(item.target_ids.numel()), n_correct)

    @torch.no_grad()
    def decode(self, item: EncodedItem, vocab: Vocabulary, max_steps: Optional[int] = None):
        """Greedy decoding; returns (tags as token lists, DecodeResult, memory)."""
        _, _, _, memory = self.build_memory(item)
        max_steps = max_steps or self.config.max_decode_steps
        result: DecodeResult = greedy_decode(self.decoder, memory, item.n_extended(self.vocab_size), max_steps)
        words = [BOS_WORD if t == BOS else _ext_token(t, vocab, item.oov) for t in result.tokens]
        return segment_tags(words, BOS_WORD), result, memory


BOS_WORD = "<bos>"


def _ext_token(idx: int, vocab: Vocabulary, oov: list[str]) -> str:
    if idx < len(vocab):
        return vocab.token(idx)
    return oov[idx - len(vocab)]
