"""Ranked tag-list evaluation: F1@k, NDCG@k, ERM, FRM, Distinct-2, Unique-N.

All metrics compare normalized tag strings (lowercased, whitespace collapsed)
so extractive baselines and generated tags are scored the same way.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import normalize_tag

Embedder = Callable[[str], Optional[np.ndarray]]


def _norm_list(tags) -> list[str]:
    return [normalize_tag(t) for t in tags]


def _require_gold(gold):
    if not gold:
        raise ValueError("gold tag list is empty")


def _greedy_matches(pred: Sequence[str], gold: Sequence[str]) -> list[bool]:
    """For each prediction: does it match a not-yet-matched gold tag?"""
    remaining = Counter(gold)
    hits = []
    for tag in pred:
        if remaining[tag] > 0:
            remaining[tag] -= 1
            hits.append(True)
        else:
            hits.append(False)
    return hits


def f1_at_k(pred, gold, k: int) -> float:
    _require_gold(gold)
    if k < 1:
        raise ValueError("k must be >= 1")
    pred, gold = _norm_list(pred)[:k], _norm_list(gold)
    if not pred:
        return 0.0
    n_match = sum(_greedy_matches(pred, gold))
    precision = n_match / min(k, len(pred))
    recall = n_match / len(gold)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def ndcg_at_k(pred, gold, k: int) -> float:
    _require_gold(gold)
    if k < 1:
        raise ValueError("k must be >= 1")
    pred, gold = _norm_list(pred)[:k], _norm_list(gold)
    rel = _greedy_matches(pred, gold)
    dcg = sum(1.0 / math.log2(i + 2) for i, r in enumerate(rel) if r)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(gold))))
    return dcg / idcg


def erm(pred, gold) -> float:
    """Fraction of gold positions whose tag is predicted at the same rank."""
    _require_gold(gold)
    pred, gold = _norm_list(pred), _norm_list(gold)
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def _cosine(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def tag_vector(tag: str, embed: Embedder, dim: int) -> np.ndarray:
    tokens = normalize_tag(tag).split()
    if not tokens:
        return np.zeros(dim)
    vecs = [embed(t) for t in tokens]
    return np.mean([v if v is not None else np.zeros(dim) for v in vecs], axis=0)


def frm(pred, gold, embed: Embedder, dim: int) -> float:
    """Mean cosine between rank-paired predicted and gold tag vectors."""
    n = min(len(pred), len(gold))
    if n == 0:
        return 0.0
    sims = [_cosine(tag_vector(p, embed, dim), tag_vector(g, embed, dim)) for p, g in zip(pred[:n], gold[:n])]
    return float(np.mean(sims))


def _bigrams(tag: str) -> list[tuple[str, str]]:
    toks = normalize_tag(tag).split()
    return list(zip(toks, toks[1:]))


def distinct2(pred_lists) -> tuple[float, float]:
    """(micro, macro) Distinct-2, both scaled to [0, 100]."""
    corpus: list = []
    per_item = []
    for tags in pred_lists:
        grams = [g for tag in tags for g in _bigrams(tag)]
        corpus.extend(grams)
        if grams:
            per_item.append(len(set(grams)) / len(grams))
    micro = 100.0 * len(set(corpus)) / len(corpus) if corpus else 0.0
    macro = 100.0 * float(np.mean(per_item)) if per_item else 0.0
    return micro, macro


def unique_n(pred_lists) -> float:
    pred_lists = list(pred_lists)
    if not pred_lists:
        raise ValueError("need at least one item")
    return sum(len(set(_norm_list(tags))) for tags in pred_lists) / len(pred_lists)


class TableEmbedder:
    """Look tokens up in an embedding matrix; unknown tokens map to ``None`` (zero)."""

    def __init__(self, matrix: np.ndarray, tokens: Sequence[str]):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.index = {tok: i for i, tok in enumerate(tokens)}
        self.dim = self.matrix.shape[1]

    def __call__(self, token: str):
        i = self.index.get(token)
        return None if i is None else self.matrix[i]


class HashEmbedder:
    """Deterministic pseudo-random token vectors, used when no trained table is given."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def __call__(self, token: str):
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim)


@dataclass
class EvalReport:
    f1_at_5: float
    f1_at_10: float
    ndcg_at_5: float
    ndcg_at_10: float
    erm: float
    frm: float
    distinct2_micro: float
    distinct2_macro: float
    unique_n: float
    n_items: int
    per_item: list = field(default_factory=list)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("per_item")
        return out


def evaluate(preds: Sequence[Sequence[str]], golds: Sequence[Sequence[str]], embed: Embedder = None,
             item_ids: Optional[Sequence[str]] = None) -> EvalReport:
    """Macro-averaged report over aligned prediction/gold tag lists."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold items")
    if not golds:
        raise ValueError("nothing to evaluate")
    embed = embed or HashEmbedder()
    dim = embed.dim
    rows = []
    for i, (pred, gold) in enumerate(zip(preds, golds)):
        rows.append({
            "item_id": item_ids[i] if item_ids is not None else str(i),
            "f1_at_5": f1_at_k(pred, gold, 5),
            "f1_at_10": f1_at_k(pred, gold, 10),
            "ndcg_at_5": ndcg_at_k(pred, gold, 5),
            "ndcg_at_10": ndcg_at_k(pred, gold, 10),
            "erm": erm(pred, gold),
            "frm": frm(pred, gold, embed, dim),
        })
    mean = {key: float(np.mean([r[key] for r in rows])) for key in rows[0] if key != "item_id"}
    micro, macro = distinct2(preds)
    return EvalReport(distinct2_micro=micro, distinct2_macro=macro, unique_n=unique_n(preds),
                      n_items=len(golds), per_item=rows, **mean)


def cluster_tag_similarity(tag_groups, cluster_groups, embed: Embedder, dim: int) -> np.ndarray:
    """Rank x rank table of mean cosine between tag j and the reviews of cluster k.

    ``tag_groups[i]`` is item i's ranked tag list; ``cluster_groups[i][k]`` is
    the list of review strings in item i's cluster of rank k + 1. Cells are
    averaged over the items that have both that tag rank and that cluster
    rank; missing cells are NaN.
    """
    n_tags = max(len(t) for t in tag_groups)
    n_clusters = max(len(c) for c in cluster_groups)
    total = np.zeros((n_tags, n_clusters))
    count = np.zeros((n_tags, n_clusters))
    for tags, clusters in zip(tag_groups, cluster_groups):
        tag_vecs = [tag_vector(t, embed, dim) for t in tags]
        for k, reviews in enumerate(clusters):
            review_vecs = [tag_vector(r, embed, dim) for r in reviews]
            for j, tv in enumerate(tag_vecs):
                total[j, k] += np.mean([_cosine(tv, rv) for rv in review_vecs])
                count[j, k] += 1
    with np.errstate(invalid="ignore"):
        return total / count


def model_embedder(model, vocab) -> TableEmbedder:
    """Embedder over a trained model's shared word table."""
    matrix = model.embedding.weight.detach().double().cpu().numpy()
    return TableEmbedder(matrix, vocab.itos)


def cluster_tag_similarity_report(items, model, vocab) -> np.ndarray:
    """Gold tag rank x cluster rank similarity using the model's own clustering."""
    import torch

    from .model import encode_item

    embed = model_embedder(model, vocab)
    tag_groups, cluster_groups = [], []
    model.eval()
    with torch.no_grad():
        for item in items:
            memory = model.build_memory(encode_item(item, vocab, model.config.max_tags))[-1]
            tag_groups.append(item.tag_strings())
            cluster_groups.append([[" ".join(item.reviews[m].text) for m in c.members]
                                   for c in memory.clusters])
    return cluster_tag_similarity(tag_groups, cluster_groups, embed, embed.dim)
