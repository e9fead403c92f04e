"""Extractive baselines: TF-IDF n-gram ranking and TextRank.

Both only ever emit token runs found verbatim in one of the item's
reviews, so absent gold tags are out of their reach by construction.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .corpus import Item

DAMPING = 0.85
WINDOW = 2
MAX_ITER = 50
TOL = 1e-6


@dataclass(frozen=True)
class CandidatePhrase:
    tokens: tuple[str, ...]
    score: float
    frequency: int

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def item_ngrams(item: Item, max_n: int = 3, stopwords: frozenset = frozenset()) -> Counter:
    """Counts of contiguous n-grams (n <= max_n) inside single reviews.

    N-grams that start or end with a stopword are skipped.
    """
    counts: Counter = Counter()
    for review in item.reviews:
        for n in range(1, max_n + 1):
            for gram in _ngrams(review.text, n):
                if gram[0] in stopwords or gram[-1] in stopwords:
                    continue
                counts[gram] += 1
    return counts


@dataclass
class CorpusStats:
    n_docs: int
    doc_freq: Counter

    @classmethod
    def from_items(cls, items: Iterable[Item]) -> "CorpusStats":
        df: Counter = Counter()
        n = 0
        for item in items:
            n += 1
            df.update({tok for review in item.reviews for tok in review.text})
        return cls(n, df)

    def idf(self, token: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.doc_freq.get(token, 0))) + 1.0


def _top(candidates: list[CandidatePhrase], top_n: int) -> list[CandidatePhrase]:
    return sorted(candidates, key=lambda c: (-c.score, c.text))[:top_n]


def tfidf_candidates(item: Item, stats: CorpusStats, max_n: int = 3,
                     stopwords: frozenset = frozenset()) -> list[CandidatePhrase]:
    tf = Counter(tok for review in item.reviews for tok in review.text)
    weight = {tok: count * stats.idf(tok) for tok, count in tf.items()}
    return [CandidatePhrase(gram, sum(weight[t] for t in gram), freq)
            for gram, freq in item_ngrams(item, max_n, stopwords).items()]


def tfidf_tags(item: Item, stats: CorpusStats, top_n: Optional[int] = None, max_n: int = 3,
               stopwords: frozenset = frozenset()) -> list[str]:
    """Rank n-grams by the summed tf-idf of their tokens.

    ``top_n`` defaults to the item's gold tag count.
    """
    top_n = item.n_tags if top_n is None else top_n
    return [c.text for c in _top(tfidf_candidates(item, stats, max_n, stopwords), top_n)]


def cooccurrence_graph(item: Item, window: int = WINDOW, stopwords: frozenset = frozenset()):
    """Undirected, unweighted word graph; words linked when within ``window`` tokens."""
    words = sorted({t for r in item.reviews for t in r.text if t not in stopwords})
    index = {w: i for i, w in enumerate(words)}
    adj = np.zeros((len(words), len(words)))
    for review in item.reviews:
        toks = [t for t in review.text if t not in stopwords]
        for i, a in enumerate(toks):
            for b in toks[i + 1:i + window]:
                if a != b:
                    adj[index[a], index[b]] = adj[index[b], index[a]] = 1.0
    return words, adj


def pagerank(adj: np.ndarray, damping: float = DAMPING, max_iter: int = MAX_ITER, tol: float = TOL) -> np.ndarray:
    """Power iteration of s = (1 - d) + d * sum_j s_j / deg(j) over neighbours j."""
    n = len(adj)
    degree = adj.sum(axis=1)
    transition = np.divide(adj, degree[None, :], out=np.zeros_like(adj), where=degree[None, :] > 0)
    scores = np.ones(n)
    for _ in range(max_iter):
        new = (1 - damping) + damping * transition @ scores
        delta = np.abs(new - scores).max(initial=0.0)
        scores = new
        if delta < tol:
            break
    return scores


def textrank_candidates(item: Item, window: int = WINDOW, top_fraction: float = 1 / 3,
                        stopwords: frozenset = frozenset()) -> list[CandidatePhrase]:
    words, adj = cooccurrence_graph(item, window, stopwords)
    if not words:
        return []
    scores = pagerank(adj)
    n_keep = max(1, math.ceil(top_fraction * len(words)))
    order = sorted(range(len(words)), key=lambda i: (-scores[i], words[i]))
    keep = {words[i]: float(scores[i]) for i in order[:n_keep]}
    # merge runs of adjacent kept words into phrases
    phrases: Counter = Counter()
    best: dict = {}
    for review in item.reviews:
        run: list[str] = []
        for tok in review.text + [None]:
            if tok is not None and tok in keep:
                run.append(tok)
                continue
            if run:
                gram = tuple(run)
                phrases[gram] += 1
                best[gram] = sum(keep[t] for t in gram)
            run = []
    return [CandidatePhrase(gram, best[gram], freq) for gram, freq in phrases.items()]


def textrank_tags(item: Item, top_n: Optional[int] = None, window: int = WINDOW,
                  stopwords: frozenset = frozenset()) -> list[str]:
    """Top-ranked co-occurrence graph words, merged into phrases where adjacent."""
    if not item.reviews:
        raise ValueError("item has no reviews")
    top_n = item.n_tags if top_n is None else top_n
    return [c.text for c in _top(textrank_candidates(item, window, stopwords=stopwords), top_n)]
