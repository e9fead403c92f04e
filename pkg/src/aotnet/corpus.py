"""Data model, tokenization, vocabulary and line-delimited dataset I/O."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, BOS = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<bos>")

MIN_TAGS = 4
MIN_REVIEWS = 50

_SENTENCE_END = re.compile(r"[.!?;…。！？；．]+")
_STRIP = string.punctuation + "‘’“”、，。！？；："


class DatasetFormatError(ValueError):
    """A dataset record could not be parsed."""

    def __init__(self, path, line: int, field_name: str, message: str):
        self.path = str(path)
        self.line = line
        self.field = field_name
        super().__init__(f"{path}:{line}: field {field_name!r}: {message}")


def split_into_sentences(raw_review: str) -> list[str]:
    """Split a review at sentence-final punctuation, dropping empty pieces."""
    return [part.strip() for part in _SENTENCE_END.split(raw_review) if part.strip()]


def tokenize(sentence: str) -> list[str]:
    tokens = []
    for piece in sentence.lower().split():
        piece = piece.strip(_STRIP)
        if piece:
            tokens.append(piece)
    return tokens


def normalize_tag(tag: str | Sequence[str]) -> str:
    if not isinstance(tag, str):
        tag = " ".join(tag)
    return " ".join(tag.lower().split())


@dataclass
class Review:
    text: list[str]
    salience_label: int
    raw: str

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"review has no tokens: {self.raw!r}")
        if self.salience_label not in (0, 1):
            raise ValueError(f"salience label must be 0 or 1, got {self.salience_label!r}")

    @classmethod
    def from_raw(cls, raw: str, salience_label: int) -> "Review":
        return cls(tokenize(raw), int(salience_label), raw)


@dataclass
class Item:
    item_id: str
    reviews: list[Review]
    gold_tags: list[list[str]] = field(default_factory=list)

    @property
    def n_reviews(self) -> int:
        return len(self.reviews)

    @property
    def n_tags(self) -> int:
        return len(self.gold_tags)

    def tag_strings(self) -> list[str]:
        return [" ".join(tag) for tag in self.gold_tags]


def item_from_raw_reviews(item_id: str, raw_reviews: Iterable[tuple[str, int]], tags: Iterable[str]) -> Item:
    """Build an item from whole reviews; each sentence becomes one review."""
    reviews = []
    for raw, label in raw_reviews:
        for sentence in split_into_sentences(raw):
            if tokenize(sentence):
                reviews.append(Review.from_raw(sentence, label))
    return Item(item_id, reviews, [tokenize(t) for t in tags])


def is_present(tag: Sequence[str], item: Item) -> bool:
    """True if the tag occurs verbatim (as a contiguous token run) in some review."""
    n = len(tag)
    tag = list(tag)
    for review in item.reviews:
        toks = review.text
        for start in range(len(toks) - n + 1):
            if toks[start:start + n] == tag:
                return True
    return False


def filter_items(items: Iterable[Item], min_tags: int = MIN_TAGS, min_reviews: int = MIN_REVIEWS) -> list[Item]:
    return [it for it in items if it.n_tags >= min_tags and it.n_reviews >= min_reviews]


class Vocabulary:
    """Token/id mapping with PAD=0, UNK=1, BOS=2 reserved."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {tok: i for i, tok in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_list(self) -> list[str]:
        return self.itos[len(RESERVED):]


def build_vocabulary(items: Iterable[Item], cap: int = 50_000) -> Vocabulary:
    if cap <= len(RESERVED):
        raise ValueError(f"cap must exceed the {len(RESERVED)} reserved ids")
    counts: Counter = Counter()
    for item in items:
        for review in item.reviews:
            counts.update(review.text)
        for tag in item.gold_tags:
            counts.update(tag)
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[:cap - len(RESERVED)]])


def item_to_record(item: Item) -> dict:
    return {
        "item_id": item.item_id,
        "reviews": [{"text": r.raw, "salience": r.salience_label} for r in item.reviews],
        "tags": item.tag_strings(),
    }


def _record_to_item(record, path, lineno: int) -> Item:
    if not isinstance(record, dict):
        raise DatasetFormatError(path, lineno, "<record>", "expected a JSON object")
    for name in ("item_id", "reviews", "tags"):
        if name not in record:
            raise DatasetFormatError(path, lineno, name, "missing")
    item_id = record["item_id"]
    if not isinstance(item_id, str):
        raise DatasetFormatError(path, lineno, "item_id", "must be a string")
    if not isinstance(record["reviews"], list):
        raise DatasetFormatError(path, lineno, "reviews", "must be a list")
    if not isinstance(record["tags"], list) or not all(isinstance(t, str) for t in record["tags"]):
        raise DatasetFormatError(path, lineno, "tags", "must be a list of strings")
    reviews = []
    for k, rec in enumerate(record["reviews"]):
        where = f"reviews[{k}]"
        if not isinstance(rec, dict) or "text" not in rec or "salience" not in rec:
            raise DatasetFormatError(path, lineno, where, "expected {text, salience}")
        try:
            reviews.append(Review.from_raw(rec["text"], rec["salience"]))
        except (ValueError, TypeError, AttributeError) as exc:
            raise DatasetFormatError(path, lineno, where, str(exc)) from None
    tags = [tokenize(t) for t in record["tags"]]
    if any(not t for t in tags):
        raise DatasetFormatError(path, lineno, "tags", "empty tag")
    return Item(item_id, reviews, tags)


def save_dataset(items: Iterable[Item], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(json.dumps(item_to_record(item), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_dataset(path) -> list[Item]:
    path = Path(path)
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(path, lineno, "<json>", exc.msg) from None
            items.append(_record_to_item(record, path, lineno))
    return items
