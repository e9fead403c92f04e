"""Synthetic review corpus with a planted cluster -> tag rank structure.

Every item covers N aspects. Aspect j gets a review count that decays
geometrically with j, so the gold tag order is the order of aspect
popularity. Reviews paraphrase the aspect with a colloquial lexicon; the
gold tag uses a formal adjective that never occurs in that lexicon, so
most tags are absent from the reviews. A configurable fraction of tags is
quoted verbatim in one review to produce present tags as well.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .corpus import Item, Review


@dataclass(frozen=True)
class Aspect:
    name: str
    tag: tuple[str, ...]  # formal adjective + aspect noun
    nouns: tuple[str, ...]  # colloquial nouns; tag noun comes first
    adjectives: tuple[str, ...]


def _aspect(name, tag, nouns, adjs):
    return Aspect(name, tuple(tag.split()), tuple(nouns.split()), tuple(adjs.split()))


ASPECTS: tuple[Aspect, ...] = (
    _aspect("service", "hospitable service", "service staff waiter", "friendly kind helpful welcoming"),
    _aspect("ingredients", "wholesome ingredients", "ingredients vegetables produce", "crisp fresh organic"),
    _aspect("price", "reasonable price", "price prices bill", "cheap fair affordable"),
    _aspect("flavor", "exquisite flavor", "flavor taste dishes", "yummy tasty delicious"),
    _aspect("decor", "elegant decor", "decor interior room", "pretty cute stylish"),
    _aspect("delivery", "efficient delivery", "delivery shipping courier", "quick fast speedy"),
    _aspect("packaging", "sturdy packaging", "packaging box wrapping", "solid neat tight"),
    _aspect("build", "durable build", "build material frame", "strong tough heavy"),
    _aspect("battery", "longlasting battery", "battery charge charger", "long endless reliable"),
    _aspect("display", "vivid display", "display screen colors", "bright sharp clear"),
    _aspect("audio", "immersive audio", "audio sound speakers", "loud rich punchy"),
    _aspect("portions", "generous portions", "portions servings plates", "huge big large"),
    _aspect("location", "convenient location", "location parking area", "central close handy"),
    _aspect("hygiene", "spotless hygiene", "hygiene tables floors", "clean tidy washed"),
    _aspect("fragrance", "pleasant fragrance", "fragrance smell scent", "nice lovely sweet"),
    _aspect("texture", "silky texture", "texture cream lotion", "smooth soft light"),
    _aspect("sizing", "accurate sizing", "sizing fit size", "perfect snug right"),
    _aspect("comfort", "ergonomic comfort", "comfort seat cushion", "comfy cozy relaxing"),
    _aspect("plot", "compelling plot", "plot story characters", "gripping exciting fun"),
    _aspect("print", "legible print", "print pages font", "readable dark even"),
    _aspect("value", "worthwhile value", "value deal money", "worth decent okay"),
    _aspect("relief", "effective relief", "relief pain symptoms", "gone better eased"),
    _aspect("ambience", "tranquil ambience", "ambience music vibe", "calm quiet chill"),
    _aspect("assembly", "effortless assembly", "assembly instructions screws", "easy simple straightforward"),
)

_INTENSIFIERS = ("really", "so", "very", "super", "quite", "extremely")
_TEMPLATES = (
    "{adj} {noun}",
    "{noun} {adj}",
    "{adj} {noun} {adj2}",
    "{noun} {adj} {adj2}",
    "{adj} {adj2} {noun}",
    "{noun} {be} {adj}",
    "{intens} {adj} {noun}",
)
_PRESENT_TEMPLATE = "honestly {intens} {tag}"
_CHATTER = (
    "love love love this",
    "came here with my boyfriend",
    "will come back again",
    "my mom told me about it",
    "first time trying this",
    "ordered it on a tuesday",
    "bought it for my sister",
    "saw it on social media",
    "tell all your friends",
    "five stars from me",
    "just writing this for points",
    "had a rough day at work",
    "my cat sat on it",
    "we were celebrating a birthday",
    "it rained all afternoon",
    "not sure what else to say",
)


@dataclass(frozen=True)
class SynthSpec:
    n_items: int = 100
    aspects: tuple[Aspect, ...] = ASPECTS
    reviews_per_item: tuple[int, int] = (50, 160)
    tags_per_item: tuple[int, int] = (4, 8)
    noise_fraction: float = 0.03
    decay: float = 0.75
    present_rate: float = 0.25
    # nouns / adjectives one item's reviewers use for an aspect (None: whole lexicon)
    item_lexicon: tuple[int, int] | None = (1, 2)
    # reserve one default cluster for the chatter reviews
    chatter_cluster: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_fraction < 1.0:
            raise ValueError(f"noise_fraction must be in [0, 1), got {self.noise_fraction}")
        lo, hi = self.tags_per_item
        if not 1 <= lo <= hi <= len(self.aspects):
            raise ValueError("tags_per_item must fit inside the aspect pool")
        if self.reviews_per_item[0] > self.reviews_per_item[1]:
            raise ValueError("reviews_per_item range is empty")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")


def _review_counts(n_tags: int, total: int, decay: float) -> list[int]:
    weights = [decay ** j for j in range(n_tags)]
    norm = sum(weights)
    counts = [max(2, math.floor(total * w / norm)) for w in weights]
    counts[0] += max(0, total - sum(counts))
    # strictly decreasing so the gold order is unambiguous
    for j in range(n_tags - 2, -1, -1):
        counts[j] = max(counts[j], counts[j + 1] + 1)
    return counts


def _item_lexicon(rng: random.Random, aspect: Aspect, sizes) -> Aspect:
    """Reviewers of one item tend to reuse the same few words for an aspect."""
    if sizes is None:
        return aspect
    n_nouns, n_adjs = sizes
    return Aspect(aspect.name, aspect.tag,
                  tuple(rng.sample(aspect.nouns, min(n_nouns, len(aspect.nouns)))),
                  tuple(rng.sample(aspect.adjectives, min(max(n_adjs, 2), len(aspect.adjectives)))))


def _aspect_sentence(rng: random.Random, aspect: Aspect) -> str:
    adj, adj2 = rng.sample(aspect.adjectives, 2)
    return rng.choice(_TEMPLATES).format(
        noun=rng.choice(aspect.nouns), adj=adj, adj2=adj2,
        intens=rng.choice(_INTENSIFIERS), be=rng.choice(("was", "is")),
    )


def _capitalize(sentence: str) -> str:
    return sentence[:1].upper() + sentence[1:]


def synthesize_item(rng: random.Random, spec: SynthSpec, item_id: str) -> Item:
    n_tags = rng.randint(*spec.tags_per_item)
    lo, hi = spec.reviews_per_item
    # aim for ceil(M / 20) == N (+1 for the chatter) so the default cluster
    # count matches the number of review groups
    n_groups = n_tags + (1 if spec.chatter_cluster and spec.noise_fraction > 0 else 0)
    m_lo, m_hi = max(lo, 20 * (n_groups - 1) + 1), min(hi, 20 * n_groups)
    m_target = rng.randint(m_lo, m_hi) if m_lo <= m_hi else rng.randint(lo, hi)
    n_noise = round(spec.noise_fraction * m_target)
    counts = _review_counts(n_tags, m_target - n_noise, spec.decay)
    if sum(counts) + n_noise < lo:
        counts[0] += lo - sum(counts) - n_noise

    aspects = rng.sample(spec.aspects, n_tags)
    reviews = []
    for aspect, count in zip(aspects, counts):
        local = _item_lexicon(rng, aspect, spec.item_lexicon)
        sentences = [_aspect_sentence(rng, local) for _ in range(count)]
        if rng.random() < spec.present_rate:
            sentences[0] = _PRESENT_TEMPLATE.format(intens=rng.choice(_INTENSIFIERS), tag=" ".join(aspect.tag))
        reviews.extend(Review.from_raw(_capitalize(s), 1) for s in sentences)
    for _ in range(n_noise):
        reviews.append(Review.from_raw(_capitalize(rng.choice(_CHATTER)), 0))
    rng.shuffle(reviews)
    return Item(item_id, reviews, [list(a.tag) for a in aspects])


def synthesize_corpus(spec: SynthSpec) -> list[Item]:
    rng = random.Random(spec.seed)
    return [synthesize_item(rng, spec, f"synth-{i:05d}") for i in range(spec.n_items)]


def split_items(items: list, ratios=(8, 1, 1)) -> tuple[list, list, list]:
    """Deterministic train/validation/test split by position."""
    total = sum(ratios)
    n = len(items)
    n_train = round(n * ratios[0] / total)
    n_valid = round(n * ratios[1] / total)
    return items[:n_train], items[n_train:n_train + n_valid], items[n_train + n_valid:]
