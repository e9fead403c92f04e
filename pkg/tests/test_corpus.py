import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aotnet.corpus import (BOS, PAD, RESERVED, UNK, DatasetFormatError, Item, Review,
                           build_vocabulary, filter_items, is_present, item_from_raw_reviews,
                           load_dataset, normalize_tag, save_dataset, split_into_sentences, tokenize)
from aotnet.synth import ASPECTS, SynthSpec, split_items, synthesize_corpus

from conftest import make_item


class TestSentences:
    def test_split_on_punctuation(self):
        assert split_into_sentences("Great food! Slow service.") == ["Great food", "Slow service"]

    def test_no_delimiter(self):
        assert split_into_sentences("no punctuation here") == ["no punctuation here"]

    def test_empty_fragments_removed(self):
        assert split_into_sentences("a.. b") == ["a", "b"]

    def test_full_width_and_ellipsis(self):
        assert split_into_sentences("好吃。便宜！ok… fine；") == ["好吃", "便宜", "ok", "fine"]

    def test_empty_input(self):
        assert split_into_sentences("") == []


class TestTokenize:
    def test_lowercase_split(self):
        assert tokenize("Fairly quick service") == ["fairly", "quick", "service"]

    def test_empty(self):
        assert tokenize("") == []

    def test_internal_hyphen_kept(self):
        assert tokenize("value-for-money!") == ["value-for-money"]

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40))
    def test_tokens_never_empty_or_spaced(self, text):
        for tok in tokenize(text):
            assert tok and tok == tok.strip() and " " not in tok


class TestFilter:
    def _item(self, n_tags, n_reviews):
        reviews = [Review.from_raw(f"review {i}", 1) for i in range(n_reviews)]
        return Item("x", reviews, [["t", str(j)] for j in range(n_tags)])

    def test_few_tags_dropped(self):
        assert filter_items([self._item(3, 100)]) == []

    def test_boundary_kept(self):
        assert len(filter_items([self._item(4, 50)])) == 1

    def test_few_reviews_dropped(self):
        assert filter_items([self._item(10, 49)]) == []

    def test_idempotent(self):
        items = [self._item(n, m) for n, m in [(3, 60), (4, 50), (5, 49), (6, 70)]]
        once = filter_items(items)
        assert filter_items(once) == once


class TestVocabulary:
    def _corpus(self, counts):
        text = " ".join(tok for tok, c in counts.items() for _ in range(c))
        return [Item("x", [Review.from_raw(text, 1)], [])]

    def test_reserved_ids(self):
        vocab = build_vocabulary(self._corpus({"a": 1}), 10)
        assert (vocab.id("<pad>"), vocab.id("<unk>"), vocab.id("<bos>")) == (PAD, UNK, BOS)

    def test_frequency_order(self):
        vocab = build_vocabulary(self._corpus({"b": 1, "a": 3}), 10)
        assert vocab.id("a") < vocab.id("b")

    def test_lexicographic_ties(self):
        vocab = build_vocabulary(self._corpus({"b": 2, "a": 2}), 10)
        assert vocab.id("a") < vocab.id("b")

    def test_cap(self):
        vocab = build_vocabulary(self._corpus({c: 1 for c in "abcdefghij"}), 4)
        assert len(vocab) == 4
        assert vocab.to_list() == ["a"]

    def test_unknown_maps_to_unk(self):
        vocab = build_vocabulary(self._corpus({"a": 1}), 10)
        assert vocab.id("zzz") == UNK

    def test_bijective(self, small_corpus):
        vocab = build_vocabulary(small_corpus, 500)
        for idx in range(len(RESERVED), len(vocab)):
            assert vocab.id(vocab.token(idx)) == idx

    def test_stable_across_runs(self, small_corpus):
        assert build_vocabulary(small_corpus, 300) == build_vocabulary(list(small_corpus), 300)


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        items = [make_item(f"i{k}") for k in range(3)]
        save_dataset(items, tmp_path / "d.jsonl")
        assert load_dataset(tmp_path / "d.jsonl") == items

    def test_synthetic_round_trip(self, tmp_path, small_corpus):
        save_dataset(small_corpus, tmp_path / "d.jsonl")
        first = (tmp_path / "d.jsonl").read_bytes()
        save_dataset(load_dataset(tmp_path / "d.jsonl"), tmp_path / "e.jsonl")
        assert (tmp_path / "e.jsonl").read_bytes() == first

    def test_missing_tags_names_line(self, tmp_path):
        good = {"item_id": "a", "reviews": [{"text": "x", "salience": 1}], "tags": ["x"]}
        bad = {"item_id": "b", "reviews": [{"text": "x", "salience": 1}]}
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(DatasetFormatError) as err:
            load_dataset(path)
        assert err.value.line == 2 and err.value.field == "tags"

    def test_bad_salience_label(self, tmp_path):
        rec = {"item_id": "a", "reviews": [{"text": "x", "salience": 3}], "tags": ["x"]}
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(DatasetFormatError, match="reviews"):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        assert load_dataset(path) == []


class TestItems:
    def test_from_raw_reviews_splits_sentences(self):
        item = item_from_raw_reviews("a", [("Great food! Slow service.", 1)], ["Tasty Food"])
        assert [r.text for r in item.reviews] == [["great", "food"], ["slow", "service"]]
        assert item.gold_tags == [["tasty", "food"]]

    def test_is_present(self):
        item = make_item()
        assert is_present(["slow", "service"], item)
        assert not is_present(["service", "slow"], item)

    def test_normalize_tag(self):
        assert normalize_tag("  Hospitable   Service ") == "hospitable service"
        assert normalize_tag(["a", "b"]) == "a b"


class TestSynth:
    def test_deterministic(self):
        spec = SynthSpec(n_items=5, seed=7)
        assert synthesize_corpus(spec) == synthesize_corpus(spec)

    def test_gold_rank_matches_review_counts(self):
        lexicon = {a.tag: a for a in ASPECTS}
        for item in synthesize_corpus(SynthSpec(n_items=20, seed=1)):
            counts = []
            for tag in item.gold_tags:
                aspect = lexicon[tuple(tag)]
                words = set(aspect.nouns) | set(aspect.adjectives)
                counts.append(sum(1 for r in item.reviews
                                  if r.salience_label == 1 and words & set(r.text)))
            assert counts == sorted(counts, reverse=True)
            assert len(set(counts)) == len(counts)

    def test_some_tags_absent(self):
        items = synthesize_corpus(SynthSpec(n_items=10, seed=2))
        flags = [is_present(t, it) for it in items for t in it.gold_tags]
        assert 0 < flags.count(False)

    def test_formal_adjective_never_in_lexicon(self):
        words = {w for a in ASPECTS for w in a.nouns + a.adjectives}
        assert all(a.tag[0] not in words for a in ASPECTS)

    def test_noise_labels(self):
        items = synthesize_corpus(SynthSpec(n_items=5, seed=4, noise_fraction=0.2))
        labels = Counter(r.salience_label for it in items for r in it.reviews)
        assert labels[0] > 0 and labels[1] > labels[0]

    def test_passes_filter(self):
        items = synthesize_corpus(SynthSpec(n_items=20, seed=5))
        assert filter_items(items) == items

    def test_tag_count_range(self):
        items = synthesize_corpus(SynthSpec(n_items=30, seed=6))
        assert {it.n_tags for it in items} <= set(range(4, 9))

    def test_invalid_noise(self):
        with pytest.raises(ValueError):
            SynthSpec(noise_fraction=1.0)

    def test_split_ratio(self):
        train, valid, test = split_items(list(range(100)))
        assert (len(train), len(valid), len(test)) == (80, 10, 10)
