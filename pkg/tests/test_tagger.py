import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from aotnet.cluster_rank import OpinionCluster, flatten_memory
from aotnet.corpus import BOS
from aotnet.tagger import (TagDecoder, alignment_loss, foc_attention_mass, foc_set, focus_mask,
                           generation_loss, greedy_decode, prepare_targets, segment_tags, tag_indices)

VOCAB = 20


def make_memory(lengths=(3, 2, 2, 1, 2), ranks=(1, 2, 3, 4, 5), d_model=12, ids=None, seed=0):
    gen = torch.Generator().manual_seed(seed)
    n = len(lengths)
    width = max(lengths)
    words = torch.randn(n, width, d_model, generator=gen, dtype=torch.float64)
    if ids is None:
        ids = torch.randint(3, VOCAB, (n, width), generator=gen)
    clusters = []
    for review, rank in enumerate(ranks):
        c = OpinionCluster([review], np.zeros(1), [0.0])
        c.rank = rank
        clusters.append(c)
    return flatten_memory(clusters, words, list(lengths), ids)


def make_decoder(layers=2, n_focused=3, max_tags=5):
    emb = nn.Embedding(VOCAB, 8, padding_idx=0)
    dec = TagDecoder(emb, d_model=12, n_heads=2, d_ff=16, n_layers=layers,
                     max_tags=max_tags, n_focused=n_focused).double()
    dec.eval()
    return dec


class TestTargets:
    def test_example(self):
        seq = prepare_targets([["good", "service"], ["fresh", "food"]], {"good": 5, "service": 6,
                                                                       "fresh": 7, "food": 8}.get)
        assert seq.ids == [BOS, 5, 6, BOS, 7, 8]
        assert seq.tag_index == [1, 1, 1, 2, 2, 2]
        assert seq.position == [0, 1, 2, 0, 1, 2]

    def test_single_tag(self):
        seq = prepare_targets([["x"]], lambda t: 9)
        assert seq.ids == [BOS, 9]

    def test_empty_tag_raises(self):
        with pytest.raises(ValueError):
            prepare_targets([["a"], []], lambda t: 3)

    @given(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=3), min_size=1, max_size=5))
    def test_segment_round_trip(self, tags):
        seq = prepare_targets(tags, lambda t: 3)
        assert segment_tags(seq.tokens) == tags

    def test_tag_indices_capped(self):
        assert tag_indices([BOS, 5, BOS, 6, BOS, BOS], 2) == [1, 1, 2, 2, 2, 2]


class TestFocSet:
    @pytest.mark.parametrize("j, k, f, expected", [
        (2, 10, 3, {1, 2, 3}), (1, 10, 3, {1, 2, 3}), (5, 3, 3, {1, 2, 3}),
        (10, 10, 3, {8, 9, 10}), (5, 10, 5, {3, 4, 5, 6, 7}), (1, 1, 3, {1}), (4, 2, 3, {1, 2}),
    ])
    def test_examples(self, j, k, f, expected):
        assert set(foc_set(j, k, f).focused) == expected

    @given(st.integers(1, 25), st.integers(1, 20), st.sampled_from([1, 3, 5, 7]))
    def test_partition(self, j, k, f):
        spec = foc_set(j, k, f)
        assert len(spec.focused) == min(f, k)
        assert spec.focused | spec.outer == set(range(1, k + 1))
        assert not spec.focused & spec.outer
        ranks = sorted(spec.focused)
        assert ranks == list(range(ranks[0], ranks[-1] + 1))
        if j <= k:
            assert j in spec.focused

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            foc_set(1, 5, 2)

    def test_mask(self):
        ranks = torch.tensor([1, 1, 2, 4, 5])
        mask = focus_mask(ranks, [1, 5], 5, 3)
        np.testing.assert_array_equal(mask.numpy(), [[1, 1, 1, 0, 0], [0, 0, 0, 1, 1]])


class TestAlignment:
    def test_tag_addend_difference(self):
        dec = make_decoder()
        tok = torch.tensor([7, 7])
        out = dec.embed_target_token(tok, torch.tensor([1, 2]), positions=torch.tensor([0, 0]))
        table = dec.alignment.table.weight
        torch.testing.assert_close(out[0] - out[1], dec.alignment.w_rt(table[1] - table[2]))

    def test_zero_table_reduces_to_embedding(self):
        dec = make_decoder()
        with torch.no_grad():
            dec.alignment.table.weight.zero_()
        ids = torch.tensor([4, 5, 6])
        with_aln = dec.embed_target_token(ids, torch.tensor([1, 1, 2]))
        dec.use_alignment = False
        torch.testing.assert_close(with_aln, dec.embed_target_token(ids, torch.tensor([1, 1, 2])))

    def test_tag_index_too_large(self):
        dec = make_decoder(max_tags=3)
        with pytest.raises(ValueError):
            dec.embed_target_token(torch.tensor([4]), torch.tensor([4]))

    def test_outer_clusters_get_rank_zero(self):
        dec = make_decoder()
        memory = make_memory()
        spec = foc_set(1, 5, 3)
        aligned = dec.align_memory(memory, spec)
        focused, outer = dec.alignment.memory_addends(torch.tensor([1]))
        ranks = memory.cluster_ranks
        torch.testing.assert_close(aligned[ranks <= 3], memory.vectors[ranks <= 3] + focused)
        torch.testing.assert_close(aligned[ranks > 3], memory.vectors[ranks > 3] + outer)

    def test_zero_features_leave_memory(self):
        dec = make_decoder()
        with torch.no_grad():
            dec.alignment.table.weight.zero_()
        memory = make_memory()
        torch.testing.assert_close(dec.align_memory(memory, foc_set(2, 5, 3)), memory.vectors)

    def test_projected_addends_match_explicit_memory(self):
        # attention over explicitly aligned memory equals the on-the-fly version
        dec = make_decoder(layers=1)
        memory = make_memory()
        cross = dec.layers[0].cross_attn
        query = torch.randn(2, 12, dtype=torch.float64)
        index = torch.tensor([1, 4])
        foc = focus_mask(memory.cluster_ranks, index.tolist(), 5, 3, torch.float64)
        f_add, o_add = dec.alignment.memory_addends(index)
        fast, fast_w = cross(query, memory.vectors, foc, f_add, o_add)
        for t, j in enumerate(index.tolist()):
            explicit = dec.align_memory(memory, foc_set(j, 5, 3))
            slow, slow_w = cross(query[t:t + 1], explicit)
            torch.testing.assert_close(fast[t], slow[0])
            torch.testing.assert_close(fast_w[:, t], slow_w[:, 0])


class TestDecodeStep:
    def _forward(self, dec=None, n_extended=VOCAB + 3):
        dec = dec or make_decoder()
        memory = make_memory(ids=torch.tensor([[5, 6, VOCAB], [7, VOCAB + 1, 0], [5, 8, 0],
                                               [9, 0, 0], [VOCAB + 2, 4, 0]]))
        inputs = torch.tensor([BOS, 5, 6, BOS, 7])
        out = dec(memory, inputs, torch.tensor(tag_indices(inputs.tolist(), 5)), n_extended)
        return dec, memory, out

    def test_distributions_normalized(self):
        _, _, out = self._forward()
        np.testing.assert_allclose(out.probs.sum(-1).detach().numpy(), 1.0, atol=1e-6)
        np.testing.assert_allclose(out.head_attention.sum(-1).detach().numpy(), 1.0, atol=1e-12)

    def test_gate_one_gives_vocab_distribution(self):
        dec = make_decoder()
        with torch.no_grad():
            dec.gate.weight.zero_()
            dec.gate.bias.fill_(800.0)
        _, _, out = self._forward(dec)
        torch.testing.assert_close(out.probs[:, :VOCAB], out.vocab_probs)
        assert (out.probs[:, VOCAB:] == 0).all()

    def test_source_only_word(self):
        _, memory, out = self._forward()
        slot = (memory.token_ids == VOCAB + 1).nonzero().item()
        g = out.p_gen.detach()
        a = out.attention[:, slot].detach()
        torch.testing.assert_close(out.probs[:, VOCAB + 1].detach(), (1 - g) * a)

    def test_copy_sums_repeated_word(self):
        _, memory, out = self._forward()
        slots = (memory.token_ids == 5).nonzero().flatten()
        g = out.p_gen.detach()
        expected = g * out.vocab_probs[:, 5].detach() + (1 - g) * out.attention[:, slots].sum(-1).detach()
        torch.testing.assert_close(out.probs[:, 5].detach(), expected)

    def test_causal(self):
        dec = make_decoder()
        memory = make_memory()
        base = torch.tensor([BOS, 5, 6, BOS, 7])
        changed = base.clone()
        changed[3] = 9
        idx = torch.tensor([1, 1, 1, 2, 2])
        a = dec(memory, base, idx).probs
        b = dec(memory, changed, idx).probs
        torch.testing.assert_close(a[:3], b[:3])
        assert not torch.allclose(a[3], b[3])

    def test_missing_token_ids(self):
        dec = make_decoder()
        memory = make_memory()
        memory.token_ids = None
        with pytest.raises(ValueError):
            dec(memory, torch.tensor([BOS]), torch.tensor([1]))


class TestLosses:
    def test_perfect_model(self):
        probs = torch.eye(4, dtype=torch.float64)[:3]
        assert generation_loss(probs, torch.tensor([0, 1, 2])).item() == 0.0

    def test_uniform(self):
        probs = torch.full((3, 10), 0.1, dtype=torch.float64)
        assert generation_loss(probs, torch.tensor([1, 4, 9])).item() == pytest.approx(6.9078, abs=1e-4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            generation_loss(torch.full((2, 4), 0.25), torch.tensor([1]))

    def test_smoothing_needs_vocab(self):
        with pytest.raises(ValueError):
            generation_loss(torch.full((1, 4), 0.25), torch.tensor([1]), smoothing=0.1)

    def test_smoothing_uniform_vocab_unchanged(self):
        probs = torch.full((2, 10), 0.1, dtype=torch.float64)
        plain = generation_loss(probs, torch.tensor([3, 4]))
        smooth = generation_loss(probs, torch.tensor([3, 4]), smoothing=0.1, vocab_probs=probs)
        assert smooth.item() == pytest.approx(plain.item(), rel=1e-12)

    def test_generation_gradient(self):
        torch.manual_seed(3)
        dec = make_decoder()
        memory = make_memory()
        inputs = torch.tensor([BOS, 5, 6, BOS, 7])
        targets = torch.tensor([5, 6, BOS, 7, BOS])
        idx = torch.tensor(tag_indices(inputs.tolist(), 5))
        params = [p for p in dec.parameters()]

        def loss():
            out = dec(memory, inputs, idx, VOCAB)
            return generation_loss(out.probs, targets) + alignment_loss(out.attention, out.focus)

        dec.zero_grad()
        loss().backward()
        rng = np.random.default_rng(1)
        direction = [torch.from_numpy(rng.standard_normal(p.shape)) for p in params]
        analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, direction) if p.grad is not None)
        eps = 1e-6
        base = [p.detach().clone() for p in params]
        with torch.no_grad():
            for p, b, d in zip(params, base, direction):
                p.copy_(b + eps * d)
            plus = loss().item()
            for p, b, d in zip(params, base, direction):
                p.copy_(b - eps * d)
            minus = loss().item()
            for p, b in zip(params, base):
                p.copy_(b)
        numeric = (plus - minus) / (2 * eps)
        assert abs(numeric - analytic) <= 1e-4 * max(abs(analytic), 1e-6)

    def test_alignment_symmetric(self):
        attn = torch.tensor([[0.25, 0.25, 0.25, 0.25]], dtype=torch.float64)
        foc = torch.tensor([[1.0, 1.0, 0.0, 0.0]], dtype=torch.float64)
        assert alignment_loss(attn, foc).item() == pytest.approx(0.0, abs=1e-12)

    def test_alignment_three_quarters(self):
        attn = torch.tensor([[0.5, 0.25, 0.25]], dtype=torch.float64)
        foc = torch.tensor([[1.0, 1.0, 0.0]], dtype=torch.float64)
        # -log 0.75 + log 0.25 = -log 3
        assert alignment_loss(attn, foc).item() == pytest.approx(-math.log(3), abs=1e-4)

    def test_alignment_clamped(self):
        attn = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        foc = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        assert alignment_loss(attn, foc).item() == pytest.approx(-math.log(1 - 1e-8) + math.log(1e-8))


class TestFocMass:
    def test_uniform(self):
        trace = (torch.full((2, 4), 0.25), torch.tensor([[1.0, 1, 0, 0]] * 2))
        assert foc_attention_mass([trace]) == pytest.approx((0.5, 0.5))

    def test_all_focused(self):
        trace = (torch.tensor([[0.6, 0.4, 0.0]]), torch.tensor([[1.0, 1.0, 0.0]]))
        assert foc_attention_mass([trace]) == pytest.approx((1.0, 0.0))

    def test_loop_oracle(self):
        rng = np.random.default_rng(4)
        traces, per_item = [], []
        for _ in range(2):
            attn = rng.dirichlet(np.ones(5), size=3)
            foc = (rng.random((3, 5)) > 0.5).astype(float)
            traces.append((attn, foc))
            steps = [sum(a * f for a, f in zip(attn[t], foc[t])) / sum(attn[t]) for t in range(3)]
            per_item.append(sum(steps) / 3)
        m_f, m_o = foc_attention_mass(traces)
        assert m_f == pytest.approx(sum(per_item) / 2, rel=1e-12)
        assert m_f + m_o == pytest.approx(1.0)

    def test_no_traces(self):
        with pytest.raises(ValueError):
            foc_attention_mass([])


class TestGreedyDecode:
    def test_stops_at_limit(self):
        dec = make_decoder()
        result = greedy_decode(dec, make_memory(), VOCAB, max_steps=7)
        assert len(result.tokens) <= 7
        assert len(result.attention) == len(result.tokens) == len(result.tag_index)

    def test_double_bos_terminates(self):
        dec = make_decoder()
        with torch.no_grad():
            dec.gate.bias.fill_(800.0)
            dec.out.weight.zero_()
            dec.out.bias.zero_()
            dec.out.bias[BOS] = 50.0
        result = greedy_decode(dec, make_memory(), VOCAB)
        assert result.tokens == [BOS]

    @given(st.integers(0, 500))
    @settings(max_examples=10, deadline=None)
    def test_tag_index_non_decreasing(self, seed):
        torch.manual_seed(seed)
        result = greedy_decode(make_decoder(), make_memory(seed=seed), VOCAB, max_steps=12)
        assert result.tag_index == sorted(result.tag_index)
