"""Contrastive losses against direct-formula oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comma.losses import (
    BatchRepresentations,
    build_batch_representations,
    combined_loss,
    sentence_loss,
    word_loss,
)
from comma.masks import ModalityLayout
from comma.model import CommaConfig, init_params
from comma.tensor import Tensor, no_grad, tensor


def make_reps(n, d, n_words, rng) -> BatchRepresentations:
    """Hand-assembled representations with random vectors (no model involved)."""
    cross_clip = [[None] * n for _ in range(n)]
    cross_sentence = [[None] * n for _ in range(n)]
    word_context = [[tensor(rng.normal(size=(d, n_words))) for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                cross_clip[i][j] = tensor(rng.normal(size=d))
                cross_sentence[i][j] = tensor(rng.normal(size=d))
    return BatchRepresentations(
        n=n,
        pos_clip=[tensor(rng.normal(size=d)) for _ in range(n)],
        pos_sentence=[tensor(rng.normal(size=d)) for _ in range(n)],
        cross_clip=cross_clip,
        cross_sentence=cross_sentence,
        word_context=word_context,
        word_values=[tensor(rng.normal(size=(d, n_words))) for _ in range(n)],
    )


def sentence_oracle(batch) -> float:
    """Direct formula with raw exp/log, no shared code with the library."""
    total = 0.0
    for i in range(batch.n):
        pos = float(batch.pos_clip[i].data @ batch.pos_sentence[i].data)
        denom = math.exp(pos)
        for j in range(batch.n):
            if j == i:
                continue
            denom += math.exp(float(batch.pos_clip[i].data @ batch.cross_sentence[i][j].data))
            denom += math.exp(float(batch.cross_clip[j][i].data @ batch.pos_sentence[i].data))
        total += -math.log(math.exp(pos) / denom)
    return total


def word_oracle(batch) -> float:
    total = 0.0
    n_words = batch.word_values[0].shape[1]
    for i in range(batch.n):
        for j in range(n_words):
            value = batch.word_values[i].data[:, j]
            pos = float(batch.word_context[i][i].data[:, j] @ value)
            denom = math.exp(pos)
            for k in range(batch.n):
                if k != i:
                    denom += math.exp(float(batch.word_context[k][i].data[:, j] @ value))
            total += -math.log(math.exp(pos) / denom)
    return total


class TestSentenceLoss:
    def test_single_sample_is_exactly_zero(self):
        batch = make_reps(1, 4, 2, np.random.default_rng(0))
        assert sentence_loss(batch).item() == 0.0

    def test_symmetric_two_sample_case(self):
        # equal dot products everywhere: each term is -log(1/3)
        d = 3
        v = tensor(np.zeros(d))
        batch = BatchRepresentations(
            n=2,
            pos_clip=[v, v],
            pos_sentence=[v, v],
            cross_clip=[[None, v], [v, None]],
            cross_sentence=[[None, v], [v, None]],
            word_context=[[tensor(np.zeros((d, 1)))] * 2] * 2,
            word_values=[tensor(np.zeros((d, 1)))] * 2,
        )
        assert abs(sentence_loss(batch).item() - 2 * math.log(3.0)) <= 1e-12

    @given(st.integers(0, 10_000), st.integers(2, 4))
    @settings(max_examples=50, deadline=None)
    def test_matches_direct_oracle(self, seed, n):
        batch = make_reps(n, 4, 2, np.random.default_rng(seed))
        assert abs(sentence_loss(batch).item() - sentence_oracle(batch)) <= 1e-10

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_raising_positive_logit_lowers_loss(self, seed):
        rng = np.random.default_rng(seed)
        batch = make_reps(3, 8, 2, rng)
        base = sentence_loss(batch).item()
        shifted = _with_bumped_positives(batch, 1.0)
        # sanity: every negative logit is untouched by the bump
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                a = batch.cross_clip[j][i].data @ batch.pos_sentence[i].data
                b = shifted.cross_clip[j][i].data @ shifted.pos_sentence[i].data
                assert abs(a - b) <= 1e-9
        assert sentence_loss(shifted).item() < base

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(5)
        batch = make_reps(3, 4, 2, rng)
        perm = [2, 0, 1]
        permuted = BatchRepresentations(
            n=3,
            pos_clip=[batch.pos_clip[p] for p in perm],
            pos_sentence=[batch.pos_sentence[p] for p in perm],
            cross_clip=[[batch.cross_clip[p][q] for q in perm] for p in perm],
            cross_sentence=[[batch.cross_sentence[p][q] for q in perm] for p in perm],
            word_context=[[batch.word_context[p][q] for q in perm] for p in perm],
            word_values=[batch.word_values[p] for p in perm],
        )
        assert abs(sentence_loss(batch).item() - sentence_loss(permuted).item()) <= 1e-12
        layout = ModalityLayout(n_words=2, t=1, h=1, w=1)
        assert abs(word_loss(batch, layout).item() - word_loss(permuted, layout).item()) <= 1e-12


def _with_bumped_positives(batch, bump):
    """Raise each positive dot product while leaving every negative logit fixed.

    The sentence vector moves along the component of its positive clip vector
    that is orthogonal to all negative clip vectors, so cross terms with
    ``pos_sentence`` cannot change.
    """
    new_pos_sentence = []
    for i in range(batch.n):
        c = batch.pos_clip[i].data
        negatives = [batch.cross_clip[j][i].data for j in range(batch.n) if j != i]
        direction = np.array(c)
        if negatives:
            basis, _ = np.linalg.qr(np.stack(negatives, axis=1))
            direction = direction - basis @ (basis.T @ direction)
        gain = float(c @ direction)
        assert gain > 1e-9, "degenerate geometry for this seed"
        new_pos_sentence.append(
            tensor(batch.pos_sentence[i].data + bump * direction / gain)
        )
    return BatchRepresentations(
        n=batch.n,
        pos_clip=batch.pos_clip,
        pos_sentence=new_pos_sentence,
        cross_clip=batch.cross_clip,
        cross_sentence=batch.cross_sentence,
        word_context=batch.word_context,
        word_values=batch.word_values,
    )


class TestWordLoss:
    layout = ModalityLayout(n_words=3, t=1, h=1, w=1)

    def test_single_sample_is_exactly_zero(self):
        batch = make_reps(1, 4, 3, np.random.default_rng(1))
        assert word_loss(batch, self.layout).item() == 0.0

    def test_symmetric_two_sample_case(self):
        d, n_words = 3, 3
        zero_ctx = tensor(np.zeros((d, n_words)))
        batch = BatchRepresentations(
            n=2,
            pos_clip=[tensor(np.zeros(d))] * 2,
            pos_sentence=[tensor(np.zeros(d))] * 2,
            cross_clip=[[None, tensor(np.zeros(d))], [tensor(np.zeros(d)), None]],
            cross_sentence=[[None, tensor(np.zeros(d))], [tensor(np.zeros(d)), None]],
            word_context=[[zero_ctx, zero_ctx], [zero_ctx, zero_ctx]],
            word_values=[zero_ctx, zero_ctx],
        )
        expect = n_words * 2 * math.log(2.0)
        assert abs(word_loss(batch, self.layout).item() - expect) <= 1e-12

    @given(st.integers(0, 10_000), st.integers(2, 4))
    @settings(max_examples=50, deadline=None)
    def test_matches_direct_oracle(self, seed, n):
        batch = make_reps(n, 4, 3, np.random.default_rng(seed))
        assert abs(word_loss(batch, self.layout).item() - word_oracle(batch)) <= 1e-10

    def test_word_count_mismatch_rejected(self):
        batch = make_reps(2, 4, 3, np.random.default_rng(2))
        with pytest.raises(ValueError, match="word"):
            word_loss(batch, ModalityLayout(n_words=2, t=1, h=1, w=1))

    def test_terms_positive_for_multi_sample_batches(self):
        batch = make_reps(3, 4, 3, np.random.default_rng(3))
        assert word_loss(batch, self.layout).item() > 0.0
        assert sentence_loss(batch).item() > 0.0


class TestCombinedLoss:
    layout = ModalityLayout(n_words=2, t=1, h=1, w=1)

    def test_zero_weight_equals_word_loss(self):
        batch = make_reps(3, 4, 2, np.random.default_rng(4))
        assert (
            combined_loss(batch, self.layout, sentence_weight=0.0).item()
            == word_loss(batch, self.layout).item()
        )

    def test_single_sample_zero(self):
        batch = make_reps(1, 4, 2, np.random.default_rng(5))
        assert combined_loss(batch, self.layout).item() == 0.0

    def test_recomposition(self):
        batch = make_reps(3, 4, 2, np.random.default_rng(6))
        expect = word_loss(batch, self.layout).item() + 0.005 * sentence_loss(batch).item()
        assert abs(combined_loss(batch, self.layout, 0.005).item() - expect) <= 1e-12

    def test_negative_weight_rejected(self):
        batch = make_reps(2, 4, 2, np.random.default_rng(7))
        with pytest.raises(ValueError):
            combined_loss(batch, self.layout, sentence_weight=-1.0)


class TestBuildBatchRepresentations:
    def test_structure_and_cross_pair_count(self):
        rng = np.random.default_rng(8)
        layout = ModalityLayout(n_words=2, t=1, h=2, w=1)
        cfg = CommaConfig(d_video_in=3, d_word_in=2, d=4, seed=9)
        params = init_params(cfg)
        clips = [Tensor(rng.normal(size=(3, 1, 2, 1))) for _ in range(3)]
        words = [Tensor(rng.normal(size=(2, 2))) for _ in range(3)]
        with no_grad():
            reps = build_batch_representations(params, clips, words, layout, cfg.sa_variant)
        assert reps.n == 3
        assert len(reps.pos_clip) == len(reps.pos_sentence) == 3
        for i in range(3):
            assert reps.cross_clip[i][i] is None
            for j in range(3):
                assert reps.word_context[i][j].shape == (4, 2)
                if i != j:
                    assert reps.cross_clip[i][j].shape == (4,)

    def test_positive_pair_matches_standalone_forward(self):
        from comma.model import embed_inputs, forward, pool

        rng = np.random.default_rng(10)
        layout = ModalityLayout(n_words=2, t=1, h=1, w=2)
        cfg = CommaConfig(d_video_in=3, d_word_in=2, d=4, seed=11)
        params = init_params(cfg)
        clips = [Tensor(rng.normal(size=(3, 1, 1, 2))) for _ in range(2)]
        words = [Tensor(rng.normal(size=(2, 2))) for _ in range(2)]
        with no_grad():
            reps = build_batch_representations(params, clips, words, layout, cfg.sa_variant)
            regions, tokens = embed_inputs(clips[1], words[1], params)
            out = forward(regions, tokens, layout, params, cfg.sa_variant)
            clip_vec, sent_vec = pool(out, layout)
        assert np.array_equal(reps.pos_clip[1].data, clip_vec.data)
        assert np.array_equal(reps.pos_sentence[1].data, sent_vec.data)
