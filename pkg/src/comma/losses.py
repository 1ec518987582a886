"""Contrastive objectives over a batch of clip/narration pairs.

Both losses contrast raw dot products (no temperature) and draw their
negatives from the same batch, with cross-modal attention applied to the
negative pairings too: representing a batch of n samples takes all n^2
forward passes (clip i paired with narration j).

Sentence level: for anchor i the positive logit is pooled_clip_i .
pooled_sentence_i; the negatives are (a) sentence j pooled after attending
with clip i and (b) clip j pooled after attending with narration i, j != i.

Word level: for sample i and word position j the positive logit pairs the
word's final context (from the matching clip) with the word's value vector
(an MLP of its input embedding); negatives swap in the same word's context
as produced under each non-matching clip.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .masks import ModalityLayout, SelfAttentionVariant
from .model import CommaParams, embed_inputs, forward, pool
from .tensor import Tensor, colwise_dot, dot, logsumexp, mlp2, stack, sub, sum_all

__all__ = [
    "SENTENCE_WEIGHT_DEFAULT",
    "BatchRepresentations",
    "build_batch_representations",
    "sentence_loss",
    "word_loss",
    "combined_loss",
]

# Default weight of the sentence term inside the combined objective.
SENTENCE_WEIGHT_DEFAULT = 0.005


@dataclass(frozen=True)
class BatchRepresentations:
    """Everything the losses need from the n^2 forward passes of one batch.

    ``cross_clip[i][j]`` / ``cross_sentence[i][j]`` are the pooled vectors of
    clip i attended with narration j (``None`` on the diagonal, where
    ``pos_clip`` / ``pos_sentence`` live). ``word_context[i][j]`` is the full
    D x n_words word-context matrix of that pairing, diagonal included.
    ``word_values[i]`` holds the value vectors of sample i's input words.
    """

    n: int
    pos_clip: list[Tensor]
    pos_sentence: list[Tensor]
    cross_clip: list[list[Tensor | None]]
    cross_sentence: list[list[Tensor | None]]
    word_context: list[list[Tensor]]
    word_values: list[Tensor]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("batch must hold at least one sample")
        for grid in (self.cross_clip, self.cross_sentence, self.word_context):
            if len(grid) != self.n or any(len(row) != self.n for row in grid):
                raise ValueError("cross-pair grids must be n x n")


def build_batch_representations(
    params: CommaParams,
    clips: Sequence[Tensor],
    words: Sequence[Tensor],
    layout: ModalityLayout,
    variant: SelfAttentionVariant,
) -> BatchRepresentations:
    """Embed each sample once, then run the attention stack on every pairing."""
    n = len(clips)
    if n != len(words):
        raise ValueError("clip and word sequences must pair up")
    region_tokens = []
    word_tokens = []
    for clip, word in zip(clips, words):
        regions, tokens = embed_inputs(clip, word, params)
        region_tokens.append(regions)
        word_tokens.append(tokens)

    pos_clip: list[Tensor] = []
    pos_sentence: list[Tensor] = []
    cross_clip: list[list[Tensor | None]] = [[None] * n for _ in range(n)]
    cross_sentence: list[list[Tensor | None]] = [[None] * n for _ in range(n)]
    word_context: list[list[Tensor]] = [[None] * n for _ in range(n)]  # type: ignore[list-item]
    for i in range(n):
        for j in range(n):
            out = forward(region_tokens[i], word_tokens[j], layout, params, variant)
            clip_vec, sentence_vec = pool(out, layout)
            word_context[i][j] = out.word_context
            if i == j:
                pos_clip.append(clip_vec)
                pos_sentence.append(sentence_vec)
            else:
                cross_clip[i][j] = clip_vec
                cross_sentence[i][j] = sentence_vec

    mlp = params.word_value_mlp
    word_values = [mlp2(tokens, mlp.w1, mlp.b1, mlp.w2, mlp.b2) for tokens in word_tokens]
    return BatchRepresentations(
        n=n,
        pos_clip=pos_clip,
        pos_sentence=pos_sentence,
        cross_clip=cross_clip,
        cross_sentence=cross_sentence,
        word_context=word_context,
        word_values=word_values,
    )


def sentence_loss(batch: BatchRepresentations) -> Tensor:
    """Pooled-representation contrastive loss; exactly zero for n = 1."""
    n = batch.n
    total = None
    for i in range(n):
        positive = dot(batch.pos_clip[i], batch.pos_sentence[i])
        logits = [positive]
        for j in range(n):
            if j == i:
                continue
            # sentence j read through clip i, and clip j read through narration i
            logits.append(dot(batch.pos_clip[i], batch.cross_sentence[i][j]))
            logits.append(dot(batch.cross_clip[j][i], batch.pos_sentence[i]))
        term = sub(logsumexp(stack(logits)), positive)
        total = term if total is None else total + term
    return total


def word_loss(batch: BatchRepresentations, layout: ModalityLayout) -> Tensor:
    """Word-to-context contrastive loss; exactly zero for n = 1."""
    n = batch.n
    for row in batch.word_context:
        for ctx in row:
            if ctx.shape[1] != layout.n_words:
                raise ValueError(
                    f"word context has {ctx.shape[1]} words, layout expects {layout.n_words}"
                )
    total = None
    for i in range(n):
        values = batch.word_values[i]
        # logit_rows[k][j]: context of word j of narration i under clip k,
        # dotted with the word's value vector; row k = i is the positive.
        logit_rows = [colwise_dot(batch.word_context[k][i], values) for k in range(n)]
        positives = logit_rows[i]
        term = sum_all(sub(logsumexp(stack(logit_rows), axis=0), positives))
        total = term if total is None else total + term
    return total


def combined_loss(
    batch: BatchRepresentations,
    layout: ModalityLayout,
    sentence_weight: float = SENTENCE_WEIGHT_DEFAULT,
) -> Tensor:
    """word loss + sentence_weight * sentence loss."""
    if sentence_weight < 0:
        raise ValueError("sentence_weight must be >= 0")
    return word_loss(batch, layout) + sentence_weight * sentence_loss(batch)
