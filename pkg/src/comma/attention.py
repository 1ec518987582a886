"""Masked single-head attention and the cross-/self-attention layers.

Orientation, fixed once for the whole package: with D x N token matrices,
``weights[q, k]`` is the softmax weight of key k for query q (rows are
row-stochastic over the mask), and the output context column for query q is
``sum_k weights[q, k] * values[:, k]``, i.e. ``context = values @ weights.T``.

Cross-attention uses constant identity projections, so the only interaction
between modalities happens inside the softmax weights; value features are
never summed across modalities. Self-attention carries the trainable
projection matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .masks import (
    AttentionMask,
    ModalityLayout,
    SelfAttentionVariant,
    cross_modal_mask,
    self_attention_mask,
)
from .tensor import Tensor, masked_softmax, matmul, transpose

__all__ = [
    "AttentionKind",
    "AttentionLayerParams",
    "AttentionOutput",
    "identity_attention_params",
    "masked_attention",
    "attend",
    "cross_attention_layer",
    "self_attention_layer",
]


class AttentionKind(str, Enum):
    CROSS = "cross"
    SELF = "self"


@dataclass(frozen=True)
class AttentionLayerParams:
    """Square key/query/value projections for one attention layer.

    Cross-attention layers hold exact identity constants which never appear
    in gradients; self-attention layers hold trainable parameters.
    """

    kind: AttentionKind
    w_key: Tensor
    w_query: Tensor
    w_value: Tensor

    def __post_init__(self):
        shapes = {self.w_key.shape, self.w_query.shape, self.w_value.shape}
        if len(shapes) != 1:
            raise ValueError(f"projection shapes differ: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValueError(f"projections must be square, got {shape}")
        if self.kind is AttentionKind.CROSS:
            eye = np.eye(shape[0])
            for t in (self.w_key, self.w_query, self.w_value):
                if t.name is not None or not np.array_equal(t.data, eye):
                    raise ValueError("cross-attention projections must be unnamed identities")

    @property
    def dim(self) -> int:
        return self.w_key.shape[0]


def identity_attention_params(dim: int) -> AttentionLayerParams:
    eye = Tensor(np.eye(dim))
    return AttentionLayerParams(AttentionKind.CROSS, eye, eye, eye)


@dataclass(frozen=True)
class AttentionOutput:
    """Context features plus the full weight matrix that produced them."""

    context: Tensor  # D x total
    weights: Tensor  # total x total, rows = queries, row-stochastic on the mask


def masked_attention(keys, queries, values, mask: AttentionMask) -> AttentionOutput:
    """Scaled dot-product attention restricted to a binary mask.

    ``keys``, ``queries`` and ``values`` are D x N matrices; the similarity of
    query q and key k is ``queries[:, q] . keys[:, k] / sqrt(D)``.
    """
    if keys.shape != queries.shape or keys.shape != values.shape:
        raise ValueError(
            f"key/query/value shapes differ: {keys.shape}, {queries.shape}, {values.shape}"
        )
    dim, count = keys.shape
    allowed = mask.allowed if isinstance(mask, AttentionMask) else np.asarray(mask, bool)
    if allowed.shape != (count, count):
        raise ValueError(f"mask shape {allowed.shape} does not fit {count} tokens")
    logits = matmul(transpose(queries), keys) * (1.0 / math.sqrt(dim))
    weights = masked_softmax(logits, allowed)
    context = matmul(values, transpose(weights))
    return AttentionOutput(context=context, weights=weights)


def attend(tokens: Tensor, params: AttentionLayerParams, mask: AttentionMask) -> AttentionOutput:
    """Apply one attention layer's projections, then masked attention."""
    if tokens.ndim != 2 or tokens.shape[0] != params.dim:
        raise ValueError(f"tokens {tokens.shape} do not match projection dim {params.dim}")
    if params.kind is AttentionKind.CROSS:
        # identity projections: skip the multiplications, the result is identical
        keys = queries = values = tokens
    else:
        keys = matmul(params.w_key, tokens)
        queries = matmul(params.w_query, tokens)
        values = matmul(params.w_value, tokens)
    return masked_attention(keys, queries, values, mask)


def cross_attention_layer(tokens: Tensor, layout: ModalityLayout) -> AttentionOutput:
    """Bidirectional cross-modal attention: each modality reads the other."""
    _check_tokens(tokens, layout)
    return attend(tokens, identity_attention_params(tokens.shape[0]), cross_modal_mask(layout))


def self_attention_layer(
    tokens: Tensor,
    layout: ModalityLayout,
    params: AttentionLayerParams,
    variant: SelfAttentionVariant,
) -> AttentionOutput:
    """Within-modality attention with trainable projections."""
    _check_tokens(tokens, layout)
    if params.kind is not AttentionKind.SELF:
        raise ValueError("self_attention_layer needs self-attention parameters")
    return attend(tokens, params, self_attention_mask(layout, variant))


def _check_tokens(tokens: Tensor, layout: ModalityLayout) -> None:
    if tokens.ndim != 2 or tokens.shape[1] != layout.total:
        raise ValueError(f"tokens {tokens.shape} do not match layout total {layout.total}")
