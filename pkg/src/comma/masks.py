"""Token layout and binary attention masks over a word + region sequence.

The library-wide token order is words first, then video grid regions in
(t, h, w) row-major order. A mask row is a query, a column is a key; true
means that (query, key) pair participates in attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "ModalityLayout",
    "AttentionMask",
    "SelfAttentionVariant",
    "cross_modal_mask",
    "self_attention_mask",
    "full_attention_mask",
]


@dataclass(frozen=True)
class ModalityLayout:
    """Partition of a token sequence into n_words words and t*h*w regions."""

    n_words: int
    t: int
    h: int
    w: int

    def __post_init__(self):
        if self.n_words < 1:
            raise ValueError("layout needs at least one word")
        if min(self.t, self.h, self.w) < 1:
            raise ValueError("grid extents must be positive")

    @property
    def n_regions(self) -> int:
        return self.t * self.h * self.w

    @property
    def total(self) -> int:
        return self.n_words + self.n_regions

    @property
    def grid(self) -> tuple[int, int, int]:
        return (self.t, self.h, self.w)

    @property
    def word_slice(self) -> slice:
        return slice(0, self.n_words)

    @property
    def region_slice(self) -> slice:
        return slice(self.n_words, self.total)

    def region_index(self, ti: int, hi: int, wi: int) -> int:
        """Token index of grid cell (ti, hi, wi)."""
        if not (0 <= ti < self.t and 0 <= hi < self.h and 0 <= wi < self.w):
            raise ValueError(f"cell ({ti}, {hi}, {wi}) outside grid {self.grid}")
        return self.n_words + (ti * self.h + hi) * self.w + wi

    def region_coords(self, token: int) -> tuple[int, int, int]:
        """Grid cell of a region token index (inverse of region_index)."""
        if not self.n_words <= token < self.total:
            raise ValueError(f"token {token} is not a region token")
        flat = token - self.n_words
        ti, rest = divmod(flat, self.h * self.w)
        hi, wi = divmod(rest, self.w)
        return (ti, hi, wi)


class SelfAttentionVariant(str, Enum):
    """Scope of region-to-region attention inside the self-attention layer."""

    SPATIAL = "spatial"                          # same frame only
    TEMPORAL = "temporal"                        # same grid cell across frames
    SPATIAL_PLUS_TEMPORAL = "spatial+temporal"   # union of the two above
    SPATIOTEMPORAL = "spatiotemporal"            # every region pair

    @classmethod
    def parse(cls, text: str) -> "SelfAttentionVariant":
        for variant in cls:
            if variant.value == text.strip().lower():
                return variant
        choices = ", ".join(v.value for v in cls)
        raise ValueError(f"unknown self-attention variant {text!r} (choices: {choices})")


@dataclass(frozen=True)
class AttentionMask:
    """Boolean matrix of allowed (query, key) pairs; every row allows >= 1 key."""

    allowed: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.allowed, dtype=bool)
        if arr.ndim != 2:
            raise ValueError("mask must be a matrix")
        if not arr.any(axis=1).all():
            raise ValueError("degenerate mask row (no allowed keys)")
        arr.setflags(write=False)
        object.__setattr__(self, "allowed", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.allowed.shape

    def ascii_grid(self) -> str:
        """Render as rows of 0/1 characters for debugging dumps."""
        return "\n".join("".join("1" if v else "0" for v in row) for row in self.allowed)


def cross_modal_mask(layout: ModalityLayout) -> AttentionMask:
    """Words attend only to regions and regions only to words."""
    is_word = np.zeros(layout.total, dtype=bool)
    is_word[layout.word_slice] = True
    allowed = is_word[:, None] != is_word[None, :]
    return AttentionMask(allowed)


def self_attention_mask(layout: ModalityLayout, variant: SelfAttentionVariant) -> AttentionMask:
    """Within-modality attention; region-region scope depends on the variant."""
    allowed = np.zeros((layout.total, layout.total), dtype=bool)
    allowed[layout.word_slice, layout.word_slice] = True

    frame = np.repeat(np.arange(layout.t), layout.h * layout.w)
    cell = np.tile(np.arange(layout.h * layout.w), layout.t)
    same_frame = frame[:, None] == frame[None, :]
    same_cell = cell[:, None] == cell[None, :]
    if variant is SelfAttentionVariant.SPATIAL:
        region_block = same_frame
    elif variant is SelfAttentionVariant.TEMPORAL:
        region_block = same_cell
    elif variant is SelfAttentionVariant.SPATIAL_PLUS_TEMPORAL:
        region_block = same_frame | same_cell
    elif variant is SelfAttentionVariant.SPATIOTEMPORAL:
        region_block = np.ones_like(same_frame)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unhandled variant {variant}")
    allowed[layout.region_slice, layout.region_slice] = region_block
    return AttentionMask(allowed)


def full_attention_mask(layout: ModalityLayout) -> AttentionMask:
    """Unrestricted attention over the whole sequence (baseline configuration)."""
    return AttentionMask(np.ones((layout.total, layout.total), dtype=bool))
