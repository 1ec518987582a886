"""Turning attention weights into spatiotemporal heatmaps and pixel picks.

Chaining the three masked weight matrices directly is degenerate: cross
layers have zero diagonal blocks and the self layer is block diagonal, so
the plain product's word-to-region block vanishes identically. The rollout
therefore uses the residual-corrected form 0.5 * (A + I), row-renormalized,
before multiplying the layers last-to-first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .masks import ModalityLayout
from .model import CommaModel, embed_inputs, forward
from .tensor import Tensor, no_grad

__all__ = [
    "Heatmap",
    "PixelLocation",
    "attention_rollout",
    "heatmap_from_rollout",
    "upsample",
    "mode_pixel",
    "ground",
    "write_heatmap_pgms",
    "write_heatmap_csv",
    "read_heatmap_csv",
]

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Heatmap:
    """Non-negative T x H x W attention mass over the region grid."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"heatmap must be T x H x W, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0:
            raise ValueError("heatmap entries must be finite and non-negative")
        arr = np.array(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PixelLocation:
    t: int
    y: int
    x: int


def _as_weight_matrix(weights, total: int, index: int) -> np.ndarray:
    arr = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    if arr.shape != (total, total):
        raise ValueError(f"layer {index}: weights {arr.shape} do not fit {total} tokens")
    if arr.min() < 0:
        raise ValueError(f"layer {index}: negative attention weight")
    if np.max(np.abs(arr.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
        raise ValueError(f"layer {index}: rows are not stochastic")
    return arr


def attention_rollout(layer_weights: Sequence, layout: ModalityLayout) -> np.ndarray:
    """Residual-corrected rollout over the (ca1, sa, ca2) weight matrices.

    Each layer becomes 0.5 * (A + I) with rows renormalized; the result is
    ca2_hat @ sa_hat @ ca1_hat, a row-stochastic attribution of every output
    token to every input token.
    """
    if len(layer_weights) != 3:
        raise ValueError(f"expected 3 layers of weights, got {len(layer_weights)}")
    total = layout.total
    eye = np.eye(total)
    corrected = []
    for index, weights in enumerate(layer_weights):
        arr = 0.5 * (_as_weight_matrix(weights, total, index) + eye)
        corrected.append(arr / arr.sum(axis=1, keepdims=True))
    ca1_hat, sa_hat, ca2_hat = corrected
    return ca2_hat @ sa_hat @ ca1_hat


def heatmap_from_rollout(rollout: np.ndarray, layout: ModalityLayout) -> Heatmap:
    """Mean over word rows of the word-to-region block, shaped to the grid."""
    rollout = np.asarray(rollout, dtype=np.float64)
    if rollout.shape != (layout.total, layout.total):
        raise ValueError(f"rollout {rollout.shape} does not fit layout total {layout.total}")
    block = rollout[layout.word_slice, layout.region_slice]
    return Heatmap(block.mean(axis=0).reshape(layout.grid))


def _axis_positions(src: int, dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Align-corners source indices and fractions for one axis."""
    if dst == 1 or src == 1:
        return np.zeros(dst, dtype=int), np.zeros(dst)
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    low = np.minimum(pos.astype(int), src - 2)
    return low, pos - low


def upsample(heatmap: Heatmap, target: tuple[int, int, int]) -> Heatmap:
    """Trilinear align-corners interpolation up to the target resolution.

    Extreme grid points of the source map onto the extreme target pixels, so
    source values reappear exactly at aligned positions and the output stays
    inside the source value range.
    """
    src = heatmap.shape
    if any(d < s for d, s in zip(target, src)):
        raise ValueError(f"target {target} is smaller than source {src}")
    values = heatmap.values
    for axis, (s, d) in enumerate(zip(src, target)):
        if d == s:
            continue
        low, frac = _axis_positions(s, d)
        moved = np.moveaxis(values, axis, 0)
        if s == 1:
            blended = moved[low]
        else:
            shape = (-1,) + (1,) * (moved.ndim - 1)
            blended = moved[low] * (1.0 - frac.reshape(shape)) + moved[low + 1] * frac.reshape(shape)
        values = np.moveaxis(blended, 0, axis)
    return Heatmap(np.ascontiguousarray(values))


def mode_pixel(heatmap: Heatmap) -> PixelLocation:
    """Argmax location; ties go to the first (t, y, x) in row-major order."""
    flat_index = int(np.argmax(heatmap.values))
    t, y, x = np.unravel_index(flat_index, heatmap.shape)
    return PixelLocation(t=int(t), y=int(y), x=int(x))


def ground(
    model: CommaModel,
    clip_features: Tensor,
    word_features: Tensor,
    target_resolution: tuple[int, int, int],
) -> tuple[Heatmap, PixelLocation]:
    """Full inference path: embed, attend, roll out, upsample, pick the peak."""
    _, t, h, w = clip_features.shape
    layout = ModalityLayout(n_words=word_features.shape[1], t=t, h=h, w=w)
    with no_grad():
        regions, words = embed_inputs(clip_features, word_features, model.params)
        output = forward(regions, words, layout, model.params, model.config.sa_variant)
    rollout = attention_rollout(output.attention_weights, layout)
    coarse = heatmap_from_rollout(rollout, layout)
    fine = upsample(coarse, target_resolution)
    return fine, mode_pixel(fine)


# ---------------------------------------------------------------------------
# exports: one P2 PGM per frame (shared 0-255 scale) and a raw-value CSV


def write_heatmap_pgms(heatmap: Heatmap, directory: str | Path, prefix: str = "heatmap") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    peak = float(heatmap.values.max())
    scaled = (
        np.zeros(heatmap.shape, dtype=int)
        if peak == 0.0
        else np.rint(heatmap.values / peak * 255).astype(int)
    )
    t_extent, h_extent, w_extent = heatmap.shape
    width = len(str(t_extent - 1))
    paths = []
    for frame in range(t_extent):
        lines = ["P2", f"{w_extent} {h_extent}", "255"]
        lines += [" ".join(str(v) for v in row) for row in scaled[frame]]
        path = directory / f"{prefix}_t{frame:0{width}d}.pgm"
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def write_heatmap_csv(heatmap: Heatmap, path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "y", "x", "value"])
        t_extent, h_extent, w_extent = heatmap.shape
        for t in range(t_extent):
            for y in range(h_extent):
                for x in range(w_extent):
                    writer.writerow([t, y, x, format(np.float32(heatmap.values[t, y, x]), ".9g")])


def read_heatmap_csv(path: str | Path) -> Heatmap:
    cells: dict[tuple[int, int, int], float] = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["t", "y", "x", "value"]:
            raise ValueError(f"{path}: not a heatmap CSV")
        for row in reader:
            cells[(int(row[0]), int(row[1]), int(row[2]))] = float(row[3])
    if not cells:
        raise ValueError(f"{path}: empty heatmap CSV")
    extents = tuple(max(k[i] for k in cells) + 1 for i in range(3))
    values = np.zeros(extents)
    if len(cells) != values.size:
        raise ValueError(f"{path}: incomplete heatmap grid")
    for (t, y, x), value in cells.items():
        values[t, y, x] = value
    return Heatmap(values)
