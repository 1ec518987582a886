"""Pointing accuracy against per-frame bounding boxes, plus the center prior.

A prediction is a hit when the argmax pixel of the frame's heatmap slice
falls inside any ground-truth box of that frame (bounds inclusive on all
four sides). Accuracy is hits / (hits + misses) over every relevant frame
of every sample.

Annotation file format (JSON Lines, one video sample per line):
    {"sample_id": str, "sentence": str, "resolution": [T0, H0, W0],
     "frames": [{"frame": int, "relevant": bool, "boxes": [[x, y, w, h], ...]}]}
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .inference import Heatmap, PixelLocation, ground
from .model import CommaModel

__all__ = [
    "BoundingBox",
    "FrameAnnotation",
    "VideoAnnotation",
    "EvalReport",
    "pointing_hit",
    "evaluate",
    "center_prior",
    "write_annotations_jsonl",
    "read_annotations_jsonl",
]


@dataclass(frozen=True)
class BoundingBox:
    """Pixel rectangle: top-left corner (x, y) plus extents (w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("box extents must be >= 1")
        if self.x < 0 or self.y < 0:
            raise ValueError("box corner must be non-negative")

    def contains(self, y: int, x: int) -> bool:
        return self.x <= x <= self.x + self.w - 1 and self.y <= y <= self.y + self.h - 1


@dataclass(frozen=True)
class FrameAnnotation:
    frame_index: int
    relevant: bool
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        if self.relevant and not self.boxes:
            raise ValueError(f"relevant frame {self.frame_index} has no boxes")
        object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class VideoAnnotation:
    sample_id: str
    sentence: str
    resolution: tuple[int, int, int]  # (T0, H0, W0)
    frames: tuple[FrameAnnotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        object.__setattr__(self, "frames", tuple(self.frames))
        t0, h0, w0 = self.resolution
        for frame in self.frames:
            if not 0 <= frame.frame_index < t0:
                raise ValueError(f"{self.sample_id}: frame {frame.frame_index} outside {t0} frames")
            for box in frame.boxes:
                if box.x + box.w > w0 or box.y + box.h > h0:
                    raise ValueError(f"{self.sample_id}: box {box} exceeds frame {h0}x{w0}")

    def relevant_frames(self) -> tuple[FrameAnnotation, ...]:
        return tuple(f for f in self.frames if f.relevant)


@dataclass(frozen=True)
class EvalReport:
    hits: int
    misses: int

    @property
    def accuracy(self) -> float:
        return self.hits / (self.hits + self.misses)

    def to_dict(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "accuracy": self.accuracy}


def pointing_hit(pixel: PixelLocation, boxes: Iterable[BoundingBox]) -> bool:
    """True when the pixel lies inside any of the boxes (inclusive bounds)."""
    return any(box.contains(pixel.y, pixel.x) for box in boxes)


def _frame_argmax(heatmap: Heatmap, frame_index: int) -> PixelLocation:
    plane = heatmap.values[frame_index]
    y, x = np.unravel_index(int(np.argmax(plane)), plane.shape)
    return PixelLocation(t=frame_index, y=int(y), x=int(x))


def _score_sample(model: CommaModel, sample) -> tuple[int, int]:
    ann: VideoAnnotation = sample.annotation
    heatmap, _ = ground(model, sample.clip_features, sample.word_features, ann.resolution)
    hits = misses = 0
    for frame in ann.relevant_frames():
        pixel = _frame_argmax(heatmap, frame.frame_index)
        if pointing_hit(pixel, frame.boxes):
            hits += 1
        else:
            misses += 1
    return hits, misses


def evaluate(model: CommaModel, samples: Sequence, threads: int = 1) -> EvalReport:
    """One prediction per relevant frame per sample, aggregated to a report."""
    if not samples:
        raise ValueError("no samples to evaluate")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(lambda s: _score_sample(model, s), samples))
    else:
        counts = [_score_sample(model, s) for s in samples]
    hits = sum(c[0] for c in counts)
    misses = sum(c[1] for c in counts)
    if hits + misses == 0:
        raise ValueError("no evaluable frames (every frame is irrelevant)")
    return EvalReport(hits=hits, misses=misses)


def center_prior(samples: Sequence) -> EvalReport:
    """Baseline predicting the center pixel of every relevant frame."""
    hits = misses = 0
    for sample in samples:
        ann: VideoAnnotation = sample.annotation
        _, h0, w0 = ann.resolution
        center = PixelLocation(t=0, y=h0 // 2, x=w0 // 2)
        for frame in ann.relevant_frames():
            if pointing_hit(center, frame.boxes):
                hits += 1
            else:
                misses += 1
    if hits + misses == 0:
        raise ValueError("no evaluable frames (every frame is irrelevant)")
    return EvalReport(hits=hits, misses=misses)


# ---------------------------------------------------------------------------
# annotation (de)serialization


def _annotation_to_dict(ann: VideoAnnotation) -> dict:
    return {
        "sample_id": ann.sample_id,
        "sentence": ann.sentence,
        "resolution": list(ann.resolution),
        "frames": [
            {
                "frame": f.frame_index,
                "relevant": f.relevant,
                "boxes": [[b.x, b.y, b.w, b.h] for b in f.boxes],
            }
            for f in ann.frames
        ],
    }


def _annotation_from_dict(data: dict) -> VideoAnnotation:
    frames = tuple(
        FrameAnnotation(
            frame_index=int(f["frame"]),
            relevant=bool(f["relevant"]),
            boxes=tuple(BoundingBox(*(int(v) for v in b)) for b in f["boxes"]),
        )
        for f in data["frames"]
    )
    return VideoAnnotation(
        sample_id=str(data["sample_id"]),
        sentence=str(data["sentence"]),
        resolution=tuple(data["resolution"]),
        frames=frames,
    )


def write_annotations_jsonl(annotations: Iterable[VideoAnnotation], path: str | Path) -> None:
    with open(path, "w") as handle:
        for ann in annotations:
            handle.write(json.dumps(_annotation_to_dict(ann), sort_keys=True) + "\n")


def read_annotations_jsonl(path: str | Path) -> list[VideoAnnotation]:
    annotations = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                annotations.append(_annotation_from_dict(json.loads(line)))
    return annotations
