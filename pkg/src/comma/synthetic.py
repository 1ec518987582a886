"""Seeded synthetic narrated-grounding benchmark.

Every vocabulary token owns a fixed (word vector, visual vector) prototype
pair. A sample picks a target token, writes the target's visual prototype
into one random grid cell of each relevant frame on top of Gaussian
background noise, scatters distractor prototypes (tokens absent from the
sample's sentence) over other cells, and emits a word sequence holding the
target plus random fillers. Temporal jitter removes the target from a
fraction of the frames, imitating narrations that only loosely align with
what is on screen. Ground-truth boxes are the planted cell's exact pixel
footprint at the input resolution, so a perfect grounder scores 1.0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import (
    BoundingBox,
    FrameAnnotation,
    VideoAnnotation,
    read_annotations_jsonl,
    write_annotations_jsonl,
)
from .tensor import Tensor, read_tensor_file, write_tensor_file

__all__ = [
    "SynthConfig",
    "GroundingSample",
    "ChanceEstimate",
    "generate",
    "chance_accuracy",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 16
    n_samples: int = 640
    t: int = 2
    h: int = 4
    w: int = 4
    d_video_in: int = 32
    d_word_in: int = 32
    words_per_sample: int = 2
    noise_std: float = 0.1
    distractor_count: int = 2
    temporal_jitter: float = 0.25
    input_t: int = 16
    input_h: int = 64
    input_w: int = 64
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.t, self.h, self.w, self.input_t, self.input_h, self.input_w) < 1:
            raise ValueError("grid and resolution extents must be positive")
        if self.words_per_sample < 1 or self.vocab_size < self.words_per_sample:
            raise ValueError("vocab must cover the words of one sample")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0.0 <= self.temporal_jitter <= 1.0:
            raise ValueError("temporal_jitter must lie in [0, 1]")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be >= 0")
        if self.distractor_count + 1 > self.h * self.w:
            raise ValueError("distractors exceed available grid cells")
        if self.distractor_count > self.vocab_size - self.words_per_sample:
            raise ValueError("distractors exceed tokens outside the sentence")
        if self.input_t < self.t or self.input_h < self.h or self.input_w < self.w:
            raise ValueError("input resolution must be at least the grid size")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return (self.input_t, self.input_h, self.input_w)

    @property
    def n_train(self) -> int:
        return int(self.n_samples * self.train_fraction)

    def absent_frames_per_sample(self) -> int:
        # round-half-up share of coarse frames that omit the target prototype
        return int(math.floor(self.temporal_jitter * self.t + 0.5))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class GroundingSample:
    """One clip/sentence pair with per-frame pixel annotations."""

    sample_id: str
    clip_features: Tensor  # d_video_in x t x h x w
    word_features: Tensor  # d_word_in x words_per_sample
    annotation: VideoAnnotation
    tokens: tuple[int, ...] = ()
    target_token: int = -1
    target_cells: dict = field(default_factory=dict)  # coarse frame -> (hi, wi)


def _cell_box(cfg: SynthConfig, hi: int, wi: int) -> BoundingBox:
    y0 = hi * cfg.input_h // cfg.h
    y1 = (hi + 1) * cfg.input_h // cfg.h
    x0 = wi * cfg.input_w // cfg.w
    x1 = (wi + 1) * cfg.input_w // cfg.w
    return BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def generate(cfg: SynthConfig) -> tuple[list[GroundingSample], list[GroundingSample]]:
    """Produce (train, test) lists; bit-identical for identical configs."""
    absent_count = cfg.absent_frames_per_sample()
    if absent_count >= cfg.t:
        raise ValueError("temporal_jitter leaves no relevant frames per sample")
    rng = np.random.default_rng(cfg.seed)
    word_proto = rng.normal(size=(cfg.d_word_in, cfg.vocab_size))
    vis_proto = rng.normal(size=(cfg.d_video_in, cfg.vocab_size))

    samples: list[GroundingSample] = []
    n_train = cfg.n_train
    for index in range(cfg.n_samples):
        split = "train" if index < n_train else "test"
        local = index if index < n_train else index - n_train
        sample_id = f"{split}-{local:04d}"

        target = int(rng.integers(cfg.vocab_size))
        others = np.setdiff1d(np.arange(cfg.vocab_size), [target])
        fillers = rng.choice(others, size=cfg.words_per_sample - 1, replace=False)
        tokens = rng.permutation(np.concatenate([[target], fillers])).astype(int)
        absent = set(rng.choice(cfg.t, size=absent_count, replace=False).tolist())

        clip = rng.normal(0.0, cfg.noise_std, size=(cfg.d_video_in, cfg.t, cfg.h, cfg.w))
        pool = np.setdiff1d(np.arange(cfg.vocab_size), tokens)
        target_cells: dict[int, tuple[int, int]] = {}
        for frame in range(cfg.t):
            planted = [] if frame in absent else [target]
            if cfg.distractor_count:
                planted += rng.choice(pool, size=cfg.distractor_count, replace=False).tolist()
            cells = rng.choice(cfg.h * cfg.w, size=len(planted), replace=False)
            for slot, (token, cell) in enumerate(zip(planted, cells)):
                hi, wi = divmod(int(cell), cfg.w)
                clip[:, frame, hi, wi] += vis_proto[:, token]
                if slot == 0 and frame not in absent:
                    target_cells[frame] = (hi, wi)

        frames = []
        for f in range(cfg.input_t):
            coarse = f * cfg.t // cfg.input_t
            if coarse in target_cells:
                box = _cell_box(cfg, *target_cells[coarse])
                frames.append(FrameAnnotation(frame_index=f, relevant=True, boxes=(box,)))
            else:
                frames.append(FrameAnnotation(frame_index=f, relevant=False, boxes=()))
        annotation = VideoAnnotation(
            sample_id=sample_id,
            sentence=" ".join(f"token{k}" for k in tokens),
            resolution=cfg.resolution,
            frames=tuple(frames),
        )
        samples.append(
            GroundingSample(
                sample_id=sample_id,
                clip_features=Tensor(clip),
                word_features=Tensor(word_proto[:, tokens]),
                annotation=annotation,
                tokens=tuple(int(k) for k in tokens),
                target_token=target,
                target_cells=target_cells,
            )
        )
    return samples[:n_train], samples[n_train:]


@dataclass(frozen=True)
class ChanceEstimate:
    """Monte-Carlo pointing accuracy of a uniform-random pixel predictor."""

    accuracy: float
    ci_low: float
    ci_high: float
    draws: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "draws": self.draws,
        }


def chance_accuracy(
    cfg: SynthConfig,
    draws: int = 10_000,
    samples: Sequence[GroundingSample] | None = None,
) -> ChanceEstimate:
    """Uniform-pixel baseline on the test split, with a 95% binomial CI."""
    if samples is None:
        _, samples = generate(cfg)
    frames = [
        (sample.annotation.resolution, frame)
        for sample in samples
        for frame in sample.annotation.relevant_frames()
    ]
    if not frames:
        raise ValueError("no relevant frames to sample from")
    rng = np.random.default_rng([cfg.seed, 1])
    hits = 0
    for _ in range(draws):
        (_, h0, w0), frame = frames[rng.integers(len(frames))]
        y = int(rng.integers(h0))
        x = int(rng.integers(w0))
        if any(box.contains(y, x) for box in frame.boxes):
            hits += 1
    p = hits / draws
    half = 1.96 * math.sqrt(max(p * (1.0 - p), 1e-12) / draws)
    return ChanceEstimate(
        accuracy=p, ci_low=max(0.0, p - half), ci_high=min(1.0, p + half), draws=draws
    )


# ---------------------------------------------------------------------------
# on-disk layout: manifest.json + annotations.jsonl + samples/*.cmma

DATASET_MANIFEST = "manifest.json"
DATASET_ANNOTATIONS = "annotations.jsonl"


def save_dataset(
    directory: str | Path,
    cfg: SynthConfig,
    train: Sequence[GroundingSample],
    test: Sequence[GroundingSample],
) -> Path:
    directory = Path(directory)
    (directory / "samples").mkdir(parents=True, exist_ok=True)
    annotations = []
    for sample in list(train) + list(test):
        write_tensor_file(directory / "samples" / f"{sample.sample_id}.clip.cmma", sample.clip_features)
        write_tensor_file(directory / "samples" / f"{sample.sample_id}.words.cmma", sample.word_features)
        annotations.append(sample.annotation)
    write_annotations_jsonl(annotations, directory / DATASET_ANNOTATIONS)
    manifest = {
        "format": "comma-dataset-v1",
        "config": cfg.to_dict(),
        "train": [s.sample_id for s in train],
        "test": [s.sample_id for s in test],
    }
    path = directory / DATASET_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(
    directory: str | Path,
) -> tuple[SynthConfig, list[GroundingSample], list[GroundingSample]]:
    directory = Path(directory)
    manifest = json.loads((directory / DATASET_MANIFEST).read_text())
    if manifest.get("format") != "comma-dataset-v1":
        raise ValueError(f"{directory}: not a comma dataset")
    cfg = SynthConfig.from_dict(manifest["config"])
    by_id = {ann.sample_id: ann for ann in read_annotations_jsonl(directory / DATASET_ANNOTATIONS)}

    def load_split(ids: list[str]) -> list[GroundingSample]:
        out = []
        for sample_id in ids:
            if sample_id not in by_id:
                raise ValueError(f"{directory}: no annotation for sample {sample_id}")
            out.append(
                GroundingSample(
                    sample_id=sample_id,
                    clip_features=read_tensor_file(directory / "samples" / f"{sample_id}.clip.cmma"),
                    word_features=read_tensor_file(directory / "samples" / f"{sample_id}.words.cmma"),
                    annotation=by_id[sample_id],
                )
            )
        return out

    return cfg, load_split(manifest["train"]), load_split(manifest["test"])
