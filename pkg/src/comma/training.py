"""Optimization loop: AdamW with decoupled decay, linear warmup, grad checks.

Training is deterministic for a given config: parameter init comes from the
model seed, epoch shuffling from the train seed, and every tensor op is
sequential float64. A non-finite value anywhere aborts with a diagnostic
rather than propagating.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .losses import (
    SENTENCE_WEIGHT_DEFAULT,
    build_batch_representations,
    combined_loss,
    sentence_loss,
    word_loss,
)
from .masks import ModalityLayout, SelfAttentionVariant
from .model import CommaConfig, CommaParams, init_params
from .tensor import Gradients, Tensor, backward, no_grad, parameter

__all__ = [
    "LossMode",
    "TrainConfig",
    "OptimizerState",
    "TrainResult",
    "warmup_lr",
    "adamw_step",
    "train",
    "grad_check",
    "write_loss_csv",
]


class LossMode(str, Enum):
    SENTENCE = "sentence"
    WORD = "word"
    COMBINED = "combined"

    @classmethod
    def parse(cls, text: str) -> "LossMode":
        for mode in cls:
            if mode.value == text.strip().lower():
                return mode
        raise ValueError(f"unknown loss mode {text!r} (choices: sentence, word, combined)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 10
    warmup_epochs: int = 1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_mode: LossMode = LossMode.SENTENCE
    sentence_weight: float = SENTENCE_WEIGHT_DEFAULT
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.eps <= 0:
            raise ValueError("rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not isinstance(self.loss_mode, LossMode):
            object.__setattr__(self, "loss_mode", LossMode.parse(str(self.loss_mode)))

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "warmup_epochs": self.warmup_epochs,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "loss_mode": self.loss_mode.value,
            "sentence_weight": self.sentence_weight,
            "grad_clip": self.grad_clip,
            "seed": self.seed,
        }


@dataclass
class OptimizerState:
    """AdamW moments and step counter, shapes mirroring the parameters."""

    step: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, named: dict[str, Tensor]) -> "OptimizerState":
        return cls(
            step=0,
            first_moment={k: np.zeros(v.shape) for k, v in named.items()},
            second_moment={k: np.zeros(v.shape) for k, v in named.items()},
        )


def warmup_lr(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup across the first warmup_epochs, then the configured rate."""
    if steps_per_epoch < 1:
        raise ValueError("steps_per_epoch must be >= 1")
    if step < 0:
        raise ValueError("step must be >= 0")
    warm_steps = steps_per_epoch * cfg.warmup_epochs
    if warm_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, (step + 1) / warm_steps)


def adamw_step(
    named: dict[str, Tensor],
    grads: Gradients,
    state: OptimizerState,
    rate: float,
    cfg: TrainConfig,
) -> tuple[dict[str, Tensor], OptimizerState]:
    """One AdamW update with bias correction and decoupled weight decay.

    Parameters missing from ``grads`` are treated as zero-gradient (they still
    decay). Decay is applied directly to the weights, separate from the
    adaptive term.
    """
    state.step += 1
    correction1 = 1.0 - cfg.beta1**state.step
    correction2 = 1.0 - cfg.beta2**state.step
    updated: dict[str, Tensor] = {}
    for name, value in named.items():
        grad = grads[name].data if name in grads else np.zeros(value.shape)
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"adamw_step: non-finite gradient for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        adaptive = (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        new_value = value.data - rate * adaptive - rate * cfg.weight_decay * value.data
        updated[name] = parameter(name, new_value)
    return updated, state


def _clip_gradients(grads: Gradients, limit: float) -> Gradients:
    norm = np.sqrt(sum(float(np.sum(g.data * g.data)) for g in grads.values()))
    if norm <= limit or norm == 0.0:
        return grads
    scale = limit / norm
    return {name: Tensor(g.data * scale) for name, g in grads.items()}


def batch_loss(
    params: CommaParams,
    clips: Sequence[Tensor],
    words: Sequence[Tensor],
    layout: ModalityLayout,
    variant: SelfAttentionVariant,
    mode: LossMode,
    sentence_weight: float = SENTENCE_WEIGHT_DEFAULT,
) -> Tensor:
    """The selected training objective over one batch."""
    reps = build_batch_representations(params, clips, words, layout, variant)
    if mode is LossMode.SENTENCE:
        return sentence_loss(reps)
    if mode is LossMode.WORD:
        return word_loss(reps, layout)
    return combined_loss(reps, layout, sentence_weight)


@dataclass
class TrainResult:
    params: CommaParams
    log_rows: list[tuple[int, int, float, float]] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def train(
    dataset: Sequence,
    model_cfg: CommaConfig,
    train_cfg: TrainConfig,
    layout: ModalityLayout,
    progress: Callable[[str], None] | None = None,
) -> TrainResult:
    """Fit the model on GroundingSample-like items (clip_features/word_features).

    Per epoch: seeded shuffle, fixed-size batches with the last partial batch
    dropped (the contrastive losses need in-batch negatives). Returns the
    trained parameters plus a per-step (epoch, step, loss, lr) log.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    n = train_cfg.batch_size
    steps_per_epoch = len(dataset) // n
    if steps_per_epoch < 1:
        raise ValueError(f"train: dataset of {len(dataset)} cannot fill a batch of {n}")
    params = init_params(model_cfg)
    named = params.named()
    state = OptimizerState.fresh(named)
    rng = np.random.default_rng(train_cfg.seed)
    result = TrainResult(params=params)
    global_step = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_total = 0.0
        for step in range(steps_per_epoch):
            batch = [dataset[k] for k in order[step * n : (step + 1) * n]]
            clips = [s.clip_features for s in batch]
            words = [s.word_features for s in batch]
            try:
                loss = batch_loss(
                    params,
                    clips,
                    words,
                    layout,
                    model_cfg.sa_variant,
                    train_cfg.loss_mode,
                    train_cfg.sentence_weight,
                )
                grads = backward(loss)
            except ValueError as err:
                raise RuntimeError(
                    f"training aborted at epoch {epoch} step {step}: {err}"
                ) from err
            if train_cfg.grad_clip is not None:
                grads = _clip_gradients(grads, train_cfg.grad_clip)
            rate = warmup_lr(global_step, steps_per_epoch, train_cfg)
            named, state = adamw_step(named, grads, state, rate, train_cfg)
            params = CommaParams.from_named(named)
            value = loss.item()
            epoch_total += value
            result.log_rows.append((epoch, global_step, value, rate))
            global_step += 1
        mean_loss = epoch_total / steps_per_epoch
        result.epoch_losses.append(mean_loss)
        if progress is not None:
            progress(f"epoch {epoch}: mean loss {mean_loss:.6f}")
    result.params = params
    return result


def write_loss_csv(rows: Sequence[tuple[int, int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "step", "loss", "lr"])
        for epoch, step, loss, lr in rows:
            writer.writerow([epoch, step, repr(float(loss)), repr(float(lr))])


# ---------------------------------------------------------------------------
# analytic-vs-numeric gradient verification


def _generic_params(model_cfg: CommaConfig, rng: np.random.Generator) -> CommaParams:
    """Random parameters for derivative checks, biases included.

    The training init zeroes biases, which lets whole ReLU columns die and
    park downstream pre-activations exactly on the kink; central differences
    are undefined there. A generic random point avoids that measure-zero set.
    """
    shaped = init_params(model_cfg).named()
    return CommaParams.from_named(
        {name: parameter(name, rng.uniform(-0.7, 0.7, size=t.shape)) for name, t in shaped.items()}
    )


def grad_check(
    model_cfg: CommaConfig,
    mode: LossMode,
    seed: int = 0,
    batch: int = 2,
    n_words: int = 3,
    grid: tuple[int, int, int] = (2, 2, 2),
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradients.

    Builds one random batch at a generic random parameter point,
    differentiates the selected loss, then perturbs every parameter component
    by +-step. The report names every trainable parameter exactly once.
    """
    rng = np.random.default_rng(seed)
    t, h, w = grid
    layout = ModalityLayout(n_words=n_words, t=t, h=h, w=w)
    clips = [Tensor(rng.normal(size=(model_cfg.d_video_in, t, h, w))) for _ in range(batch)]
    words = [Tensor(rng.normal(size=(model_cfg.d_word_in, n_words))) for _ in range(batch)]
    params = _generic_params(model_cfg, rng)
    named = params.named()

    def loss_value(values: dict[str, np.ndarray]) -> float:
        trial = CommaParams.from_named(
            {name: parameter(name, arr) for name, arr in values.items()}
        )
        with no_grad():
            return batch_loss(
                trial, clips, words, layout, model_cfg.sa_variant, mode
            ).item()

    loss = batch_loss(params, clips, words, layout, model_cfg.sa_variant, mode)
    grads = backward(loss)
    base = {name: np.array(value.data) for name, value in named.items()}
    report: dict[str, float] = {}
    for name in named:
        analytic = grads[name].data if name in grads else np.zeros(named[name].shape)
        worst = 0.0
        flat = base[name].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            above = loss_value(base)
            flat[idx] = original - step
            below = loss_value(base)
            flat[idx] = original
            numeric = (above - below) / (2.0 * step)
            a = analytic.reshape(-1)[idx]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        report[name] = worst
    return report
