"""Sweep harness over self-attention variants and training objectives.

Trains one model per (variant, loss mode) cell on a shared synthetic
dataset, evaluates pointing accuracy on the held-out split, and emits a
comparison table. No ordering among cells is asserted anywhere; the table
is the product.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .evaluation import center_prior, evaluate
from .masks import ModalityLayout, SelfAttentionVariant
from .model import CommaConfig, CommaModel
from .synthetic import SynthConfig, generate
from .training import LossMode, TrainConfig, train

__all__ = ["SweepRow", "run_sweep", "write_sweep_csv", "format_sweep_table"]


@dataclass(frozen=True)
class SweepRow:
    sa_variant: str
    loss_mode: str
    accuracy: float
    center_prior_accuracy: float
    final_epoch_loss: float


def run_sweep(
    synth_cfg: SynthConfig,
    model_cfg: CommaConfig,
    train_cfg: TrainConfig,
    variants: Sequence[SelfAttentionVariant] = tuple(SelfAttentionVariant),
    loss_modes: Sequence[LossMode] = tuple(LossMode),
) -> list[SweepRow]:
    train_set, test_set = generate(synth_cfg)
    layout = ModalityLayout(
        n_words=synth_cfg.words_per_sample, t=synth_cfg.t, h=synth_cfg.h, w=synth_cfg.w
    )
    prior = center_prior(test_set).accuracy
    rows = []
    for variant in variants:
        for mode in loss_modes:
            cell_model_cfg = replace(model_cfg, sa_variant=variant)
            cell_train_cfg = replace(train_cfg, loss_mode=mode)
            result = train(train_set, cell_model_cfg, cell_train_cfg, layout)
            model = CommaModel(config=cell_model_cfg, params=result.params)
            report = evaluate(model, test_set)
            rows.append(
                SweepRow(
                    sa_variant=variant.value,
                    loss_mode=mode.value,
                    accuracy=report.accuracy,
                    center_prior_accuracy=prior,
                    final_epoch_loss=result.epoch_losses[-1],
                )
            )
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["sa_variant", "loss_mode", "accuracy", "center_prior_accuracy", "final_epoch_loss"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.sa_variant,
                    row.loss_mode,
                    repr(row.accuracy),
                    repr(row.center_prior_accuracy),
                    repr(row.final_epoch_loss),
                ]
            )


def format_sweep_table(rows: Sequence[SweepRow]) -> str:
    header = f"{'sa_variant':18s} {'loss_mode':10s} {'accuracy':>9s} {'center':>7s} {'loss':>10s}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.sa_variant:18s} {row.loss_mode:10s} {row.accuracy:9.4f} "
            f"{row.center_prior_accuracy:7.4f} {row.final_epoch_loss:10.4f}"
        )
    return "\n".join(lines)
