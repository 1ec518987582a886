"""Command-line entry point: gen-data, train, eval, ground, grad-check.

Every command is deterministic for fixed inputs and seeds; artifacts carry
no timestamps, so reruns are byte-identical. Exit status is 0 only when the
command fully succeeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import documented_keys, load_run_config
from .evaluation import center_prior, evaluate
from .inference import ground, write_heatmap_csv, write_heatmap_pgms
from .masks import (
    ModalityLayout,
    SelfAttentionVariant,
    cross_modal_mask,
    full_attention_mask,
    self_attention_mask,
)
from .model import CommaModel, load_checkpoint, save_checkpoint
from .synthetic import chance_accuracy, generate, load_dataset, save_dataset
from .training import LossMode, grad_check, train, write_loss_csv

__all__ = ["main"]

GRAD_CHECK_TOLERANCE = 1e-4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comma",
        description="Self-supervised grounding of narrations in video feature grids.",
        epilog="Config keys: " + ", ".join(documented_keys()),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_set(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable; wins over file and environment)",
        )

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark onto disk")
    p.add_argument("config", type=Path)
    p.add_argument("out_dir", type=Path, nargs="?")
    add_set(p)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("config", type=Path)
    p.add_argument("data_dir", type=Path, nargs="?")
    p.add_argument("out_dir", type=Path, nargs="?")
    p.add_argument("--sa-variant", choices=[v.value for v in SelfAttentionVariant])
    p.add_argument("--loss-mode", choices=[m.value for m in LossMode])
    add_set(p)

    p = sub.add_parser("eval", help="pointing accuracy of a checkpoint plus the center prior")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data_dir", type=Path)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--out", type=Path, help="also write the metrics JSON to this file")
    p.add_argument("--threads", type=int, default=1, help="worker-thread cap across samples")

    p = sub.add_parser("ground", help="heatmap + mode pixel for one dataset sample")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data_dir", type=Path)
    p.add_argument("sample_id")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--dump-mask", action="store_true", help="print the attention masks as 0/1 grids")

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    p.add_argument("config", type=Path)
    add_set(p)

    return parser


def _require_dir(value: Path | None, fallback: Path | None, what: str) -> Path:
    chosen = value if value is not None else fallback
    if chosen is None:
        raise ValueError(f"no {what} given (pass it on the command line or set paths.{what})")
    return chosen


def _cmd_gen_data(args) -> int:
    run = load_run_config(args.config, args.overrides)
    out_dir = _require_dir(args.out_dir, run.out_dir, "out_dir")
    train_set, test_set = generate(run.synth)
    save_dataset(out_dir, run.synth, train_set, test_set)
    chance = chance_accuracy(run.synth, samples=test_set)
    print(
        json.dumps(
            {
                "train_samples": len(train_set),
                "test_samples": len(test_set),
                "chance_accuracy": chance.to_dict(),
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_train(args) -> int:
    overrides = list(args.overrides)
    if args.sa_variant:
        overrides.append(f"model.sa_variant={args.sa_variant}")
    if args.loss_mode:
        overrides.append(f"train.loss_mode={args.loss_mode}")
    run = load_run_config(args.config, overrides)
    data_dir = _require_dir(args.data_dir, run.data_dir, "data_dir")
    out_dir = _require_dir(args.out_dir, run.out_dir, "out_dir")
    data_cfg, train_set, _ = load_dataset(data_dir)
    if (run.model.d_video_in, run.model.d_word_in) != (data_cfg.d_video_in, data_cfg.d_word_in):
        raise ValueError(
            f"model input dims ({run.model.d_video_in}, {run.model.d_word_in}) do not match "
            f"dataset dims ({data_cfg.d_video_in}, {data_cfg.d_word_in})"
        )
    layout = ModalityLayout(
        n_words=data_cfg.words_per_sample, t=data_cfg.t, h=data_cfg.h, w=data_cfg.w
    )
    result = train(
        train_set,
        run.model,
        run.train,
        layout,
        progress=lambda line: print(line, file=sys.stderr),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(CommaModel(config=run.model, params=result.params), out_dir)
    write_loss_csv(result.log_rows, out_dir / "loss.csv")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _, train_set, test_set = load_dataset(args.data_dir)
    samples = {"train": train_set, "test": test_set, "all": train_set + test_set}[args.split]
    report = evaluate(model, samples, threads=max(1, args.threads))
    prior = center_prior(samples)
    payload = json.dumps(
        {"model": report.to_dict(), "center_prior": prior.to_dict(), "split": args.split},
        sort_keys=True,
    )
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(payload + "\n")
    print(payload)
    return 0


def _cmd_ground(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data_cfg, train_set, test_set = load_dataset(args.data_dir)
    by_id = {s.sample_id: s for s in train_set + test_set}
    if args.sample_id not in by_id:
        raise ValueError(f"unknown sample {args.sample_id!r} in {args.data_dir}")
    sample = by_id[args.sample_id]
    if args.dump_mask:
        layout = ModalityLayout(
            n_words=data_cfg.words_per_sample, t=data_cfg.t, h=data_cfg.h, w=data_cfg.w
        )
        print("cross-modal mask:")
        print(cross_modal_mask(layout).ascii_grid())
        print(f"self-attention mask ({model.config.sa_variant.value}):")
        print(self_attention_mask(layout, model.config.sa_variant).ascii_grid())
        print("full-attention mask:")
        print(full_attention_mask(layout).ascii_grid())
    heatmap, pixel = ground(
        model, sample.clip_features, sample.word_features, sample.annotation.resolution
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_heatmap_pgms(heatmap, args.out_dir)
    write_heatmap_csv(heatmap, args.out_dir / "heatmap.csv")
    payload = {
        "sample_id": sample.sample_id,
        "resolution": list(sample.annotation.resolution),
        "mode_pixel": {"t": pixel.t, "y": pixel.y, "x": pixel.x},
    }
    (args.out_dir / "grounding.json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_grad_check(args) -> int:
    run = load_run_config(args.config, args.overrides)
    worst = 0.0
    for mode in LossMode:
        report = grad_check(run.model, mode, seed=run.train.seed)
        print(f"loss mode: {mode.value}")
        for name, err in sorted(report.items()):
            print(f"  {name:24s} max rel err {err:.3e}")
            worst = max(worst, err)
    print(f"worst relative error: {worst:.3e} (tolerance {GRAD_CHECK_TOLERANCE:.0e})")
    return 0 if worst <= GRAD_CHECK_TOLERANCE else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ground": _cmd_ground,
    "grad-check": _cmd_grad_check,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
