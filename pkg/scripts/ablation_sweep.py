#!/usr/bin/env python3
"""Sweep self-attention variants against training objectives and tabulate.

Each (variant, loss mode) cell trains a fresh model on the same generated
dataset and reports held-out pointing accuracy next to the center prior.
"""

import argparse
import sys
from pathlib import Path

from comma.ablation import format_sweep_table, run_sweep, write_sweep_csv
from comma.config import load_run_config
from comma.masks import SelfAttentionVariant
from comma.training import LossMode


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="run config (defaults everywhere if omitted)")
    parser.add_argument("--out", default="out/sweep.csv")
    parser.add_argument(
        "--sa-variant",
        action="append",
        choices=[v.value for v in SelfAttentionVariant],
        help="restrict to these variants (repeatable; default: all four)",
    )
    parser.add_argument(
        "--loss-mode",
        action="append",
        choices=[m.value for m in LossMode],
        help="restrict to these objectives (repeatable; default: all three)",
    )
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()

    run = load_run_config(args.config, args.overrides)
    variants = (
        [SelfAttentionVariant.parse(v) for v in args.sa_variant]
        if args.sa_variant
        else tuple(SelfAttentionVariant)
    )
    modes = [LossMode.parse(m) for m in args.loss_mode] if args.loss_mode else tuple(LossMode)
    rows = run_sweep(run.synth, run.model, run.train, variants=variants, loss_modes=modes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out)
    print(format_sweep_table(rows))
    print(f"table written to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
