#!/usr/bin/env python3
"""Full reference experiment: generate, train, evaluate, ground one sample.

Equivalent to running the CLI by hand:

    comma gen-data configs/benchmark.cfg out/data
    comma train configs/benchmark.cfg out/data out/run
    comma eval out/run out/data
    comma ground out/run out/data test-0000 out/ground

and prints a summary comparing the trained model against the center prior
and the uniform-pixel chance rate.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from comma.cli import main as comma_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/benchmark.cfg")
    parser.add_argument("--out", default="out/benchmark")
    parser.add_argument("--sample", default="test-0000", help="sample to ground at the end")
    args = parser.parse_args()

    out = Path(args.out)
    data, run, ground_dir = out / "data", out / "run", out / "ground"
    started = time.time()
    for argv in (
        ["gen-data", args.config, str(data)],
        ["train", args.config, str(data), str(run)],
        ["eval", str(run), str(data), "--out", str(out / "metrics.json")],
        ["ground", str(run), str(data), args.sample, str(ground_dir)],
    ):
        print(f"+ comma {' '.join(argv)}", file=sys.stderr)
        code = comma_main(argv)
        if code != 0:
            return code
    metrics = json.loads((out / "metrics.json").read_text())
    print(
        f"done in {time.time() - started:.0f}s: "
        f"model accuracy {metrics['model']['accuracy']:.4f}, "
        f"center prior {metrics['center_prior']['accuracy']:.4f}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
