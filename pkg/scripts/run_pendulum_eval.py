#!/usr/bin/env python3
"""Run the Pendulum repeat protocol and print the metrics table.

Equivalent to:  simcal evaluate --config configs/pendulum_eval.yaml --out out/
"""

import argparse
from pathlib import Path

from simcal.harness import evaluate, load_config, save_metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/pendulum_eval.yaml")
    ap.add_argument("--out", default="out/pendulum")
    args = ap.parse_args()

    config = load_config(args.config)
    rows = evaluate(config, progress=lambda msg: print(msg, flush=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_metrics(rows, out / "metrics.csv", out / "metrics.txt")
    print((out / "metrics.txt").read_text())


if __name__ == "__main__":
    main()
