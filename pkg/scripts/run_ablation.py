#!/usr/bin/env python3
"""Train every ablation row over a few seeds and write a comparison table.

    python3 scripts/run_ablation.py --rows row1 row2 row3 --seeds 0 1 2 --out results/ablation.csv
"""
import argparse
import logging
from pathlib import Path

from ustrun.synthdata import generate_dataset
from ustrun.trainer import ROWS, TrainConfig, ablation_csv, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", nargs="+", default=[r for r in ROWS if r.startswith("row")], choices=sorted(ROWS))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--t-total", type=int, default=2000)
    ap.add_argument("--out", default="results/ablation.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = TrainConfig(t_total=args.t_total, eval_every=0)
    rows = run_ablation(base, args.rows, args.seeds, lambda seed: generate_dataset(seed=seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(ablation_csv(rows))
    for r in rows:
        print(f"{r['row']:<11} {r['flags']:<38} held-out DC {r['mean']:.4f} +- {r['std']:.4f}")


if __name__ == "__main__":
    main()
