#!/usr/bin/env python3
"""Sensitivity grids for the full configuration.

    python3 scripts/sweep_hparams.py beta-tau      # beta x tau
    python3 scripts/sweep_hparams.py delta-k       # delta x queue capacity
"""
import argparse
import itertools
import logging
from pathlib import Path

import numpy as np

from ustrun.synthdata import generate_dataset
from ustrun.trainer import TrainConfig, evaluate, train

GRIDS = {
    "beta-tau": ("beta", (0.005, 0.01, 0.05, 0.1), "tau", (0.85, 0.9, 0.95, 0.99)),
    "delta-k": ("delta", (1.0001, 1.0005, 1.001, 1.005), "capacity", (5, 10, 20, 40)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("grid", choices=sorted(GRIDS))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--t-total", type=int, default=2000)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    key_a, vals_a, key_b, vals_b = GRIDS[args.grid]
    table = np.zeros((len(vals_a), len(vals_b)))
    for (i, a), (j, b) in itertools.product(enumerate(vals_a), enumerate(vals_b)):
        dcs = []
        for seed in args.seeds:
            ds = generate_dataset(seed=seed)
            cfg = TrainConfig.for_row("row8", t_total=args.t_total, seed=seed, eval_every=0, **{key_a: a, key_b: b})
            res = train(cfg, ds)
            dcs.append(evaluate(res.student, ds.test, ds.num_classes).mean_dc([1, 2, 3]))
        table[i, j] = np.mean(dcs)
        print(f"{key_a}={a} {key_b}={b}: {table[i, j]:.4f}", flush=True)

    lines = [f"{key_a}\\{key_b}," + ",".join(map(str, vals_b))]
    lines += [f"{a}," + ",".join(f"{v:.4f}" for v in table[i]) for i, a in enumerate(vals_a)]
    text = "\n".join(lines) + "\n"
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)


if __name__ == "__main__":
    main()
