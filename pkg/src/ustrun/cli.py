"""Command line entry point: generate-data, train, evaluate, ablate, infer."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import segnet
from .grid import one_hot, read_grid, write_grid, write_pgm
from .masks import RectSpec, sample_rect_mask
from .synthdata import DEFAULT_DOMAINS, generate_dataset, load_dataset, save_dataset
from .trainer import (ROWS, TrainConfig, ablation_csv, coerce, evaluate, infer, parse_config_text,
                      run_ablation, train, write_outputs)
from .ucp import compose_ucp

log = logging.getLogger("ustrun")


def _pair(text: str) -> tuple:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def build_config(args) -> TrainConfig:
    values = {}
    if args.row:
        values.update(TrainConfig.for_row(args.row).__dict__)
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    for item in args.set or []:
        key, _, value = item.partition("=")
        if key not in TrainConfig.__dataclass_fields__:
            raise SystemExit(f"unknown config key {key!r}")
        values[key] = coerce(key, value)
    for key in ("t_total", "seed", "beta", "tau"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if args.rect_area:
        values["rect_area"] = args.rect_area
    if args.rect_aspect:
        values["rect_aspect"] = args.rect_aspect
    config = TrainConfig(**values)
    config.validate()
    return config


def _data(path, seed):
    if path:
        return load_dataset(path)
    return generate_dataset(seed=seed)


def dump_intermediates(dataset, config: TrainConfig, out_dir: Path) -> None:
    """Write one UCP composite (both directions plus the mask) as PGM files."""
    rng = np.random.default_rng(config.seed)
    x, u = dataset.labeled[0], dataset.unlabeled[len(dataset.unlabeled) // 2]
    size = x.image.shape[-1]
    mask = sample_rect_mask(size, size, RectSpec(tuple(config.rect_area), tuple(config.rect_aspect)), rng)
    c = dataset.num_classes
    inter = compose_ucp(x.image, one_hot(x.label, c), u.image, one_hot(u.label, c), mask, config.tau)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(out_dir / "mask.pgm", mask)
    write_pgm(out_dir / "sample_in.pgm", inter.sample_in[0])
    write_pgm(out_dir / "sample_out.pgm", inter.sample_out[0])
    write_pgm(out_dir / "label_in.pgm", inter.label_in / max(c - 1, 1))
    write_pgm(out_dir / "label_out.pgm", inter.label_out / max(c - 1, 1))


def cmd_generate(args) -> int:
    if not 2 <= args.domains <= len(DEFAULT_DOMAINS):
        raise SystemExit(f"--domains must be between 2 and {len(DEFAULT_DOMAINS)}")
    ds = generate_dataset(DEFAULT_DOMAINS[:args.domains], seed=args.seed, size=args.size,
                          num_classes=args.classes)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.labeled)} labeled, {len(ds.unlabeled)} unlabeled, {len(ds.test)} test to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    ds = _data(args.data, config.seed)
    init = teacher = None
    if args.resume:
        # resume restarts the schedule from t=0 with the saved weights
        init = segnet.load_checkpoint(Path(args.resume) / "student.segn")
        if (Path(args.resume) / "teacher.segn").exists():
            teacher = segnet.load_checkpoint(Path(args.resume) / "teacher.segn")
    result = train(config, ds, init=init, teacher_init=teacher, progress=not args.quiet)
    out = write_outputs(result, args.out)
    evaluate(result.student, ds.test, ds.num_classes).write_csv(out / "report.csv")
    if args.dump_intermediates:
        dump_intermediates(ds, config, out / "intermediates")
    print(f"trained {config.t_total} iterations in {result.seconds:.1f}s; outputs in {out}")
    return 0


def cmd_evaluate(args) -> int:
    params = segnet.load_checkpoint(args.checkpoint)
    ds = _data(args.data, args.seed)
    report = evaluate(params, ds.test, ds.num_classes)
    report.write_csv(args.out)
    held_out = sorted({s.domain for s in ds.test} - {0})
    print(f"mean DC all domains {report.mean_dc():.4f}; held-out {report.mean_dc(held_out):.4f}")
    return 0


def cmd_ablate(args) -> int:
    base = build_config(args)
    base = replace(base, eval_every=0)
    if args.data:
        ds = load_dataset(args.data)
        dataset_fn = lambda seed: ds       # noqa: E731
    else:
        dataset_fn = lambda seed: generate_dataset(seed=seed)      # noqa: E731
    rows = run_ablation(base, args.rows, args.seeds, dataset_fn, progress=not args.quiet)
    text = ablation_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_infer(args) -> int:
    params = segnet.load_checkpoint(args.checkpoint)
    image = read_grid(args.image)
    label = infer(params, image)
    if args.out.endswith(".pgm"):
        write_pgm(args.out, label / max(params["conv4.w"].shape[0] - 1, 1))
    else:
        write_grid(args.out, label.astype(np.float32))
    return 0


def _train_options(p, rows_default=None):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--row", choices=sorted(ROWS), default=rows_default, help="preset flag set")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--data", help="dataset directory (default: generate from the seed)")
    p.add_argument("--t-total", dest="t_total", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--rect-area", type=_pair, metavar="LO,HI")
    p.add_argument("--rect-aspect", type=_pair, metavar="LO,HI")
    p.add_argument("--quiet", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ustrun")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the synthetic multi-domain benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domains", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=2, choices=(2, 3))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one configuration")
    _train_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", metavar="RUN_DIR", help="start from the weights of a previous run")
    p.add_argument("--dump-intermediates", action="store_true", help="write PGM images of a UCP composite")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int, default=0, help="dataset seed when --data is not given")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train several rows over several seeds")
    _train_options(p)
    p.add_argument("--rows", nargs="+", default=["row1", "row2", "row3"], choices=sorted(ROWS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="predict a label field for one GRID image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help=".pgm for a viewable map, otherwise GRID")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
