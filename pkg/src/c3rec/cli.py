"""Command-line driver: synth, train, eval, robustness, export-embeddings, grid.

Configuration is a single flat JSON object; every flag has a config-file
equivalent and flags override file values. The effective configuration is
echoed to ``config.echo.json`` in the output directory so a run can be
reproduced exactly. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

import argparse
import dataclasses
import json
import os
import sys

from .config import LossConfig, TrainConfig
from .data import (InteractionDataset, generate_synthetic, leave_one_out_split,
                   load_dataset, save_dataset)
from .errors import C3Error, DataFormatError, NumericalError
from .evaluate import consensus_drift, evaluate, export_embeddings
from .model import C3Model, ensure_dir
from .train import hyper_grid, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(TrainConfig)
                  if f.name != "loss"] + \
                 [f.name for f in dataclasses.fields(LossConfig)]


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One optional flag per TrainConfig/LossConfig field, default None so
    we can tell 'not given' from 'given the default'."""
    defaults = TrainConfig().to_dict()
    for name in _CONFIG_FIELDS:
        flag = "--" + name.replace("_", "-")
        default = defaults[name]
        if isinstance(default, bool):
            p.add_argument(flag, action="store_const", const=True, default=None,
                           help=f"(default {default})")
        else:
            kind = type(default)
            p.add_argument(flag, type=kind, default=None, metavar=name.upper(),
                           help=f"(default {default})")


def _load_config(args: argparse.Namespace) -> TrainConfig:
    """File values first, then CLI overrides, then TrainConfig defaults."""
    merged = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise DataFormatError(f"{args.config}: config must be a JSON object")
        for key in ("dataset", "out"):
            if key in file_cfg:
                if getattr(args, key, None) is None:
                    setattr(args, key, file_cfg.pop(key))
                else:
                    file_cfg.pop(key)
        merged.update(file_cfg)
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    try:
        cfg = TrainConfig.from_dict(merged)
        cfg.validate()
    except ValueError as exc:
        raise DataFormatError(str(exc))
    return cfg


def _echo_config(cfg: TrainConfig, args: argparse.Namespace, out_dir: str) -> None:
    doc = dict(cfg.to_dict())
    doc["dataset"] = getattr(args, "dataset", None)
    doc["out"] = out_dir
    with open(os.path.join(out_dir, "config.echo.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_split_dataset(path: str, seed: int) -> InteractionDataset:
    ds = load_dataset(path)
    leave_one_out_split(ds, seed)
    return ds


def _print_eval_table(report) -> None:
    cols = ["HR@1", "HR@5", "HR@10", "NDCG@5", "NDCG@10"]
    print(f"{'task':<8}" + "".join(f"{c:>10}" for c in cols))
    for task, block in (("user", report.user), ("group", report.group)):
        print(f"{task:<8}" + "".join(f"{block[c]:>10.4f}" for c in cols))
    for bucket, block in report.group_size_buckets.items():
        label = f"g {bucket}"
        print(f"{label:<8}" + "".join(
            f"{block[c]:>10.4f}" if c in block else f"{'-':>10}" for c in cols)
            + f"  (n={block['n']})")


# -- subcommands ---------------------------------------------------------------

def _cmd_synth(args) -> int:
    ds = generate_synthetic(args.users, args.items, args.groups, seed=args.seed)
    out = ensure_dir(args.out)
    save_dataset(ds, out)
    print(f"wrote {ds.num_users} users, {ds.num_items} items, "
          f"{ds.num_groups} groups to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.dataset is None or args.out is None:
        raise DataFormatError("train requires --dataset and --out "
                              "(flags or config keys)")
    out = ensure_dir(args.out)
    ds = _load_split_dataset(args.dataset, cfg.seed)
    _echo_config(cfg, args, out)
    model, log = train(ds, cfg, out_dir=out, quiet=args.quiet)
    report = evaluate(model, ds, n_eval_neg=cfg.eval_negatives,
                      seed=cfg.seed, which="test")
    with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best epoch {log.best_epoch} "
          f"(val group HR@10 {log.best_metric:.4f}); test metrics:")
    _print_eval_table(report)
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = C3Model.load(args.checkpoint)
    seed = args.seed if args.seed is not None else model.cfg.seed
    ds = _load_split_dataset(args.dataset, seed)
    report = evaluate(model, ds, n_eval_neg=args.eval_negatives,
                      seed=seed, which=args.which)
    if args.out:
        out = ensure_dir(args.out)
        with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    _print_eval_table(report)
    return EXIT_OK


def _cmd_robustness(args) -> int:
    model = C3Model.load(args.checkpoint)
    seed = args.seed if args.seed is not None else model.cfg.seed
    ds = _load_split_dataset(args.dataset, seed)
    report = consensus_drift(model, ds, mask_ratio=args.mask_ratio,
                             trials=args.trials, seed=seed)
    if args.out:
        out = ensure_dir(args.out)
        with open(os.path.join(out, "drift.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"mask ratio {report.mask_ratio}: mean cosine {report.mean_cosine:.4f}, "
          f"median {report.median_cosine:.4f}, "
          f"mean rank change {report.mean_rank_change:.2f} "
          f"({len(report.per_group)} groups)")
    return EXIT_OK


def _cmd_export(args) -> int:
    model = C3Model.load(args.checkpoint)
    seed = args.seed if args.seed is not None else model.cfg.seed
    ds = _load_split_dataset(args.dataset, seed)
    out = ensure_dir(args.out)
    path = os.path.join(out, "embeddings.csv")
    rows = export_embeddings(model, ds, path, mask_ratio=args.mask_ratio,
                             seed=seed)
    print(f"wrote {rows} rows to {path}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    cfg = _load_config(args)
    if args.dataset is None or args.out is None:
        raise DataFormatError("grid requires --dataset and --out "
                              "(flags or config keys)")
    out = ensure_dir(args.out)
    ds = _load_split_dataset(args.dataset, cfg.seed)
    _echo_config(cfg, args, out)
    try:
        thresholds = tuple(int(x) for x in args.thresholds.split(","))
        mask_ratios = tuple(float(x) for x in args.mask_ratios.split(","))
        betas = tuple(float(x) for x in args.betas.split(","))
    except ValueError as exc:
        raise DataFormatError(f"bad grid specification: {exc}")
    best_cfg, table = hyper_grid(ds, cfg, thresholds=thresholds,
                                 mask_ratios=mask_ratios, betas=betas,
                                 out_dir=out, quiet=args.quiet)
    print(f"{'threshold':>10}{'mask_ratio':>12}{'beta':>8}"
          f"{'val HR@10':>11}{'best epoch':>12}")
    for row in table:
        print(f"{row['aug_threshold']:>10}{row['mask_ratio']:>12.2f}"
              f"{row['beta']:>8.3f}{row['val_hr10']:>11.4f}"
              f"{row['best_epoch']:>12}")
    print(f"best: threshold={best_cfg.loss.aug_threshold} "
          f"mask_ratio={best_cfg.loss.mask_ratio} beta={best_cfg.loss.beta}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="c3rec",
                     description="Group recommendation: train, evaluate, "
                                 "and probe consensus robustness.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoints")
    p.add_argument("-c", "--config", help="flat JSON config file")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="directory for eval.json (optional)")
    p.add_argument("--which", choices=("test", "val"), default="test")
    p.add_argument("--eval-negatives", type=int, default=100)
    p.add_argument("--seed", type=int, default=None,
                   help="defaults to the checkpoint's training seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("robustness", help="consensus drift under member masking")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="directory for drift.json (optional)")
    p.add_argument("--mask-ratio", type=float, default=0.8)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("export-embeddings",
                       help="CSV of original and masked group vectors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("grid", help="hyper-parameter grid search")
    p.add_argument("-c", "--config", help="flat JSON config file")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--thresholds", default="3,5,7,9",
                   help="comma-separated aug_threshold grid")
    p.add_argument("--mask-ratios", default="0.2,0.4,0.6,0.8",
                   help="comma-separated mask_ratio grid")
    p.add_argument("--betas", default="0.025,0.05,0.075,0.1",
                   help="comma-separated beta grid")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"c3rec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, FileNotFoundError, NotADirectoryError,
            PermissionError, json.JSONDecodeError) as exc:
        print(f"c3rec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except C3Error as exc:
        print(f"c3rec: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
