"""Command-line surface: train, average, eval, compare, sweep.

Exit codes: 0 success, 2 usage/config/data problems, 1 numerical
failure inside a run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .averaging import average_checkpoint_dir
from .checkpoint_io import read_checkpoint, write_checkpoint
from .compare import compare_runs, write_comparison_csv
from .config import (
    BN_MODES,
    DATASETS,
    OPTIMIZERS,
    SCHEDULES,
    SCHEMES,
    config_from_mapping,
    parse_config_file,
    resolved_text,
)
from .engine import (
    build_dataset,
    evaluate,
    init_params,
    model_spec_for,
    recompute_bn_stats,
    train_run,
)
from .errors import ConfigError, InternalStateError, LawaError, NonFiniteError
from .metrics import METRICS_HEADER, record_to_line
from .params import check_same_structure


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    """Training-run flags; defaults are suppressed so a config file can
    supply values and explicit flags override it."""
    s = argparse.SUPPRESS
    parser.add_argument("--config", help="flat key=value config file")
    g = parser.add_argument_group("dataset")
    g.add_argument("--dataset", choices=DATASETS, default=s)
    g.add_argument("--n-per-class", type=int, default=s)
    g.add_argument("--classes", type=int, default=s)
    g.add_argument("--noise", type=float, default=s)
    g.add_argument("--csv", default=s, help="CSV path for --dataset csv")
    g.add_argument("--label-column", default=s)
    g = parser.add_argument_group("model")
    g.add_argument("--hidden", default=s, help="comma list of hidden widths")
    g.add_argument("--use-bn", action=argparse.BooleanOptionalAction, default=s)
    g.add_argument("--dtype", choices=("f32", "f64"), default=s)
    g = parser.add_argument_group("optimizer")
    g.add_argument("--optimizer", choices=OPTIMIZERS, default=s)
    g.add_argument("--lr", type=float, default=s)
    g.add_argument("--momentum", type=float, default=s)
    g.add_argument("--beta1", type=float, default=s)
    g.add_argument("--beta2", type=float, default=s)
    g.add_argument("--adam-eps", type=float, default=s)
    g.add_argument("--lookahead-alpha", type=float, default=s)
    g.add_argument("--lookahead-k", type=int, default=s)
    g.add_argument("--lookahead-inner", choices=("sgd", "adam"), default=s)
    g = parser.add_argument_group("schedule")
    g.add_argument("--schedule", choices=SCHEDULES, default=s)
    g.add_argument("--warmup-steps", type=int, default=s)
    g.add_argument("--end-lr", type=float, default=s)
    g.add_argument("--power", type=float, default=s)
    g = parser.add_argument_group("run")
    g.add_argument("--epochs", type=int, default=s)
    g.add_argument("--batch-size", type=int, default=s)
    g.add_argument("--seed", type=int, default=s)
    g.add_argument("--out", default=s)
    g = parser.add_argument_group("averaging")
    g.add_argument("--scheme", choices=SCHEMES, default=s)
    g.add_argument("--k", type=int, default=s, help="averaging window")
    g.add_argument("--alpha", type=float, default=s, help="ema coefficient")
    g.add_argument("--bn-mode", choices=BN_MODES, default=s)
    g.add_argument("--save-every-steps", type=int, default=s)
    g.add_argument("--save-averaged", action=argparse.BooleanOptionalAction, default=s)


def _effective_mapping(args: argparse.Namespace) -> dict:
    mapping: dict = {}
    if getattr(args, "config", None):
        mapping.update(parse_config_file(args.config))
    skip = {"config", "command", "func", "schemes", "k_values"}
    for key, value in vars(args).items():
        if key not in skip:
            mapping[key] = value
    return mapping


def cmd_train(args: argparse.Namespace) -> int:
    cfg = config_from_mapping(_effective_mapping(args))
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(resolved_text(cfg), encoding="utf-8")
    records = train_run(cfg)
    last = records[-1]
    print(
        f"wrote {out_dir / 'metrics.csv'} ({len(records)} epochs, "
        f"final val_loss={last.val_loss:.6g})"
    )
    return 0


def cmd_average(args: argparse.Namespace) -> int:
    ckpt = average_checkpoint_dir(args.dir, args.k, args.scheme, args.alpha)
    write_checkpoint(ckpt, args.out)
    print(f"wrote {args.out} (scheme={args.scheme}, k={args.k}, epoch={ckpt.epoch})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = config_from_mapping(parse_config_file(args.config))
    dataset = build_dataset(cfg)
    spec = model_spec_for(cfg, dataset)
    ckpt = read_checkpoint(args.ckpt)
    check_same_structure(init_params(spec), ckpt.params)

    params = ckpt.params
    if args.bn_mode == "recompute" and spec.has_bn:
        if not args.train_data:
            raise ConfigError("--train-data is required with --bn-mode recompute")
        if args.train_data == "train":
            stats_x = dataset.train()[0]
        elif args.train_data == "val":
            stats_x = dataset.val()[0]
        else:
            raise ConfigError(
                f"--train-data must be 'train' or 'val', got {args.train_data!r}"
            )
        params = recompute_bn_stats(params, spec, stats_x)
    # bn-mode copy would copy the checkpoint's own statistics: a no-op here.

    x, y = dataset.train() if args.split == "train" else dataset.val()
    loss, acc = evaluate(params, spec, x, y)
    print(f"loss={loss:.17g} accuracy={acc:.17g}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    higher = None
    if args.higher_better:
        higher = True
    elif args.lower_better:
        higher = False
    comparisons = compare_runs(args.metrics_csvs, args.metric, higher)
    if args.out:
        write_comparison_csv(comparisons, args.out)
    for comp in comparisons:
        at = comp.max_savings_epoch
        print(
            f"run={comp.name} metric={comp.metric} max_savings={comp.max_savings} "
            f"at_epoch={'-' if at is None else at}"
        )
        for target in args.targets:
            base, avg = comp.epochs_to_target(target)
            print(
                f"run={comp.name} target={target:g} "
                f"baseline_epoch={'-' if base is None else base} "
                f"averaged_epoch={'-' if avg is None else avg}"
            )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _effective_mapping(args)
    variants: list[tuple[str, dict]] = []
    for scheme in args.schemes.split(","):
        scheme = scheme.strip()
        if scheme:
            variants.append((scheme, {"scheme": scheme}))
    if args.k_values:
        for text in args.k_values.split(","):
            k = int(text)
            variants.append((f"uniform_k{k}", {"scheme": "uniform", "k": k}))
    if not variants:
        raise ConfigError("sweep needs at least one scheme or k value")

    out_root = Path(base.get("out", "sweep"))
    out_root.mkdir(parents=True, exist_ok=True)
    lines = ["variant," + ",".join(METRICS_HEADER)]
    for name, overrides in variants:
        cfg = config_from_mapping({**base, **overrides, "out": str(out_root / name)})
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out) / "config.resolved").write_text(
            resolved_text(cfg), encoding="utf-8"
        )
        records = train_run(cfg)
        lines.extend(f"{name},{record_to_line(r)}" for r in records)
        last = records[-1]
        final_avg = "-" if last.avg_val_loss is None else f"{last.avg_val_loss:.6g}"
        best_avg = min(
            (r.avg_val_loss for r in records if r.avg_val_loss is not None),
            default=None,
        )
        print(
            f"variant={name} final_val_loss={last.val_loss:.6g} "
            f"final_avg_val_loss={final_avg} "
            f"best_avg_val_loss={'-' if best_avg is None else f'{best_avg:.6g}'}"
        )
    sweep_csv = out_root / "sweep.csv"
    sweep_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {sweep_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lawa",
        description="Checkpoint averaging toolkit: train with k-latest weight "
        "averaging, average checkpoints offline, evaluate, and compare runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job with in-loop averaging")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("average", help="average checkpoint files offline")
    p.add_argument("--dir", required=True, help="directory holding *.lawa files")
    p.add_argument("--k", type=int, required=True, help="number of newest checkpoints")
    p.add_argument("--scheme", choices=("uniform", "ema"), default="uniform")
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True, help="run config (e.g. config.resolved)")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--bn-mode", choices=("off", "recompute", "copy"), default="off")
    p.add_argument(
        "--train-data",
        default="",
        help="data for --bn-mode recompute: 'train' or 'val' split",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="epoch savings of averaged vs baseline curves")
    p.add_argument("metrics_csvs", nargs="+", help="metrics.csv files")
    p.add_argument("--metric", default="val_loss")
    p.add_argument("--out", default="", help="per-epoch comparison CSV")
    p.add_argument(
        "--targets",
        type=lambda text: [float(v) for v in text.split(",")],
        default=[],
        help="comma list of target metric values",
    )
    direction = p.add_mutually_exclusive_group()
    direction.add_argument("--higher-better", action="store_true")
    direction.add_argument("--lower-better", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run several schemes/windows on one task")
    _add_run_options(p)
    p.add_argument("--schemes", default="uniform,ema", help="comma list of schemes")
    p.add_argument("--k-values", default="", help="comma list of uniform windows")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NonFiniteError, InternalStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LawaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
