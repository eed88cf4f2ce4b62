"""Command line interface: synth, split, train, eval, sweep, embed.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Relative output paths are resolved under $GEOPROXY_OUTPUT_ROOT when
that variable is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import times
from .config import ConfigError, ExperimentConfig, config_to_text, load_config
from .data import (
    DataFormatError,
    ExtentError,
    load_field,
    load_labeled_table,
    write_field,
    write_labeled_table,
)
from .metrics import export_embedding_grid, write_embedding_csvs, write_metrics_csv
from .model import RegimeError
from .optim import NonFiniteGradientError, load_checkpoint, restore_groups
from .splits import (
    CheckerboardConfig,
    SplitAssignment,
    checkerboard_split,
    enumerate_checkerboard_partitions,
    uar_site_split,
)
from .synth import WorldConfig, generate_world, world_report
from .training import build_model, evaluate_rows, make_seed_streams, run_experiment, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get("GEOPROXY_OUTPUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _load_points(path):
    try:
        return load_labeled_table(path)
    except FileNotFoundError as exc:
        raise CliError(f"points file not found: {path}", EXIT_DATA) from exc
    except DataFormatError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _load_field(path):
    if not path:
        return None
    try:
        return load_field(path)
    except FileNotFoundError as exc:
        raise CliError(f"field spec not found: {path}", EXIT_DATA) from exc
    except DataFormatError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def cmd_synth(args) -> int:
    if args.print_default_config:
        print(WorldConfig().to_ini(), end="")
        return EXIT_OK
    if args.config:
        try:
            cfg = WorldConfig.from_ini(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise CliError(f"world config not found: {args.config}", EXIT_DATA) from exc
        except ValueError as exc:
            raise CliError(f"world config: {exc}", EXIT_CONFIG) from exc
    else:
        cfg = WorldConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        cfg.validate()
        world = generate_world(cfg)
    except ValueError as exc:
        raise CliError(f"world config: {exc}", EXIT_CONFIG) from exc

    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labeled_table(out / "points.tsv", world.table)
    write_field(out / "field.spec", world.field)
    (out / "world.json").write_text(cfg.to_json() + "\n")
    report = world_report(world)
    (out / "world_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"world written to {out} ({report['n_sites']} sites, {report['n_samples']} samples, "
          f"proxy-only R2 {report['proxy_only_r2']:.3f})")
    return EXIT_OK


def cmd_split(args) -> int:
    table, sites = _load_points(args.points)
    out = _out_path(args.out)
    if args.uar:
        split = uar_site_split(sites, table, args.fraction, args.seed, val_share=args.val_share)
        out.parent.mkdir(parents=True, exist_ok=True)
        split.save(out)
        print(f"uar split written to {out} ({split.counts()})")
        return EXIT_OK
    if args.checkerboard:
        origin = tuple(float(v) for v in args.origin.split(",")) if args.origin else None
        if origin is None:
            lon0, _, lat0, _ = table.bounding_box()
            origin = (lon0, lat0)
        if args.all_partitions:
            out.mkdir(parents=True, exist_ok=True)
            paths = []
            for k, cfg in enumerate(enumerate_checkerboard_partitions(args.delta, origin)):
                split = checkerboard_split(table, cfg)
                path = out / f"checkerboard_d{args.delta:g}_p{k}.csv"
                split.save(path)
                paths.append(path)
            print(f"8 checkerboard partitions written to {out}")
            return EXIT_OK
        offsets = ("original", "right", "up", "both")
        cfg = CheckerboardConfig(delta=args.delta, origin=origin,
                                 offset=offsets[args.offset], swap=args.swap)
        split = checkerboard_split(table, cfg)
        out.parent.mkdir(parents=True, exist_ok=True)
        split.save(out)
        print(f"checkerboard split written to {out} ({split.counts()})")
        return EXIT_OK
    raise CliError("choose a protocol: --uar or --checkerboard", EXIT_CONFIG)


def _load_experiment_config(path) -> ExperimentConfig:
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise CliError(f"config not found: {path}", EXIT_CONFIG) from exc
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def cmd_train(args) -> int:
    if args.print_default_config:
        print(config_to_text(ExperimentConfig()), end="")
        return EXIT_OK
    cfg = _load_experiment_config(args.config)
    if args.out:
        cfg.output_dir = str(_out_path(args.out))
    elif cfg.output_dir:
        cfg.output_dir = str(_out_path(cfg.output_dir))
    if not cfg.output_dir:
        raise CliError("no output directory: set experiment.output_dir or pass --out", EXIT_CONFIG)
    table, sites = _load_points(args.points or cfg.points)
    field = _load_field(args.field or cfg.field_spec)
    split = None
    if args.split:
        try:
            split = SplitAssignment.load(args.split)
        except (FileNotFoundError, ValueError) as exc:
            raise CliError(f"split file: {exc}", EXIT_DATA) from exc
    try:
        result = run_experiment(cfg, table, sites, field, split=split, out_dir=cfg.output_dir)
    except NonFiniteGradientError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    except (ConfigError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    for name, rep in result.reports.items():
        r2 = "n/a" if rep.r2 is None else f"{rep.r2:.4f}"
        print(f"{name}: R2={r2} RMSE={rep.rmse:.4f} MAE={rep.mae:.4f} MBE={rep.mbe:+.4f} n={rep.n}")
    print(f"run artifacts in {cfg.output_dir} "
          f"(epochs={result.epochs_run}, pretrain={result.pretrain_epochs_run})")
    return EXIT_OK


def _read_checkpoint(checkpoint_path):
    try:
        return load_checkpoint(checkpoint_path)
    except FileNotFoundError as exc:
        raise CliError(f"checkpoint not found: {checkpoint_path}", EXIT_DATA) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def cmd_eval(args) -> int:
    cfg = _load_experiment_config(args.config)
    table, sites = _load_points(args.points or cfg.points)
    field = _load_field(args.field or cfg.field_spec)
    try:
        split = SplitAssignment.load(args.split)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(f"split file: {exc}", EXIT_DATA) from exc

    from .data import fit_normalization
    from .splits import TRAIN

    meta, arrays = _read_checkpoint(args.checkpoint)
    streams = make_seed_streams(cfg.seed)
    train_rows = table.rows_for_ids(split.ids(TRAIN))
    if len(train_rows) == 0:
        raise CliError("split has no training rows; cannot refit normalization", EXIT_DATA)
    needs_field = cfg.regime in ("proxy-stacked", "trained-le-pcl", "proxy-pretrain")
    if needs_field and field is None:
        raise CliError(f"regime {cfg.regime!r} requires --field", EXIT_CONFIG)
    stats = fit_normalization(table.subset(train_rows), field if needs_field else None)
    model = build_model(cfg, table, field, stats, streams.init)
    try:
        restore_groups(model.parameter_groups(), arrays)
    except (KeyError, ValueError) as exc:
        raise CliError(f"checkpoint does not match config: {exc}", EXIT_DATA) from exc

    subsets = ("train", "val", "test") if args.subset == "all" else (args.subset,)
    rows_out = []
    for name in subsets:
        ids = split.ids({"train": "train", "val": "val", "test": "test"}[name])
        if len(ids) == 0:
            continue
        rep = evaluate_rows(model, stats, table, table.rows_for_ids(ids))
        row = rep.row()
        if args.subset == "all":
            row["label"] = name
        rows_out.append(row)
    if not rows_out:
        raise CliError(f"split has no '{args.subset}' rows", EXIT_DATA)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out, rows_out)
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_experiment_config(args.config)
    table, sites = _load_points(args.points or cfg.points)
    field = _load_field(args.field or cfg.field_spec)
    vary: dict[str, list] = {}
    for spec in args.vary or []:
        if "=" not in spec:
            raise CliError(f"--vary expects key=v1,v2,... got {spec!r}", EXIT_CONFIG)
        key, _, values = spec.partition("=")
        vary[key.strip()] = [v.strip() for v in values.split(",") if v.strip()]
    out = _out_path(args.out)
    try:
        run_rows, agg_rows = run_sweep(cfg, table, sites, field, vary,
                                       all_partitions=args.all_partitions, out_dir=out)
    except NonFiniteGradientError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    print(f"{len(run_rows)} runs, {len(agg_rows)} aggregate rows written to {out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = _load_experiment_config(args.config)
    table, sites = _load_points(args.points or cfg.points)
    field = _load_field(args.field or cfg.field_spec)

    from .data import fit_normalization

    meta, arrays = _read_checkpoint(args.checkpoint)
    streams = make_seed_streams(cfg.seed)
    needs_field = cfg.regime in ("proxy-stacked", "trained-le-pcl", "proxy-pretrain")
    stats = fit_normalization(table, field if needs_field else None)
    model = build_model(cfg, table, field, stats, streams.init)
    try:
        restore_groups(model.parameter_groups(), arrays)
    except (KeyError, ValueError) as exc:
        raise CliError(f"checkpoint does not match config: {exc}", EXIT_DATA) from exc
    if model.loc_encoder is None:
        raise CliError(f"regime {cfg.regime!r} has no location encoder", EXIT_CONFIG)

    bounds = field.extent() if field is not None else table.bounding_box()
    try:
        t_days = [float(times.epoch_day(times.parse_date(v))) for v in args.times.split(",")]
    except ValueError as exc:
        raise CliError(f"--times expects ISO dates: {exc}", EXIT_CONFIG) from exc
    try:
        export = export_embedding_grid(model.loc_encoder, bounds, args.spacing, t_days)
    except (RegimeError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = _out_path(args.out)
    paths = write_embedding_csvs(export, out)
    print(f"embedding CSVs written to {out} "
          f"(grid {export.nx}x{export.ny}, {len(export.t_days)} times, "
          f"first-PC roughness {export.roughness:.4f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoproxy",
                                     description="Geographically conditioned regression "
                                                 "with proxy-consistent location encoders")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark world")
    p.add_argument("--config", help="world config INI ([world] section)")
    p.add_argument("--seed", type=int, help="override the world seed")
    p.add_argument("--out", default="world", help="output directory")
    p.add_argument("--print-default-config", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="write train/val/test split files")
    p.add_argument("--points", required=True)
    p.add_argument("--uar", action="store_true")
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--val-share", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkerboard", action="store_true")
    p.add_argument("--delta", type=float, default=5.0)
    p.add_argument("--offset", type=int, default=0, choices=(0, 1, 2, 3))
    p.add_argument("--swap", action="store_true")
    p.add_argument("--all-partitions", action="store_true")
    p.add_argument("--origin", help="grid anchor 'lon,lat' (default: data lower-left)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one experiment")
    p.add_argument("--config", help="experiment config INI")
    p.add_argument("--split", help="split file (default: built from config)")
    p.add_argument("--points", help="override data.points")
    p.add_argument("--field", help="override data.field_spec")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--print-default-config", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="resolved config of the run")
    p.add_argument("--split", required=True)
    p.add_argument("--points", help="override data.points")
    p.add_argument("--field", help="override data.field_spec")
    p.add_argument("--subset", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--out", required=True, help="metrics.csv path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of train+eval runs with aggregation")
    p.add_argument("--config", required=True)
    p.add_argument("--points", help="override data.points")
    p.add_argument("--field", help="override data.field_spec")
    p.add_argument("--vary", action="append",
                   help="key=v1,v2,... over rho|lambda|delta|seed|regime|mode")
    p.add_argument("--all-partitions", action="store_true",
                   help="replicate each checkerboard cell over all 8 partitions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("embed", help="export embedding grid CSVs for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--points", help="override data.points")
    p.add_argument("--field", help="override data.field_spec")
    p.add_argument("--spacing", type=float, default=0.25, help="grid spacing, degrees")
    p.add_argument("--times", required=True, help="comma-separated ISO dates")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not args.print_default_config and not args.config:
        parser.error("train requires --config (or --print-default-config)")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ExtentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteGradientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
