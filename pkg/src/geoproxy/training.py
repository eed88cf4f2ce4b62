"""End-to-end experiment runner: builds the model for a regime, trains it
with plateau scheduling and early stopping, restores the best validation
snapshot, and evaluates train/val/test in original units.

Per-run artifacts (when an output directory is given): the exact resolved
config, the split, a per-step loss log, the parameter checkpoint (header
records seed and config hash), and metrics.csv.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_hash, save_config
from .data import LabeledTable, NormalizationStats, ProxyField, SiteTable, fit_normalization
from .encoders import FrozenEmbeddingTable, LocationTimeEncoder
from .metrics import MetricReport, aggregate, compute_metrics, write_metrics_csv
from .model import FusionModel, LossConfig
from .nn import Mlp
from .optim import AdamW, ParameterGroup, PlateauStopState, plateau_and_early_stop, save_checkpoint
from .splits import (
    TEST,
    TRAIN,
    VAL,
    CheckerboardConfig,
    ProxyBatchSampler,
    SamplerConfig,
    SplitAssignment,
    carve_validation,
    checkerboard_split,
    enumerate_checkerboard_partitions,
    make_seed_streams,
    named_stream,
    uar_site_split,
)
from . import times


@dataclass
class RunResult:
    config: ExperimentConfig
    model: FusionModel
    stats: NormalizationStats
    reports: dict[str, MetricReport]
    epochs_run: int
    pretrain_epochs_run: int
    history: list[dict] = dc_field(default_factory=list)

    @property
    def encoder(self):
        return self.model.loc_encoder


class RunLog:
    """Per-step loss stream: ``step,L,L_pred,L_pc,lr`` lines plus stage markers."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w") as fh:
                fh.write("step,L,L_pred,L_pc,lr\n")

    def stage(self, name: str) -> None:
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(f"# stage={name}\n")

    def record(self, rec) -> None:
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(f"{rec.step},{rec.total!r},{rec.pred!r},{rec.pc!r},{rec.lr!r}\n")


def _regime_uses_proxy(regime: str) -> bool:
    return regime in ("proxy-stacked", "trained-le-pcl", "proxy-pretrain")


def _regime_has_loc(regime: str) -> bool:
    return regime in ("frozen-le", "trained-le", "trained-le-pcl", "proxy-pretrain")


def encoder_domain(table: LabeledTable, field_: ProxyField | None) -> tuple[float, float, float, float]:
    if field_ is not None:
        return field_.extent()
    lon0, lon1, lat0, lat1 = table.bounding_box()
    pad = 1e-6  # avoid a degenerate box when all points share an axis value
    return (lon0 - pad, lon1 + pad, lat0 - pad, lat1 + pad)


def build_model(
    cfg: ExperimentConfig,
    table: LabeledTable,
    field_: ProxyField | None,
    stats: NormalizationStats,
    init_rng: np.random.Generator,
) -> FusionModel:
    """Construct the regime's model; initialization draws happen in a fixed
    order (observation encoder, location encoder, head f, head g) so regimes
    sharing a prefix of that order start from identical weights."""
    n_channels = field_.n_channels if field_ is not None else 0
    feature_dim = table.features.shape[1]
    if cfg.regime == "proxy-stacked":
        feature_dim += n_channels

    obs = Mlp(feature_dim, list(cfg.obs_widths), cfg.obs_embed_dim, init_rng, name="obs")

    loc = None
    if cfg.regime == "frozen-le":
        loc = FrozenEmbeddingTable.load(cfg.frozen_table)
    elif _regime_has_loc(cfg.regime):
        years = times.year_of(table.t_days)
        loc = LocationTimeEncoder(
            init_rng,
            out_dim=cfg.loc_embed_dim,
            sigmas=cfg.rff_sigmas,
            per_level=cfg.rff_per_level,
            trunk_widths=cfg.trunk_widths,
            temporal=cfg.temporal,
            time_per_level=cfg.time_per_level,
            time_sigma=cfg.time_sigma,
            year_span=(int(years.min()), int(years.max())),
            domain_bounds=encoder_domain(table, field_),
        )

    f_in = cfg.obs_embed_dim + (loc.out_dim if loc is not None else 0)
    head_f = Mlp(f_in, list(cfg.head_widths), 1, init_rng, name="head_f")

    head_g = None
    if cfg.regime in ("trained-le-pcl", "proxy-pretrain"):
        if field_ is None:
            raise ValueError(f"regime {cfg.regime!r} requires a proxy field")
        head_g = Mlp(loc.out_dim, list(cfg.head_widths), n_channels, init_rng, name="head_g")

    weights = cfg.channel_weights
    if n_channels and len(weights) == 1 and n_channels > 1:
        weights = tuple([weights[0]] * n_channels)
    if head_g is not None and len(weights) != n_channels:
        raise ValueError(
            f"channel_weights has {len(weights)} entries but the proxy field has {n_channels} channels"
        )

    proxy_at = None
    if cfg.regime == "proxy-stacked":
        def proxy_at(lons, lats, t_days):
            return stats.proxy.apply(field_.sample(lons, lats, t_days))

    return FusionModel(
        regime=cfg.regime,
        obs_encoder=obs,
        head_f=head_f,
        loc_encoder=loc,
        head_g=head_g,
        loss_cfg=LossConfig(proxy_weight=cfg.proxy_weight, channel_weights=weights),
        proxy_at=proxy_at,
    )


def make_split(cfg: ExperimentConfig, table: LabeledTable, sites: SiteTable) -> SplitAssignment:
    """Build the configured split (validation carved per val_share)."""
    streams = make_seed_streams(cfg.seed)
    if cfg.split_protocol == "uar":
        return uar_site_split(sites, table, cfg.split_fraction, streams.split, val_share=cfg.val_share)
    lon0, _, lat0, _ = table.bounding_box()
    ck = CheckerboardConfig(delta=cfg.split_delta, origin=(lon0, lat0),
                            offset=cfg.split_offset, swap=cfg.split_swap)
    split = checkerboard_split(table, ck)
    if cfg.val_share > 0:
        split = carve_validation(split, cfg.val_share, streams.split, table=table)
    return split


def _predict_original_units(model, stats, table, rows) -> np.ndarray:
    xn = stats.features.apply(table.features[rows])
    yhat_n = model.predict(xn, table.lons[rows], table.lats[rows], table.t_days[rows])
    return stats.target.invert(yhat_n[:, None])[:, 0]


def evaluate_rows(model, stats, table, rows) -> MetricReport:
    return compute_metrics(_predict_original_units(model, stats, table, rows), table.y[rows])


def _val_mse(model, stats, table, rows) -> float:
    xn = stats.features.apply(table.features[rows])
    yn = stats.target.apply(table.y[rows, None])[:, 0]
    pred = model.predict(xn, table.lons[rows], table.lats[rows], table.t_days[rows])
    return float(np.mean((pred - yn) ** 2))


def run_experiment(
    cfg: ExperimentConfig,
    table: LabeledTable,
    sites: SiteTable,
    field_: ProxyField | None,
    split: SplitAssignment | None = None,
    out_dir=None,
) -> RunResult:
    cfg.validate()
    streams = make_seed_streams(cfg.seed)
    proxy_rng = named_stream(cfg.seed, "proxy-sampler")

    if split is None:
        split = make_split(cfg, table, sites)
    if cfg.val_share > 0 and len(split.ids(VAL)) == 0:
        split = carve_validation(split, cfg.val_share, streams.split, table=table)

    train_rows = table.rows_for_ids(split.ids(TRAIN))
    val_rows = table.rows_for_ids(split.ids(VAL))
    test_rows = table.rows_for_ids(split.ids(TEST))
    if len(train_rows) == 0:
        raise ValueError("split has no training samples")
    metric_rows = val_rows if len(val_rows) else train_rows

    needs_field = _regime_uses_proxy(cfg.regime)
    if needs_field and field_ is None:
        raise ValueError(f"regime {cfg.regime!r} requires a proxy field")
    stats = fit_normalization(table.subset(train_rows), field_ if needs_field else None)

    model = build_model(cfg, table, field_, stats, streams.init)

    xn = stats.features.apply(table.features)
    yn = stats.target.apply(table.y[:, None])[:, 0]

    sampler = None
    if field_ is not None and cfg.regime in ("trained-le-pcl", "proxy-pretrain"):
        sampler = ProxyBatchSampler(
            bounds=field_.extent(),
            time_span=field_.time_span(),
            cfg=SamplerConfig(batch_size=cfg.batch_size, rho=cfg.rho,
                              mode=cfg.sampler_mode, seed=cfg.seed),
            rng=proxy_rng,
            field=field_,
        )

    out_dir = Path(out_dir) if out_dir else None
    log = RunLog(out_dir / "runlog.csv" if out_dir else None)

    pretrain_epochs_run = 0
    if cfg.regime == "proxy-pretrain":
        pretrain_epochs_run = _pretrain_stage(cfg, model, sampler, table, train_rows, stats, log)
        model.groups["loc_encoder"].set_trainable(False)

    epochs_run = _main_stage(
        cfg, model, sampler, table, xn, yn, train_rows, metric_rows, stats, log, streams
    )

    reports = {"train": evaluate_rows(model, stats, table, train_rows)}
    if len(val_rows):
        reports["val"] = evaluate_rows(model, stats, table, val_rows)
    if len(test_rows):
        reports["test"] = evaluate_rows(model, stats, table, test_rows)

    result = RunResult(
        config=cfg, model=model, stats=stats, reports=reports,
        epochs_run=epochs_run, pretrain_epochs_run=pretrain_epochs_run,
    )
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(out_dir / "config.ini", cfg)
        split.save(out_dir / "split.csv")
        save_checkpoint(out_dir / "checkpoint.bin", model.parameter_groups(),
                        seed=cfg.seed, cfg_hash=config_hash(cfg))
        write_metrics_csv(out_dir / "metrics.csv",
                          [dict(label=k, **r.row()) for k, r in reports.items()])
    return result


def _batch_view(table: LabeledTable, rows: np.ndarray) -> LabeledTable:
    return table.subset(rows)


def _sample_proxy_targets(sampler, field_, stats, batch_table):
    """Draw one proxy batch and its normalized targets; drops missing rows."""
    plon, plat, pt = sampler.sample(batch_table)
    if len(plon) == 0:
        return None
    z = field_.sample(plon, plat, pt)
    ok = ~np.any(np.isnan(z), axis=1)
    if not np.all(ok):
        plon, plat, pt, z = plon[ok], plat[ok], pt[ok], z[ok]
    if len(plon) == 0:
        return None
    return plon, plat, pt, stats.proxy.apply(z)


def _pretrain_stage(cfg, model, sampler, table, train_rows, stats, log) -> int:
    """Stage 1 of the two-stage variant: location encoder + proxy head only."""
    log.stage("pretrain")
    optimizer = AdamW(model.parameter_groups(), lr=cfg.learning_rate,
                      weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    sched = PlateauStopState(lr=cfg.learning_rate, factor=cfg.plateau_factor,
                             patience=cfg.plateau_patience, min_delta=cfg.plateau_min_delta,
                             stop_patience=cfg.stop_patience)
    steps_per_epoch = max(1, int(np.ceil(len(train_rows) / cfg.batch_size)))

    # fixed held-out proxy batch for scheduling decisions
    val_batch = _sample_proxy_targets(sampler, sampler.field, stats,
                                      _batch_view(table, train_rows[: cfg.batch_size]))
    best = float("inf")
    best_snap = model.snapshot()
    epochs_run = 0
    for _ in range(cfg.pretrain_epochs):
        epochs_run += 1
        sampler.start_epoch()
        for _ in range(steps_per_epoch):
            proxy = _sample_proxy_targets(sampler, sampler.field, stats,
                                          _batch_view(table, train_rows[: cfg.batch_size]))
            if proxy is None:
                continue
            rec = model.pretrain_step(proxy, optimizer)
            log.record(rec)
        if val_batch is None:
            continue
        plon, plat, pt, z = val_batch
        resid = model.proxy_predict(plon, plat, pt) - z
        weights = np.asarray(model.loss_cfg.channel_weights)
        val = float(np.mean(np.sum(resid * resid * weights, axis=1)))
        lr, stop = plateau_and_early_stop(sched, val)
        optimizer.lr = lr
        if val < best:
            best = val
            best_snap = model.snapshot()
        if stop:
            break
    model.restore(best_snap)
    return epochs_run


def _main_stage(cfg, model, sampler, table, xn, yn, train_rows, metric_rows, stats, log, streams) -> int:
    log.stage("main")
    optimizer = AdamW(model.parameter_groups(), lr=cfg.learning_rate,
                      weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    sched = PlateauStopState(lr=cfg.learning_rate, factor=cfg.plateau_factor,
                             patience=cfg.plateau_patience, min_delta=cfg.plateau_min_delta,
                             stop_patience=cfg.stop_patience)
    shuffle_rng = streams.sampler
    pcl_in_main = (
        cfg.regime == "trained-le-pcl" and model.head_g is not None and sampler is not None
    )

    def val_metric():
        xv = xn[metric_rows]
        pred = model.predict(xv, table.lons[metric_rows], table.lats[metric_rows],
                             table.t_days[metric_rows])
        return float(np.mean((pred - yn[metric_rows]) ** 2))

    best = float("inf")
    best_snap = model.snapshot()
    epochs_run = 0
    for _ in range(cfg.epochs):
        epochs_run += 1
        order = shuffle_rng.permutation(train_rows)
        if sampler is not None:
            sampler.start_epoch()
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            labeled = (xn[rows], yn[rows], table.lons[rows], table.lats[rows], table.t_days[rows])
            proxy = None
            if pcl_in_main:
                proxy = _sample_proxy_targets(sampler, sampler.field, stats, _batch_view(table, rows))
            include_pc = proxy is not None and model.loss_cfg.proxy_weight > 0
            rec = model.train_step(labeled, proxy, optimizer, include_pc=include_pc)
            log.record(rec)
        val = val_metric()
        lr, stop = plateau_and_early_stop(sched, val)
        optimizer.lr = lr
        if val < best:
            best = val
            best_snap = model.snapshot()
        if stop:
            break
    model.restore(best_snap)
    return epochs_run


# --- sweeps -------------------------------------------------------------------

SWEEP_KEYS = {
    "rho": "rho",
    "lambda": "proxy_weight",
    "delta": "split_delta",
    "seed": "seed",
    "regime": "regime",
    "mode": "sampler_mode",
}


def run_sweep(
    base: ExperimentConfig,
    table: LabeledTable,
    sites: SiteTable,
    field_: ProxyField | None,
    vary: dict[str, list],
    all_partitions: bool = False,
    out_dir=None,
) -> tuple[list[dict], list[dict]]:
    """Cartesian product over the varied keys; seeds (and checkerboard
    partitions under ``all_partitions``) are replicates aggregated per cell.

    Returns (per-run rows, aggregate rows); also writes metrics.csv and
    aggregate.csv when ``out_dir`` is set.
    """
    unknown = set(vary) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unknown sweep keys {sorted(unknown)}; valid keys: {sorted(SWEEP_KEYS)}")
    cell_keys = [k for k in vary if k != "seed"]
    seeds = [int(s) for s in vary.get("seed", [base.seed])]

    run_rows: list[dict] = []
    agg_rows: list[dict] = []
    combos = itertools.product(*[vary[k] for k in cell_keys]) if cell_keys else [()]
    for combo in combos:
        cell = dict(zip(cell_keys, combo))
        cfg_cell = base
        for key, value in cell.items():
            cfg_cell = _with_key(cfg_cell, key, value)
        reports = []
        labels = []
        for seed in seeds:
            cfg_run = _with_key(cfg_cell, "seed", seed)
            partitions = [None]
            if cfg_run.split_protocol == "checkerboard" and all_partitions:
                lon0, _, lat0, _ = table.bounding_box()
                partitions = enumerate_checkerboard_partitions(cfg_run.split_delta, (lon0, lat0))
            for pi, part in enumerate(partitions):
                if part is None:
                    cfg_final = cfg_run
                    split = None
                else:
                    cfg_final = _with_key(_with_key(cfg_run, "offset", part.offset),
                                          "swap", part.swap)
                    split = checkerboard_split(table, part)
                label = "/".join([f"{k}={v}" for k, v in cell.items()]
                                 + [f"seed={seed}"]
                                 + ([f"partition={pi}"] if part is not None else []))
                result = run_experiment(cfg_final, table, sites, field_, split=split)
                report = result.reports.get("test") or result.reports["train"]
                reports.append(report)
                labels.append(label)
                run_rows.append(dict(label=label, **report.row()))
        agg = aggregate(reports, labels)
        row = {"cell": ";".join(f"{k}={v}" for k, v in cell.items()) or "base",
               "n_runs": agg.n_runs}
        for key in ("R2", "RMSE", "MAE", "MBE"):
            if key in agg.mean:
                row[f"{key}_mean"] = repr(agg.mean[key])
                row[f"{key}_se"] = repr(agg.se[key]) if agg.se else ""
        agg_rows.append(row)

    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / "metrics.csv", run_rows)
        _write_dict_csv(out_dir / "aggregate.csv", agg_rows)
    return run_rows, agg_rows


def _with_key(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    import dataclasses

    if key in SWEEP_KEYS:
        field_name = SWEEP_KEYS[key]
    elif key in ("offset", "swap"):
        field_name = f"split_{key}"
    else:
        field_name = key
    current = getattr(cfg, field_name)
    if isinstance(current, bool):
        value = bool(value) if not isinstance(value, str) else value.lower() in ("1", "true")
    elif isinstance(current, int) and not isinstance(current, bool):
        value = int(value)
    elif isinstance(current, float):
        value = float(value)
    return dataclasses.replace(cfg, **{field_name: value})


def _write_dict_csv(path, rows: list[dict]) -> None:
    import csv

    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
