"""scikit-learn estimator API over the fusion training stack.

Design matrices put coordinates first: ``X[:, 0]`` longitude (degrees),
``X[:, 1]`` latitude (degrees), ``X[:, 2]`` time (days since 1970-01-01),
and ``X[:, 3:]`` the observation features. This keeps the geographic
conditioning composable with ordinary sklearn pipelines and model selection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import times
from .config import ExperimentConfig
from .data import ColumnStats, LabeledTable, ProxyField, SiteTable, build_site_table, load_field
from .encoders import LocationTimeEncoder
from .nn import Mlp
from .optim import AdamW, ParameterGroup, PlateauStopState, plateau_and_early_stop
from .splits import (
    TRAIN,
    ProxyBatchSampler,
    SamplerConfig,
    SplitAssignment,
    make_seed_streams,
    named_stream,
)
from .training import run_experiment
from .validation import COORD_COLUMNS, check_coordinate_matrix, check_target


def _table_from_xy(X: np.ndarray, y: np.ndarray) -> tuple[LabeledTable, SiteTable]:
    sites, site_ids = build_site_table(X[:, 0], X[:, 1])
    table = LabeledTable(
        ids=np.arange(len(X), dtype=np.int64),
        site_ids=site_ids,
        lons=X[:, 0].copy(),
        lats=X[:, 1].copy(),
        t_days=X[:, 2].copy(),
        features=X[:, COORD_COLUMNS:].copy(),
        y=np.asarray(y, dtype=np.float64).copy(),
    )
    return table, sites


class ProxyConsistentRegressor(RegressorMixin, BaseEstimator):
    """Location-conditioned regressor trained with a proxy-consistency task.

    Parameters mirror the experiment configuration; ``proxy_field`` is a
    ``ProxyField`` (or a path to a ``.spec`` sidecar) sampled during training
    as the auxiliary reconstruction target. Regimes that do not consume a
    proxy (``obs-only``, ``trained-le``, ``frozen-le``) ignore it.
    """

    def __init__(
        self,
        regime: str = "trained-le-pcl",
        proxy_field: ProxyField | str | None = None,
        proxy_weight: float = 0.2,
        proxy_ratio: float = 16.0,
        sampler_mode: str = "random-only",
        channel_weights: tuple = (1.0,),
        batch_size: int = 256,
        epochs: int = 40,
        pretrain_epochs: int = 50,
        learning_rate: float = 3e-4,
        clip_norm: float = 1.0,
        weight_decay: float = 0.01,
        obs_embed_dim: int = 32,
        obs_widths: tuple = (64, 64),
        loc_embed_dim: int = 64,
        rff_per_level: int = 32,
        rff_sigmas: tuple = (1.0, 4.0, 16.0, 64.0),
        trunk_widths: tuple = (128, 128),
        head_widths: tuple = (64, 64),
        temporal: str = "day-of-year",
        validation_share: float = 0.1,
        frozen_table: str = "",
        random_state: int = 0,
    ):
        self.regime = regime
        self.proxy_field = proxy_field
        self.proxy_weight = proxy_weight
        self.proxy_ratio = proxy_ratio
        self.sampler_mode = sampler_mode
        self.channel_weights = channel_weights
        self.batch_size = batch_size
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.weight_decay = weight_decay
        self.obs_embed_dim = obs_embed_dim
        self.obs_widths = obs_widths
        self.loc_embed_dim = loc_embed_dim
        self.rff_per_level = rff_per_level
        self.rff_sigmas = rff_sigmas
        self.trunk_widths = trunk_widths
        self.head_widths = head_widths
        self.temporal = temporal
        self.validation_share = validation_share
        self.frozen_table = frozen_table
        self.random_state = random_state

    def _experiment_config(self) -> ExperimentConfig:
        cfg = ExperimentConfig(
            regime=self.regime,
            seed=self.random_state,
            frozen_table=self.frozen_table,
            obs_embed_dim=self.obs_embed_dim,
            obs_widths=tuple(self.obs_widths),
            loc_embed_dim=self.loc_embed_dim,
            rff_per_level=self.rff_per_level,
            rff_sigmas=tuple(self.rff_sigmas),
            trunk_widths=tuple(self.trunk_widths),
            head_widths=tuple(self.head_widths),
            temporal=self.temporal,
            proxy_weight=self.proxy_weight,
            channel_weights=tuple(self.channel_weights),
            batch_size=self.batch_size,
            rho=self.proxy_ratio,
            sampler_mode=self.sampler_mode,
            val_share=self.validation_share,
            learning_rate=self.learning_rate,
            clip_norm=self.clip_norm,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            pretrain_epochs=self.pretrain_epochs,
        )
        cfg.validate()
        return cfg

    def _resolve_field(self) -> ProxyField | None:
        if self.proxy_field is None:
            return None
        if isinstance(self.proxy_field, ProxyField):
            return self.proxy_field
        return load_field(self.proxy_field)

    def fit(self, X, y):
        X = check_coordinate_matrix(X, min_features=COORD_COLUMNS + 1)
        y = check_target(y, len(X))
        table, sites = _table_from_xy(X, y)
        cfg = self._experiment_config()

        # every sample trains; the runner carves the validation share
        split = SplitAssignment(
            assignment={int(i): TRAIN for i in table.ids}, header={"protocol": "all-train"}
        )
        result = run_experiment(cfg, table, sites, self._resolve_field(), split=split)
        self.result_ = result
        self.model_ = result.model
        self.stats_ = result.stats
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_coordinate_matrix(X, min_features=COORD_COLUMNS + 1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features; expected {self.n_features_in_}")
        xn = self.stats_.features.apply(X[:, COORD_COLUMNS:])
        pred_n = self.model_.predict(xn, X[:, 0], X[:, 1], X[:, 2])
        return self.stats_.target.invert(pred_n[:, None])[:, 0]


class LocationEmbeddingTransformer(TransformerMixin, BaseEstimator):
    """Pretrains a location-time encoder on the proxy field alone (the
    two-stage pretraining task), then transforms coordinate rows
    (lon, lat, day) into frozen embeddings."""

    def __init__(
        self,
        proxy_field: ProxyField | str | None = None,
        loc_embed_dim: int = 64,
        rff_per_level: int = 32,
        rff_sigmas: tuple = (1.0, 4.0, 16.0, 64.0),
        trunk_widths: tuple = (128, 128),
        head_widths: tuple = (64, 64),
        temporal: str = "day-of-year",
        epochs: int = 20,
        steps_per_epoch: int = 8,
        batch_size: int = 256,
        proxy_ratio: float = 4.0,
        learning_rate: float = 3e-4,
        clip_norm: float = 1.0,
        weight_decay: float = 0.01,
        random_state: int = 0,
    ):
        self.proxy_field = proxy_field
        self.loc_embed_dim = loc_embed_dim
        self.rff_per_level = rff_per_level
        self.rff_sigmas = rff_sigmas
        self.trunk_widths = trunk_widths
        self.head_widths = head_widths
        self.temporal = temporal
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.proxy_ratio = proxy_ratio
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.proxy_field is None:
            raise ValueError("LocationEmbeddingTransformer requires proxy_field")
        X = check_coordinate_matrix(X)
        field = self.proxy_field
        if not isinstance(field, ProxyField):
            field = load_field(field)

        streams = make_seed_streams(self.random_state)
        years = times.year_of(X[:, 2])
        encoder = LocationTimeEncoder(
            streams.init,
            out_dim=self.loc_embed_dim,
            sigmas=self.rff_sigmas,
            per_level=self.rff_per_level,
            trunk_widths=self.trunk_widths,
            temporal=self.temporal,
            year_span=(int(years.min()), int(years.max())),
            domain_bounds=field.extent(),
        )
        head_g = Mlp(self.loc_embed_dim, list(self.head_widths), field.n_channels,
                     streams.init, name="head_g")
        groups = [
            ParameterGroup("loc_encoder", encoder.parameters()),
            ParameterGroup("proxy_head_g", head_g.parameters()),
        ]
        optimizer = AdamW(groups, lr=self.learning_rate,
                          weight_decay=self.weight_decay, clip_norm=self.clip_norm)
        sched = PlateauStopState(lr=self.learning_rate)
        sampler = ProxyBatchSampler(
            bounds=field.extent(), time_span=field.time_span(),
            cfg=SamplerConfig(batch_size=self.batch_size, rho=self.proxy_ratio,
                              mode="random-only", seed=self.random_state),
            rng=named_stream(self.random_state, "proxy-sampler"),
            field=field,
        )
        flat = field.values.reshape(-1, field.n_channels)
        mean, std = [], []
        for c in range(field.n_channels):
            col = flat[flat[:, c] != field.missing_value, c]
            mean.append(col.mean())
            std.append(col.std())
        stats = ColumnStats(mean=np.array(mean), std=np.array(std))

        def draw():
            plon, plat, pt = sampler.sample(None)
            if len(plon) == 0:
                return None
            z = stats.apply(field.sample(plon, plat, pt))
            ok = ~np.any(np.isnan(z), axis=1)
            return plon[ok], plat[ok], pt[ok], z[ok]

        held_out = draw()
        for _ in range(self.epochs):
            sampler.start_epoch()
            for _ in range(self.steps_per_epoch):
                batch = draw()
                if batch is None or len(batch[0]) == 0:
                    continue
                plon, plat, pt, z = batch
                optimizer.zero_grad()
                loss = ad.mean_squared_error(
                    head_g(encoder.embed_tensor(plon, plat, pt)), ad.constant(z)
                )
                ad.backward(loss)
                optimizer.step()
            if held_out is None:
                continue
            vlon, vlat, vt, vz = held_out
            resid = head_g.forward_array(encoder.embed(vlon, vlat, vt)) - vz
            lr, stop = plateau_and_early_stop(sched, float(np.mean(resid * resid)))
            optimizer.lr = lr
            if stop:
                break
        for t in encoder.parameters():
            t.requires_grad = False
        self.encoder_ = encoder
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        X = check_coordinate_matrix(X)
        return self.encoder_.embed(X[:, 0], X[:, 1], X[:, 2])
