"""Observation/location fusion model with the proxy-consistency multi-task
loss.

The total loss is ``L = L_pred + proxy_weight * L_pc`` where L_pred is the
mean squared prediction error over the labeled batch and L_pc is the mean
(weighted) squared proxy reconstruction error over an independently sampled
proxy batch. L_pc reaches only the location encoder and the proxy head by
graph construction; L_pred reaches the observation encoder, the location
encoder, and the prediction head. The optimizer skips parameters without
gradients, so that routing is also a bit-exactness guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoders import FrozenEmbeddingTable, LocationTimeEncoder
from .nn import Mlp
from .optim import AdamW, ParameterGroup

REGIMES = (
    "obs-only",
    "proxy-stacked",
    "frozen-le",
    "trained-le",
    "trained-le-pcl",
    "proxy-pretrain",
)

GROUP_OBS = "obs_encoder"
GROUP_LOC = "loc_encoder"
GROUP_F = "fusion_head_f"
GROUP_G = "proxy_head_g"


class RegimeError(RuntimeError):
    """Operation not supported by the model's training regime."""


class RoutingError(AssertionError):
    """A gradient reached a parameter group the loss must not touch."""


@dataclass
class LossConfig:
    """proxy_weight is the overall multi-task weight; channel_weights the
    per-proxy-channel diagonal (length m)."""

    proxy_weight: float = 0.2
    channel_weights: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.proxy_weight < 0:
            raise ValueError(f"proxy weight must be >= 0, got {self.proxy_weight}")
        if any(w < 0 for w in self.channel_weights):
            raise ValueError(f"channel weights must be >= 0, got {self.channel_weights}")


@dataclass
class LossRecord:
    step: int
    total: float
    pred: float
    pc: float
    lr: float


class FusionModel:
    """One trainable model instance for a given regime.

    ``proxy_at`` (used only by the proxy-stacked regime) maps coordinate
    arrays to normalized proxy rows appended to the observation features.
    """

    def __init__(
        self,
        regime: str,
        obs_encoder: Mlp,
        head_f: Mlp,
        loc_encoder: LocationTimeEncoder | FrozenEmbeddingTable | None = None,
        head_g: Mlp | None = None,
        loss_cfg: LossConfig | None = None,
        proxy_at=None,
    ):
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        self.regime = regime
        self.obs_encoder = obs_encoder
        self.head_f = head_f
        self.loc_encoder = loc_encoder
        self.head_g = head_g
        self.loss_cfg = loss_cfg or LossConfig()
        self.proxy_at = proxy_at
        self._validate_wiring()
        self.groups = self._build_groups()

    def _validate_wiring(self) -> None:
        needs_loc = self.regime in ("frozen-le", "trained-le", "trained-le-pcl", "proxy-pretrain")
        if needs_loc and self.loc_encoder is None:
            raise ValueError(f"regime {self.regime!r} requires a location encoder")
        if not needs_loc and self.loc_encoder is not None:
            raise ValueError(f"regime {self.regime!r} must not have a location encoder")
        needs_g = self.regime in ("trained-le-pcl", "proxy-pretrain")
        if needs_g and self.head_g is None:
            raise ValueError(f"regime {self.regime!r} requires a proxy head")
        if self.regime == "proxy-stacked" and self.proxy_at is None:
            raise ValueError("proxy-stacked regime requires a proxy_at source")
        if self.regime == "frozen-le" and not isinstance(self.loc_encoder, FrozenEmbeddingTable):
            raise ValueError("frozen-le regime requires a FrozenEmbeddingTable")

    def _build_groups(self) -> dict[str, ParameterGroup]:
        groups = {
            GROUP_OBS: ParameterGroup(GROUP_OBS, self.obs_encoder.parameters()),
            GROUP_F: ParameterGroup(GROUP_F, self.head_f.parameters()),
        }
        if self.loc_encoder is not None and self.loc_encoder.parameters():
            trainable = self.regime in ("trained-le", "trained-le-pcl", "proxy-pretrain")
            g = ParameterGroup(GROUP_LOC, self.loc_encoder.parameters(), trainable=trainable)
            g.set_trainable(trainable)
            groups[GROUP_LOC] = g
        if self.head_g is not None:
            groups[GROUP_G] = ParameterGroup(GROUP_G, self.head_g.parameters())
        return groups

    def parameter_groups(self) -> list[ParameterGroup]:
        return list(self.groups.values())

    def trainable_groups(self) -> list[ParameterGroup]:
        return [g for g in self.groups.values() if g.trainable]

    def snapshot(self) -> dict[str, list[np.ndarray]]:
        return {name: g.snapshot() for name, g in self.groups.items()}

    def restore(self, snap: dict[str, list[np.ndarray]]) -> None:
        for name, arrays in snap.items():
            self.groups[name].restore(arrays)

    # --- forward paths -----------------------------------------------------

    def _obs_input(self, features: np.ndarray, lons, lats, t_days) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if self.regime == "proxy-stacked":
            z = self.proxy_at(lons, lats, t_days)
            if np.any(np.isnan(z)):
                z = np.where(np.isnan(z), 0.0, z)  # missing proxy -> train mean
            features = np.concatenate([features, z], axis=1)
        expected = self.obs_encoder.layers[0].weight.shape[0]
        if features.shape[1] != expected:
            raise ad.ShapeError(
                f"regime {self.regime!r}: observation input has {features.shape[1]} "
                f"columns, expected {expected}"
            )
        return features

    def _fused_tensor(self, features: np.ndarray, lons, lats, t_days) -> ad.Tensor:
        x = ad.constant(self._obs_input(features, lons, lats, t_days), name="obs_features")
        e_obs = self.obs_encoder(x)
        if self.loc_encoder is None:
            return e_obs
        e_loc = self.loc_encoder.embed_tensor(lons, lats, t_days)
        return ad.concat([e_obs, e_loc], axis=1)

    def predict_tensor(self, features, lons, lats, t_days) -> ad.Tensor:
        return self.head_f(self._fused_tensor(features, lons, lats, t_days))

    def predict(self, features, lons, lats, t_days) -> np.ndarray:
        """Normalized-space predictions, shape (n,); no tape is recorded."""
        x = self._obs_input(features, lons, lats, t_days)
        e_obs = self.obs_encoder.forward_array(x)
        if self.loc_encoder is not None:
            e_loc = self.loc_encoder.embed(lons, lats, t_days)
            e_obs = np.concatenate([e_obs, e_loc], axis=1)
        return self.head_f.forward_array(e_obs)[:, 0]

    def proxy_predict_tensor(self, lons, lats, t_days) -> ad.Tensor:
        if self.loc_encoder is None or self.head_g is None:
            raise RegimeError(f"regime {self.regime!r} has no proxy prediction path")
        return self.head_g(self.loc_encoder.embed_tensor(lons, lats, t_days))

    def proxy_predict(self, lons, lats, t_days) -> np.ndarray:
        if self.loc_encoder is None or self.head_g is None:
            raise RegimeError(f"regime {self.regime!r} has no proxy prediction path")
        return self.head_g.forward_array(self.loc_encoder.embed(lons, lats, t_days))

    # --- losses ------------------------------------------------------------

    def prediction_loss(self, features, y, lons, lats, t_days) -> ad.Tensor:
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        if not np.all(np.isfinite(y)):
            bad = int(np.argwhere(~np.isfinite(y))[0][0])
            raise ValueError(f"non-finite target at batch index {bad}")
        pred = self.predict_tensor(features, lons, lats, t_days)
        return ad.mean_squared_error(pred, ad.constant(y, name="y"))

    def proxy_consistency_loss(self, lons, lats, t_days, z) -> ad.Tensor:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        if not np.all(np.isfinite(z)):
            bad = int(np.argwhere(~np.isfinite(z))[0][0])
            raise ValueError(f"non-finite proxy target at batch index {bad}")
        weights = np.asarray(self.loss_cfg.channel_weights, dtype=np.float64)
        if z.shape[1] != weights.shape[0]:
            raise ad.ShapeError(
                f"proxy batch has {z.shape[1]} channels but channel_weights has {weights.shape[0]}"
            )
        z_hat = self.proxy_predict_tensor(lons, lats, t_days)
        sq = ad.square(ad.sub(z_hat, ad.constant(z, name="z")))
        weighted = ad.mul(sq, ad.constant(weights, name="channel_weights"))
        return ad.scale(ad.sum_all(weighted), 1.0 / z.shape[0])

    def loss_total(
        self,
        labeled: tuple,
        proxy: tuple | None,
        include_pred: bool = True,
        include_pc: bool = True,
    ) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        """Returns (L, L_pred, L_pc) with L = L_pred + proxy_weight * L_pc.

        ``labeled`` is (features, y, lons, lats, t_days); ``proxy`` is
        (lons, lats, t_days, z) and may be None/empty only when the proxy
        term is inactive (weight 0, no proxy head, or masked out).
        """
        lam = self.loss_cfg.proxy_weight
        pc_active = (
            include_pc and lam > 0.0 and self.head_g is not None and self.loc_encoder is not None
        )
        proxy_n = 0 if proxy is None else len(np.atleast_1d(proxy[0]))
        if pc_active and proxy_n == 0:
            raise ValueError("proxy batch is empty but the proxy loss is active")

        l_pred = self.prediction_loss(*labeled)
        if pc_active:
            l_pc = self.proxy_consistency_loss(*proxy)
        else:
            l_pc = ad.constant(0.0, name="pc_inactive")

        if include_pred and pc_active:
            total = ad.add(l_pred, ad.scale(l_pc, lam))
        elif include_pred:
            total = l_pred
        elif pc_active:
            total = ad.scale(l_pc, lam)
        else:
            raise ValueError("loss is empty: both terms masked or inactive")
        return total, l_pred, l_pc

    # --- training ----------------------------------------------------------

    def zero_grad(self) -> None:
        for g in self.groups.values():
            for t in g.tensors:
                t.grad = None

    def _assert_routing(self, include_pred: bool, pc_seen: bool) -> None:
        for name, group in self.groups.items():
            touched = any(t.grad is not None for t in group.tensors)
            if not group.trainable and touched:
                raise RoutingError(f"frozen group '{name}' received gradient")
            if name in (GROUP_OBS, GROUP_F) and not include_pred and touched:
                raise RoutingError(f"group '{name}' received gradient from the proxy loss")
            if name == GROUP_G and not pc_seen and touched:
                raise RoutingError("proxy head received gradient with the proxy loss inactive")

    def _pc_active(self, proxy, include_pc: bool) -> bool:
        if not include_pc or self.loss_cfg.proxy_weight <= 0.0:
            return False
        if self.head_g is None or self.loc_encoder is None:
            return False
        return proxy is not None and len(np.atleast_1d(proxy[0])) > 0

    def train_step(
        self,
        labeled: tuple,
        proxy: tuple | None,
        optimizer: AdamW,
        include_pred: bool = True,
        include_pc: bool = True,
    ) -> LossRecord:
        """One combined backward over L and one optimizer step."""
        self.zero_grad()
        pc_active = self._pc_active(proxy, include_pc)
        total, l_pred, l_pc = self.loss_total(labeled, proxy, include_pred, include_pc)
        ad.backward(total)
        self._assert_routing(include_pred, pc_active)
        optimizer.step()
        return LossRecord(
            step=optimizer.step_count,
            total=float(total.data),
            pred=float(l_pred.data),
            pc=float(l_pc.data),
            lr=optimizer.lr,
        )

    def pretrain_step(self, proxy: tuple, optimizer: AdamW) -> LossRecord:
        """Proxy-only step for the two-stage variant: trains the location
        encoder and proxy head on the unweighted proxy loss alone."""
        self.zero_grad()
        l_pc = self.proxy_consistency_loss(*proxy)
        ad.backward(l_pc)
        self._assert_routing(include_pred=False, pc_seen=True)
        optimizer.step()
        return LossRecord(
            step=optimizer.step_count,
            total=float(l_pc.data),
            pred=float("nan"),
            pc=float(l_pc.data),
            lr=optimizer.lr,
        )


def proxy_only_regression(
    z_train: np.ndarray,
    y_train: np.ndarray,
    z_test: np.ndarray,
    y_test: np.ndarray,
):
    """Ordinary least squares y = a.z + b fit on train, evaluated on test.

    Returns (MetricReport, coefficients a, intercept b, used_ridge). Singular
    normal equations fall back to a ridge penalty of 1e-8 (reported via the
    flag).
    """
    from .metrics import compute_metrics

    z_train = np.atleast_2d(np.asarray(z_train, dtype=np.float64))
    z_test = np.atleast_2d(np.asarray(z_test, dtype=np.float64))
    if z_train.shape[0] == 1 and len(y_train) > 1:
        z_train = z_train.T
    if z_test.shape[0] == 1 and len(y_test) > 1:
        z_test = z_test.T
    design = np.concatenate([z_train, np.ones((z_train.shape[0], 1))], axis=1)
    gram = design.T @ design
    rhs = design.T @ np.asarray(y_train, dtype=np.float64)
    used_ridge = False
    try:
        coef = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        used_ridge = True
        coef = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), rhs)
    a, b = coef[:-1], float(coef[-1])
    pred = z_test @ a + b
    report = compute_metrics(pred, y_test)
    return report, a, b, used_ridge
