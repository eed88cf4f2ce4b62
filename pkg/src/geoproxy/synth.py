"""Synthetic space-time regression world: a smooth seasonal latent field
observed at clustered stations through noisy nonlinear features, plus a
coarse gridded proxy that is a blurred, regionally biased, noisy view of the
same latent field. The generator keeps the closed form, so the bundled truth
oracle is exact (Gaussian bumps blur to Gaussian bumps).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import times
from .data import LabeledTable, ProxyField, SiteTable, build_site_table
from .encoders import day_of_year_angle


@dataclass
class WorldConfig:
    lon_min: float = -105.0
    lon_max: float = -85.0
    lat_min: float = 30.0
    lat_max: float = 50.0
    start_date: str = "2017-01-01"
    n_days: int = 730
    n_sites: int = 60
    samples_per_site: int = 120
    n_clusters: int = 8
    cluster_spread: float = 1.5         # degrees
    n_bumps: int = 25
    bump_width_min: float = 1.5         # degrees, bumps feeding the features
    bump_width_max: float = 3.5
    geo_width_min: float = 2.5          # degrees, medium location-only bumps
    geo_width_max: float = 4.0
    wide_width_min: float = 6.0         # degrees, broad location-only bumps
    wide_width_max: float = 10.0
    wide_share: float = 0.5             # fraction of location-only bumps that are broad
    feature_latent_share: float = 0.6   # fraction of bumps the features observe
    obs_variance_share: float = 0.45    # latent variance carried by feature-visible bumps
    med_variance_share: float = 0.25    # latent variance carried by medium bumps
    seasonal_amp: float = 0.6           # max per-bump seasonal modulation
    n_informative: int = 6
    n_noise_features: int = 4
    feature_noise: float = 0.5          # relative to each feature's spread
    station_noise: float = 0.15         # relative to the latent spread
    proxy_blur: float = 1.5             # Gaussian blur radius, degrees
    proxy_bias_amp: float = 0.8         # relative to the latent spread
    proxy_noise: float = 0.6            # relative to the latent spread
    proxy_cell: float = 0.5             # degrees
    n_aux_channels: int = 0
    seed: int = 0

    def validate(self) -> None:
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError("domain box is degenerate (min >= max)")
        if self.n_sites < 2:
            raise ValueError("n_sites must be at least 2")
        if self.n_informative + self.n_noise_features < 1:
            raise ValueError("need at least one observation feature")
        if self.n_days < 2 or self.samples_per_site < 1:
            raise ValueError("time axis or samples per site is degenerate")
        if not 0.0 <= self.feature_latent_share <= 1.0:
            raise ValueError("feature_latent_share must be in [0, 1]")
        if not (0.0 <= self.obs_variance_share and 0.0 <= self.med_variance_share
                and self.obs_variance_share + self.med_variance_share <= 1.0):
            raise ValueError("variance shares must be non-negative and sum to at most 1")

    def bounds(self) -> tuple[float, float, float, float]:
        return (self.lon_min, self.lon_max, self.lat_min, self.lat_max)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WorldConfig":
        return cls(**json.loads(text))

    def to_ini(self) -> str:
        lines = ["[world]"]
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ini(cls, text: str) -> "WorldConfig":
        import configparser

        parser = configparser.ConfigParser()
        parser.read_string(text)
        if "world" not in parser:
            raise ValueError("world config must have a [world] section")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in parser.items("world"):
            if key not in fields:
                raise ValueError(f"unknown world config key '{key}'")
            default = fields[key].default
            if isinstance(default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        return cls(**kwargs)


class TruthOracle:
    """Exact evaluation of the latent field and its blurred counterpart.

    The first ``n_observed`` bumps are the component the observation features
    see; the remainder is recoverable only through location (or the proxy).
    """

    def __init__(self, centers: np.ndarray, widths: np.ndarray, amps: np.ndarray,
                 seasonal: np.ndarray, phases: np.ndarray, n_observed: int | None = None):
        self.centers = centers     # (k, 2) lon/lat
        self.widths = widths       # (k,)
        self.amps = amps           # (k,)
        self.seasonal = seasonal   # (k,)
        self.phases = phases       # (k,)
        self.n_observed = len(amps) if n_observed is None else n_observed

    def _eval(self, lon, lat, t_days, widths: np.ndarray, amps: np.ndarray) -> np.ndarray:
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        t_days = np.atleast_1d(np.asarray(t_days, dtype=np.float64))
        d2 = (lon[:, None] - self.centers[None, :, 0]) ** 2 \
            + (lat[:, None] - self.centers[None, :, 1]) ** 2
        spatial = amps[None, :] * np.exp(-d2 / (2.0 * widths[None, :] ** 2))
        theta = day_of_year_angle(t_days)
        modulation = 1.0 + self.seasonal[None, :] * np.sin(theta[:, None] + self.phases[None, :])
        return np.sum(spatial * modulation, axis=1)

    def latent(self, lon, lat, t_days) -> np.ndarray:
        return self._eval(lon, lat, t_days, self.widths, self.amps)

    def observed_component(self, lon, lat, t_days) -> np.ndarray:
        masked = self.amps.copy()
        masked[self.n_observed:] = 0.0
        return self._eval(lon, lat, t_days, self.widths, masked)

    def blurred_latent(self, lon, lat, t_days, radius: float) -> np.ndarray:
        """Gaussian-blurred latent in closed form: each bump widens to
        sqrt(w^2 + radius^2) and its amplitude scales by w^2/(w^2 + radius^2)."""
        w2 = self.widths**2
        widened = np.sqrt(w2 + radius**2)
        scaled = self.amps * w2 / (w2 + radius**2)
        return self._eval(lon, lat, t_days, widened, scaled)


class BiasField:
    """Static additive distortion applied to the proxy.

    Constructed as amplitude errors aligned with the wide geographic bumps
    (the proxy systematically mis-scales, sometimes sign-flips, regional
    structure), so the proxy is wrong in ways that only label supervision
    can correct.
    """

    def __init__(self, centers: np.ndarray, widths: np.ndarray, amps: np.ndarray):
        self.centers = centers
        self.widths = widths
        self.amps = amps

    def __call__(self, lon, lat) -> np.ndarray:
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        d2 = (lon[:, None] - self.centers[None, :, 0]) ** 2 \
            + (lat[:, None] - self.centers[None, :, 1]) ** 2
        return np.sum(self.amps[None, :] * np.exp(-d2 / (2.0 * self.widths[None, :] ** 2)), axis=1)


FEATURE_TRANSFORMS = (
    ("identity", lambda v: v),
    ("tanh", np.tanh),
    ("square", lambda v: v * v),
    ("abs", np.abs),
    ("sin", np.sin),
    ("softplus", lambda v: np.logaddexp(0.0, v)),
)


@dataclass
class World:
    config: WorldConfig
    table: LabeledTable
    sites: SiteTable
    field: ProxyField
    oracle: TruthOracle
    bias: BiasField


def _place_sites(cfg: WorldConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Poisson cluster process: parents uniform, sites scattered around them."""
    parents_lon = rng.uniform(cfg.lon_min, cfg.lon_max, size=cfg.n_clusters)
    parents_lat = rng.uniform(cfg.lat_min, cfg.lat_max, size=cfg.n_clusters)
    lons = np.empty(cfg.n_sites)
    lats = np.empty(cfg.n_sites)
    for i in range(cfg.n_sites):
        p = int(rng.integers(cfg.n_clusters))
        while True:
            lon = parents_lon[p] + rng.normal(0.0, cfg.cluster_spread)
            lat = parents_lat[p] + rng.normal(0.0, cfg.cluster_spread)
            if cfg.lon_min <= lon <= cfg.lon_max and cfg.lat_min <= lat <= cfg.lat_max:
                lons[i], lats[i] = lon, lat
                break
    return lons, lats


def _substream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77, tag)))


def generate_world(cfg: WorldConfig) -> World:
    cfg.validate()
    # independent substreams per component, so tweaking one piece of the
    # design does not reshuffle the rest of the world
    r_latent = _substream(cfg.seed, 0)
    r_bias = _substream(cfg.seed, 1)
    r_sites = _substream(cfg.seed, 2)
    r_times = _substream(cfg.seed, 3)
    r_feats = _substream(cfg.seed, 4)
    r_proxy = _substream(cfg.seed, 5)

    # first n_obs bumps form the feature-visible component (narrower); the
    # rest is purely geographic structure in two scale classes: medium bumps
    # (below the site spacing, so proxy coverage is the only way to learn
    # them between sites) and broad bumps (smooth enough to extrapolate from
    # labels alone)
    n_obs = int(round(cfg.feature_latent_share * cfg.n_bumps))
    n_geo = cfg.n_bumps - n_obs
    n_wide = int(round(cfg.wide_share * n_geo))
    n_med = n_geo - n_wide
    centers = np.stack([
        r_latent.uniform(cfg.lon_min, cfg.lon_max, size=cfg.n_bumps),
        r_latent.uniform(cfg.lat_min, cfg.lat_max, size=cfg.n_bumps),
    ], axis=1)
    widths = np.concatenate([
        r_latent.uniform(cfg.bump_width_min, cfg.bump_width_max, size=n_obs),
        r_latent.uniform(cfg.geo_width_min, cfg.geo_width_max, size=n_med),
        r_latent.uniform(cfg.wide_width_min, cfg.wide_width_max, size=n_wide),
    ])
    amps = r_latent.uniform(-1.0, 1.0, size=cfg.n_bumps)
    seasonal = r_latent.uniform(0.0, cfg.seasonal_amp, size=cfg.n_bumps)
    phases = r_latent.uniform(0.0, 2.0 * np.pi, size=cfg.n_bumps)
    u = r_bias.uniform(0.8, 1.6, size=n_wide) * r_bias.choice([-1.0, 1.0], size=n_wide)

    site_lons, site_lats = _place_sites(cfg, r_sites)
    t0 = float(times.epoch_day(times.parse_date(cfg.start_date)))

    n = cfg.n_sites * cfg.samples_per_site
    site_idx = np.repeat(np.arange(cfg.n_sites), cfg.samples_per_site)
    sample_days = t0 + r_times.integers(0, cfg.n_days, size=n).astype(np.float64)
    sample_lons = site_lons[site_idx]
    sample_lats = site_lats[site_idx]

    # pin each bump class's variance share at the sampled points, so the
    # feature-visible / medium / broad composition of the target is a design
    # constant rather than a per-seed lottery
    shares = {
        "obs": (slice(0, n_obs), cfg.obs_variance_share),
        "med": (slice(n_obs, n_obs + n_med), cfg.med_variance_share),
        "wide": (slice(n_obs + n_med, cfg.n_bumps),
                 1.0 - cfg.obs_variance_share - cfg.med_variance_share),
    }
    probe = TruthOracle(centers, widths, amps, seasonal, phases)
    for class_slice, share in shares.values():
        if class_slice.stop == class_slice.start:
            continue
        masked = np.zeros_like(amps)
        masked[class_slice] = amps[class_slice]
        component = probe._eval(sample_lons, sample_lats, sample_days, widths, masked)
        spread = float(component.std())
        if spread > 0.0 and share > 0.0:
            amps[class_slice] *= np.sqrt(share) / spread
        elif share == 0.0:
            amps[class_slice] = 0.0

    oracle = TruthOracle(centers, widths, amps, seasonal, phases, n_observed=n_obs)

    box_w = cfg.lon_max - cfg.lon_min
    box_h = cfg.lat_max - cfg.lat_min
    # per-bump amplitude errors on the broad location-only bumps: each broad
    # bump appears in the proxy rescaled by (1 + u) with u of random sign
    # and magnitude 0.8..1.6, i.e. anywhere from sign-flipped to doubled.
    # The scrambling is not recoverable from the proxy itself; labels are
    # the only way to undo it. Medium bumps stay clean.
    wide_slice = slice(n_obs + n_med, cfg.n_bumps)
    bias = BiasField(
        centers=centers[wide_slice].copy(),
        widths=widths[wide_slice].copy(),
        amps=u * amps[wide_slice],
    )

    latent = oracle.latent(sample_lons, sample_lats, sample_days)
    latent_scale = float(latent.std())
    if latent_scale == 0.0:
        raise ValueError("degenerate world: latent field is constant at the stations")
    y = latent + r_feats.normal(0.0, cfg.station_noise * latent_scale, size=n)

    observed = oracle.observed_component(sample_lons, sample_lats, sample_days)
    obs_scale = float(observed.std()) or latent_scale
    p, q = cfg.n_informative, cfg.n_noise_features
    features = np.empty((n, p + q))
    names = []
    for i in range(p):
        tag, fn = FEATURE_TRANSFORMS[i % len(FEATURE_TRANSFORMS)]
        gain = r_feats.uniform(0.7, 1.3)
        raw = fn(gain * observed / obs_scale)
        spread = float(raw.std()) or 1.0
        features[:, i] = raw + r_feats.normal(0.0, cfg.feature_noise * spread, size=n)
        names.append(f"f_{tag}_{i + 1}")
    for j in range(q):
        features[:, p + j] = r_feats.normal(0.0, 1.0, size=n)
        names.append(f"f_noise_{j + 1}")

    # rasterize the proxy on the coarse grid
    nx = int(round(box_w / cfg.proxy_cell))
    ny = int(round(box_h / cfg.proxy_cell))
    cx = cfg.lon_min + (np.arange(nx) + 0.5) * cfg.proxy_cell
    cy = cfg.lat_min + (np.arange(ny) + 0.5) * cfg.proxy_cell
    glon, glat = np.meshgrid(cx, cy)
    flat_lon, flat_lat = glon.ravel(), glat.ravel()
    grid_days = t0 + np.arange(cfg.n_days, dtype=np.float64)

    channel_names = ["proxy"] + [f"aux_{i + 1}" for i in range(cfg.n_aux_channels)]
    values = np.empty((cfg.n_days, ny, nx, len(channel_names)))
    bias_grid = bias(flat_lon, flat_lat) * cfg.proxy_bias_amp
    for ti, day in enumerate(grid_days):
        base = oracle.blurred_latent(flat_lon, flat_lat, np.full(flat_lon.shape, day), cfg.proxy_blur)
        noisy = base + bias_grid + r_proxy.normal(0.0, cfg.proxy_noise * latent_scale, size=base.shape)
        values[ti, :, :, 0] = noisy.reshape(ny, nx)
        for c in range(cfg.n_aux_channels):
            # auxiliary channels: smooth companions of the latent with their
            # own gain and noise
            gain = 0.5 + 0.5 * (c + 1)
            aux = np.tanh(gain * base / latent_scale) \
                + r_proxy.normal(0.0, cfg.proxy_noise, size=base.shape)
            values[ti, :, :, c + 1] = aux.reshape(ny, nx)

    field = ProxyField(
        channel_names=channel_names,
        lon0=cfg.lon_min, lat0=cfg.lat_min, cell_size=cfg.proxy_cell,
        nx=nx, ny=ny, t0=t0, t_step=1.0, values=values,
    )

    sites, site_ids = build_site_table(sample_lons, sample_lats)
    table = LabeledTable(
        ids=np.arange(n, dtype=np.int64),
        site_ids=site_ids,
        lons=sample_lons,
        lats=sample_lats,
        t_days=sample_days,
        features=features,
        y=y,
        feature_names=names,
    )
    return World(config=cfg, table=table, sites=sites, field=field, oracle=oracle, bias=bias)


def autocorrelation_length(oracle: TruthOracle, bounds, t_day: float, seed: int = 0) -> float:
    """e-folding distance of the latent field's spatial correlogram."""
    rng = np.random.default_rng(seed)
    lon0, lon1, lat0, lat1 = bounds
    n = 400
    lons = rng.uniform(lon0, lon1, size=n)
    lats = rng.uniform(lat0, lat1, size=n)
    vals = oracle.latent(lons, lats, np.full(n, t_day))
    vals = vals - vals.mean()
    var = float(np.mean(vals * vals))
    if var == 0.0:
        return 0.0
    dist = np.sqrt((lons[:, None] - lons[None, :]) ** 2 + (lats[:, None] - lats[None, :]) ** 2)
    prod = vals[:, None] * vals[None, :]
    iu = np.triu_indices(n, k=1)
    dist, prod = dist[iu], prod[iu]
    edges = np.arange(0.0, min(lon1 - lon0, lat1 - lat0), 0.5)
    target = var / np.e
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (dist >= lo) & (dist < hi)
        if mask.sum() and float(prod[mask].mean()) < target:
            return float((lo + hi) / 2.0)
    return float(edges[-1])


def world_report(world: World) -> dict:
    """Summary statistics plus the proxy-only regression baseline."""
    from .model import proxy_only_regression
    from .splits import TEST, TRAIN, uar_site_split

    table, field = world.table, world.field
    z = field.sample(table.lons, table.lats, table.t_days)
    corr = float(np.corrcoef(z[:, 0], table.y)[0, 1])

    split = uar_site_split(world.sites, table, 0.5, seed=world.config.seed)
    tr = table.rows_for_ids(split.ids(TRAIN))
    te = table.rows_for_ids(split.ids(TEST))
    report, _, _, used_ridge = proxy_only_regression(z[tr], table.y[tr], z[te], table.y[te])

    return {
        "n_sites": len(world.sites),
        "n_samples": len(table),
        "proxy_target_correlation": corr,
        "proxy_only_r2": report.r2,
        "proxy_only_used_ridge": used_ridge,
        "autocorrelation_length_deg": autocorrelation_length(
            world.oracle, world.config.bounds(), table.t_days.min(), seed=world.config.seed
        ),
    }
